"""Pick-and-displace episode mechanics.

An episode state owns the agent's true pose, a dead-reckoned pose, a
one-axis-at-a-time arm, and the current positions of all movable boxes.
`step` applies one discrete action with optional motion noise, resolves
collisions and pushes, handles magnetic pickup on touch, and reports
what happened as a `StepEvents` record.  `compute_reward` maps an events
record to a scalar; it is pure so it can be checked against an
independent component sum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from statistics import fmean

import numpy as np

from .errors import EpisodeDoneError, InvalidActionError
from .geometry import Point3, Pose, compose, transform_point
from .odometry import (
    DeadReckonState,
    MotionCommand,
    MotionNoiseSpec,
    dead_reckon,
    motion_delta,
    perturb_motion,
)
from .scene import (
    AGENT_HEIGHT,
    AGENT_RADIUS,
    Box,
    Scene,
    TaskConfig,
    boxes_overlap,
    cylinder_intersects_box,
)

BODY_STEP = 0.2
TURN_STEP = math.pi / 4
ARM_STEP = 0.05
MAX_STEPS = 200

TOUCH_TOLERANCE = 0.03
SUCCESS_RADIUS = 0.20
DISTURB_LIMIT = 0.01

# Gripper workspace, relative to the arm base point on the body axis.
GRIPPER_X_RANGE = (-0.4, 0.4)
GRIPPER_Y_RANGE = (-0.5, 0.5)
GRIPPER_Z_RANGE = (0.0, 0.7)
ARM_BASE_RANGE = (0.0, 1.0)
ARM_HOME_OFFSET = Point3(0.0, 0.0, 0.15)
ARM_HOME_BASE = 0.5

# Camera mount relative to the body origin (level, forward-facing).
CAMERA_MOUNT = Pose(y=0.8)

VISIT_CELL = 0.2
VISIT_YAW_BINS = 8

REWARD_STEP = -0.01
REWARD_FAILED_ACTION = -0.03
REWARD_SUCCESS = 10.0
REWARD_PICKUP = 5.0
REWARD_FIRST_OBSERVATION = 1.0
REWARD_NEW_STATE = 0.1


class Action(enum.Enum):
    MOVE_AHEAD = "MoveAhead"
    ROTATE_RIGHT = "RotateRight"
    ROTATE_LEFT = "RotateLeft"
    ARM_BASE_UP = "ArmBaseUp"
    ARM_BASE_DOWN = "ArmBaseDown"
    GRIPPER_X_PLUS = "GripperXPlus"
    GRIPPER_X_MINUS = "GripperXMinus"
    GRIPPER_Y_PLUS = "GripperYPlus"
    GRIPPER_Y_MINUS = "GripperYMinus"
    GRIPPER_Z_PLUS = "GripperZPlus"
    GRIPPER_Z_MINUS = "GripperZMinus"


_BODY_ACTIONS = {Action.MOVE_AHEAD, Action.ROTATE_RIGHT, Action.ROTATE_LEFT}

# Per arm action: (dof, sign).  dof "base" moves the arm base along the
# body's vertical axis; x/y/z move the gripper offset.
_ARM_MOVES = {
    Action.ARM_BASE_UP: ("base", 1.0),
    Action.ARM_BASE_DOWN: ("base", -1.0),
    Action.GRIPPER_X_PLUS: ("x", 1.0),
    Action.GRIPPER_X_MINUS: ("x", -1.0),
    Action.GRIPPER_Y_PLUS: ("y", 1.0),
    Action.GRIPPER_Y_MINUS: ("y", -1.0),
    Action.GRIPPER_Z_PLUS: ("z", 1.0),
    Action.GRIPPER_Z_MINUS: ("z", -1.0),
}


@dataclass
class ArmState:
    base_height: float = ARM_HOME_BASE
    offset: Point3 = ARM_HOME_OFFSET

    def gripper_point(self) -> Point3:
        """Gripper position in the body frame."""
        return Point3(self.offset.x, self.base_height + self.offset.y,
                      self.offset.z)


@dataclass(frozen=True)
class StepEvents:
    """What one transition did; input to reward computation."""

    action: Action
    failed: bool
    pickup: bool
    success: bool
    source_first_seen: bool = False
    dest_first_seen: bool = False
    new_state: bool = False
    objective_dist_before: float = 0.0
    objective_dist_after: float = 0.0


@dataclass
class EpisodeState:
    scene: Scene
    source_index: int
    dest_index: int
    true_pose: Pose
    dr: DeadReckonState
    arm: ArmState
    object_boxes: list[Box]
    spawn_centers: list[tuple[float, float, float]]
    held_index: int | None = None
    held_grip_offset: Point3 | None = None
    picked_up: bool = False
    disturbed: bool = False
    t: int = 0
    done: str = "running"
    visited: set[tuple[int, int, int]] = field(default_factory=set)
    source_seen: bool = False
    dest_seen: bool = False
    frames: int = 0
    src_visible_frames: int = 0
    dst_visible_frames: int = 0


@dataclass(frozen=True)
class EpisodeResult:
    """Per-episode summary consumed by aggregate metrics."""

    success: bool
    picked_up: bool
    disturbed: bool
    steps: int
    src_visibility: float
    dst_visibility: float
    terminal_est_error: float | None = None


@dataclass
class RewardLedger:
    """Per-component reward totals for one episode."""

    step_penalty: float = 0.0
    failed_penalty: float = 0.0
    success_bonus: float = 0.0
    pickup_bonus: float = 0.0
    observed_bonus: float = 0.0
    new_state_bonus: float = 0.0
    distance_shaping: float = 0.0

    def add(self, ev: StepEvents) -> float:
        self.step_penalty += REWARD_STEP
        if ev.failed:
            self.failed_penalty += REWARD_FAILED_ACTION
        if ev.success:
            self.success_bonus += REWARD_SUCCESS
        if ev.pickup:
            self.pickup_bonus += REWARD_PICKUP
        if ev.source_first_seen:
            self.observed_bonus += REWARD_FIRST_OBSERVATION
        if ev.dest_first_seen:
            self.observed_bonus += REWARD_FIRST_OBSERVATION
        if ev.new_state:
            self.new_state_bonus += REWARD_NEW_STATE
        self.distance_shaping += (ev.objective_dist_before
                                  - ev.objective_dist_after)
        return compute_reward(ev)

    def total(self) -> float:
        return (self.step_penalty + self.failed_penalty + self.success_bonus
                + self.pickup_bonus + self.observed_bonus
                + self.new_state_bonus + self.distance_shaping)

    def as_dict(self) -> dict[str, float]:
        return {
            "step_penalty": self.step_penalty,
            "failed_penalty": self.failed_penalty,
            "success_bonus": self.success_bonus,
            "pickup_bonus": self.pickup_bonus,
            "observed_bonus": self.observed_bonus,
            "new_state_bonus": self.new_state_bonus,
            "distance_shaping": self.distance_shaping,
        }


def compute_reward(ev: StepEvents) -> float:
    """Scalar reward for one transition (pure function of the events)."""
    r = REWARD_STEP
    if ev.failed:
        r += REWARD_FAILED_ACTION
    if ev.success:
        r += REWARD_SUCCESS
    if ev.pickup:
        r += REWARD_PICKUP
    if ev.source_first_seen:
        r += REWARD_FIRST_OBSERVATION
    if ev.dest_first_seen:
        r += REWARD_FIRST_OBSERVATION
    if ev.new_state:
        r += REWARD_NEW_STATE
    r += ev.objective_dist_before - ev.objective_dist_after
    return r


def init_episode(scene: Scene, config: TaskConfig) -> EpisodeState:
    n = len(scene.objects)
    if not (0 <= config.source_index < n and 0 <= config.dest_index < n):
        raise ValueError("object index out of range")
    if config.source_index == config.dest_index:
        raise ValueError("source and destination must differ")
    if scene.objects[config.source_index].category != config.source_category:
        raise ValueError("source category mismatch")
    if scene.objects[config.dest_index].category != config.dest_category:
        raise ValueError("destination category mismatch")
    boxes = [o.box for o in scene.objects]
    state = EpisodeState(
        scene=scene,
        source_index=config.source_index,
        dest_index=config.dest_index,
        true_pose=config.agent_start,
        dr=DeadReckonState(),
        arm=ArmState(),
        object_boxes=boxes,
        spawn_centers=[b.center() for b in boxes],
    )
    state.visited.add(_visit_bin(state.true_pose))
    return state


def gripper_world(state: EpisodeState) -> Point3:
    return transform_point(state.true_pose, state.arm.gripper_point())


def camera_pose(state: EpisodeState) -> Pose:
    return compose(state.true_pose, CAMERA_MOUNT)


def render_arrays(state: EpisodeState) -> tuple[np.ndarray, np.ndarray]:
    """Current boxes and instance ids for the renderer.

    Movables carry their scene index; statics get ids below -1, matching
    the spawn-time layout so ground-truth masks stay index-addressed.
    """
    statics = state.scene.statics
    n = len(statics) + len(state.object_boxes)
    boxes = np.empty((n, 6), dtype=np.float64)
    ids = np.empty(n, dtype=np.int32)
    for k, s in enumerate(statics):
        boxes[k] = s.box.as_array()
        ids[k] = -(2 + k)
    base = len(statics)
    for i, b in enumerate(state.object_boxes):
        boxes[base + i] = b.as_array()
        ids[base + i] = i
    return boxes, ids


def check_success(state: EpisodeState) -> bool:
    """Picked up and the two object centers are strictly within range."""
    if not state.picked_up:
        return False
    sc = state.object_boxes[state.source_index].center()
    dc = state.object_boxes[state.dest_index].center()
    return math.dist(sc, dc) < SUCCESS_RADIUS


def note_observations(state: EpisodeState, src_visible: bool,
                      dst_visible: bool, *,
                      reward_eligible: bool = True) -> tuple[bool, bool]:
    """Record one rendered frame's target visibility.

    Returns the pair of first-observation flags for the reward.  Frames
    rendered before the first action should pass reward_eligible=False
    so they count toward visibility statistics only.
    """
    state.frames += 1
    if src_visible:
        state.src_visible_frames += 1
    if dst_visible:
        state.dst_visible_frames += 1
    src_first = dst_first = False
    if reward_eligible:
        if src_visible and not state.source_seen:
            state.source_seen = True
            src_first = True
        if dst_visible and not state.dest_seen:
            state.dest_seen = True
            dst_first = True
    return src_first, dst_first


def step(state: EpisodeState, action: Action, noise: MotionNoiseSpec,
         rng: np.random.Generator) -> StepEvents:
    """Apply one action; mutates the state and reports what happened.

    Failed actions leave the pose, arm, objects, and dead reckoning
    untouched.  Distance shaping is measured from the gripper to the
    step-start objective (source before pickup, destination after), with
    the post-motion distance taken before any attach snap.
    """
    if state.done != "running":
        raise EpisodeDoneError(f"episode already ended: {state.done}")
    if not isinstance(action, Action):
        raise InvalidActionError(f"unknown action: {action!r}")

    objective = (state.dest_index if state.picked_up else state.source_index)
    dist_before = _objective_distance(state, objective)

    if action in _BODY_ACTIONS:
        ok = _apply_body(state, action, noise, rng)
    else:
        ok = _apply_arm(state, action)

    dist_after = _objective_distance(state, objective)
    pickup_now = try_pickup(state) if ok else False

    bin_now = _visit_bin(state.true_pose)
    new_state = bin_now not in state.visited
    state.visited.add(bin_now)

    _update_disturbance(state)

    state.t += 1
    success_now = check_success(state)
    if success_now:
        state.done = "success"
    elif state.t >= MAX_STEPS:
        state.done = "timeout"

    return StepEvents(
        action=action,
        failed=not ok,
        pickup=pickup_now,
        success=success_now,
        new_state=new_state,
        objective_dist_before=dist_before,
        objective_dist_after=dist_after,
    )


def try_pickup(state: EpisodeState) -> bool:
    """Attach the source if the gripper touches its inflated box.

    The object snaps toward the gripper point; one pass of axis-minimal
    separation keeps the snapped box out of statics (e.g. resting it on
    the tabletop instead of inside it).  If the snap cannot be made
    collision-free the object sticks where touched and is carried at a
    fixed body-frame offset.
    """
    if state.picked_up:
        return False
    src_box = state.object_boxes[state.source_index]
    g = state.arm.gripper_point()
    gw = transform_point(state.true_pose, g)
    zone = src_box.inflated(TOUCH_TOLERANCE)
    if not zone.contains_point(gw.x, gw.y, gw.z):
        return False
    sx, sy, sz = src_box.size()
    snapped = Box.from_center(gw.x, gw.y, gw.z, sx, sy, sz)
    settled = _resolve_against_statics(snapped, state)
    if settled is not None and not any(
            boxes_overlap(settled, ob)
            for j, ob in enumerate(state.object_boxes)
            if j != state.source_index):
        new_box = settled
    else:
        new_box = src_box
    state.object_boxes[state.source_index] = new_box
    state.held_index = state.source_index
    state.picked_up = True
    cx, cy, cz = new_box.center()
    center_body = transform_point(_world_to_body(state.true_pose),
                                  Point3(cx, cy, cz))
    state.held_grip_offset = center_body - g
    return True


def compute_metrics(results: list[EpisodeResult]) -> dict[str, float]:
    """Aggregate episode outcomes into the summary metric row."""
    if not results:
        raise ValueError("no episodes to aggregate")
    n = len(results)
    errors = [r.terminal_est_error for r in results
              if r.terminal_est_error is not None]
    return {
        "N": n,
        "PU": sum(r.picked_up for r in results) / n,
        "SR": sum(r.success for r in results) / n,
        "SRwD": sum(r.success and not r.disturbed for r in results) / n,
        "mean_eplen": fmean(r.steps for r in results),
        "src_visibility": fmean(r.src_visibility for r in results),
        "dst_visibility": fmean(r.dst_visibility for r in results),
        "mean_terminal_est_error": fmean(errors) if errors else float("nan"),
    }


# -- internals ---------------------------------------------------------------


def _world_to_body(pose: Pose) -> Pose:
    from .geometry import invert
    return invert(pose)


def _visit_bin(pose: Pose) -> tuple[int, int, int]:
    return (round(pose.x / VISIT_CELL), round(pose.z / VISIT_CELL),
            round(pose.yaw / TURN_STEP) % VISIT_YAW_BINS)


def _objective_distance(state: EpisodeState, objective: int) -> float:
    g = gripper_world(state)
    c = state.object_boxes[objective].center()
    return math.dist((g.x, g.y, g.z), c)


def _held_center_body(state: EpisodeState, arm: ArmState) -> Point3:
    return arm.gripper_point() + state.held_grip_offset


def _box_inside_bounds(box: Box, bounds: Box) -> bool:
    return (box.xmin >= bounds.xmin and box.xmax <= bounds.xmax
            and box.ymin >= bounds.ymin and box.ymax <= bounds.ymax
            and box.zmin >= bounds.zmin and box.zmax <= bounds.zmax)


def _point_strictly_inside(p: Point3, box: Box) -> bool:
    return (box.xmin < p.x < box.xmax and box.ymin < p.y < box.ymax
            and box.zmin < p.z < box.zmax)


def _resolve_against_statics(box: Box, state: EpisodeState) -> Box | None:
    """One axis-minimal separation pass; None if still penetrating."""
    b = box
    for s in state.scene.statics:
        if not boxes_overlap(b, s.box):
            continue
        moves = [
            (s.box.xmax - b.xmin, (1.0, 0.0, 0.0)),
            (b.xmax - s.box.xmin, (-1.0, 0.0, 0.0)),
            (s.box.ymax - b.ymin, (0.0, 1.0, 0.0)),
            (b.ymax - s.box.ymin, (0.0, -1.0, 0.0)),
            (s.box.zmax - b.zmin, (0.0, 0.0, 1.0)),
            (b.zmax - s.box.zmin, (0.0, 0.0, -1.0)),
        ]
        depth, (mx, my, mz) = min(moves, key=lambda m: m[0])
        b = b.translated(mx * depth, my * depth, mz * depth)
    for s in state.scene.statics:
        if boxes_overlap(b, s.box):
            return None
    if not _box_inside_bounds(b, state.scene.bounds):
        return None
    return b


def _try_push(state: EpisodeState,
              pushees: dict[int, tuple[float, float]]) -> bool:
    """Displace contacted movables horizontally; all-or-nothing.

    A push is blocked when the moved box would penetrate a static,
    another resting movable, or leave the room.  Blocked pushes fail the
    whole action.  All pushees share the actuator's displacement, so
    pushee-pushee relations are preserved and not re-checked.
    """
    moved: dict[int, Box] = {}
    for idx, (dx, dz) in pushees.items():
        nb = state.object_boxes[idx].translated(dx, 0.0, dz)
        if not _box_inside_bounds(nb, state.scene.bounds):
            return False
        for s in state.scene.statics:
            if boxes_overlap(nb, s.box):
                return False
        for j, ob in enumerate(state.object_boxes):
            if j == idx or j == state.held_index or j in pushees:
                continue
            if boxes_overlap(nb, ob):
                return False
        moved[idx] = nb
    for idx, nb in moved.items():
        state.object_boxes[idx] = nb
    return True


def _apply_body(state: EpisodeState, action: Action, noise: MotionNoiseSpec,
                rng: np.random.Generator) -> bool:
    if action is Action.MOVE_AHEAD:
        cmd = MotionCommand(translate=BODY_STEP)
    elif action is Action.ROTATE_RIGHT:
        cmd = MotionCommand(rotate=TURN_STEP)
    else:
        cmd = MotionCommand(rotate=-TURN_STEP)
    result = perturb_motion(cmd, noise, rng)
    cand = compose(state.true_pose, motion_delta(result))

    for s in state.scene.statics:
        if cylinder_intersects_box(cand.x, cand.z, AGENT_RADIUS,
                                   cand.y, cand.y + AGENT_HEIGHT, s.box):
            return False

    pushees: dict[int, tuple[float, float]] = {}
    body_vec = (cand.x - state.true_pose.x, cand.z - state.true_pose.z)
    for j, ob in enumerate(state.object_boxes):
        if j == state.held_index:
            continue
        if cylinder_intersects_box(cand.x, cand.z, AGENT_RADIUS,
                                   cand.y, cand.y + AGENT_HEIGHT, ob):
            pushees[j] = body_vec

    held_box = None
    if state.held_index is not None:
        hc = transform_point(cand, _held_center_body(state, state.arm))
        sx, sy, sz = state.object_boxes[state.held_index].size()
        held_box = Box.from_center(hc.x, hc.y, hc.z, sx, sy, sz)
        for s in state.scene.statics:
            if boxes_overlap(held_box, s.box):
                return False
        if not _box_inside_bounds(held_box, state.scene.bounds):
            return False
        oc = state.object_boxes[state.held_index].center()
        held_vec = (hc.x - oc[0], hc.z - oc[2])
        for j, ob in enumerate(state.object_boxes):
            if j == state.held_index:
                continue
            if boxes_overlap(held_box, ob):
                pushees[j] = held_vec

    if pushees and not _try_push(state, pushees):
        return False

    state.true_pose = cand
    if held_box is not None:
        state.object_boxes[state.held_index] = held_box
    state.dr = dead_reckon(state.dr, cmd)
    return True


def _clamped_arm(arm: ArmState, action: Action) -> ArmState:
    dof, sign = _ARM_MOVES[action]
    if dof == "base":
        lo, hi = ARM_BASE_RANGE
        base = min(hi, max(lo, arm.base_height + sign * ARM_STEP))
        return ArmState(base_height=base, offset=arm.offset)
    off = arm.offset
    if dof == "x":
        lo, hi = GRIPPER_X_RANGE
        off = Point3(min(hi, max(lo, off.x + sign * ARM_STEP)), off.y, off.z)
    elif dof == "y":
        lo, hi = GRIPPER_Y_RANGE
        off = Point3(off.x, min(hi, max(lo, off.y + sign * ARM_STEP)), off.z)
    else:
        lo, hi = GRIPPER_Z_RANGE
        off = Point3(off.x, off.y, min(hi, max(lo, off.z + sign * ARM_STEP)))
    return ArmState(base_height=arm.base_height, offset=off)


def _apply_arm(state: EpisodeState, action: Action) -> bool:
    arm2 = _clamped_arm(state.arm, action)
    if arm2 == state.arm:
        return False          # workspace limit: no net motion
    g_old = gripper_world(state)
    g_new = transform_point(state.true_pose, arm2.gripper_point())
    vec = (g_new.x - g_old.x, g_new.z - g_old.z)
    vertical = abs(g_new.y - g_old.y) > abs(vec[0]) + abs(vec[1])

    for s in state.scene.statics:
        if _point_strictly_inside(g_new, s.box):
            return False

    pushees: dict[int, tuple[float, float]] = {}
    held_box = None
    if state.held_index is not None:
        hc = transform_point(state.true_pose, _held_center_body(state, arm2))
        sx, sy, sz = state.object_boxes[state.held_index].size()
        held_box = Box.from_center(hc.x, hc.y, hc.z, sx, sy, sz)
        for s in state.scene.statics:
            if boxes_overlap(held_box, s.box):
                return False
        if not _box_inside_bounds(held_box, state.scene.bounds):
            return False
        for j, ob in enumerate(state.object_boxes):
            if j == state.held_index:
                continue
            if boxes_overlap(held_box, ob):
                if vertical:
                    return False
                pushees[j] = vec
    for j, ob in enumerate(state.object_boxes):
        if j == state.held_index:
            continue
        if j == state.source_index and not state.picked_up:
            continue          # touch zone: attachment handles contact
        if _point_strictly_inside(g_new, ob):
            if vertical:
                return False
            pushees[j] = vec

    if pushees and not _try_push(state, pushees):
        return False

    state.arm = arm2
    if held_box is not None:
        state.object_boxes[state.held_index] = held_box
    return True


def _update_disturbance(state: EpisodeState) -> None:
    if state.disturbed:
        return
    for j, box in enumerate(state.object_boxes):
        if j == state.source_index or j == state.dest_index:
            continue
        if math.dist(box.center(), state.spawn_centers[j]) > DISTURB_LIMIT:
            state.disturbed = True
            return
