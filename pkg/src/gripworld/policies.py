"""Scripted pick-and-displace controllers.

Three policy kinds share one controller (search, approach, grasp, carry,
place) and differ only in where the target position estimates come
from:

- "estimator": online aggregation of masked-depth measurements,
  propagated across believed ego-motion.
- "gt_direction": exact body-frame target positions handed over once at
  reset, then dead-reckoning propagation only; no visual updates.
- "mask_only": a fresh measurement from the current frame each step,
  no memory across body motion.

Policies see only the observation record (depth, target masks, believed
ego-motion delta, proprioception); they never touch the true state.
All decisions are deterministic.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .estimator import (
    TRACKING,
    EstimatorConfig,
    TargetEstimate,
    estimate_step,
    measure_target,
)
from .geometry import CameraModel, Point3, Pose, invert, transform_point
from .task import ARM_STEP, CAMERA_MOUNT, Action, ArmState

POLICY_KINDS = ("estimator", "gt_direction", "mask_only")

_SRC = "source"
_DST = "dest"

# Controller modes, exposed for inspection as Policy.mode.
M_SEARCH_SRC = "search_source"
M_GOTO_SRC = "goto_source"
M_GRASP = "grasp"
M_LIFT = "lift"
M_SEARCH_DST = "search_dest"
M_GOTO_DST = "goto_dest"
M_PLACE = "place"

# Arm action -> servo axis (base and y offset share the vertical axis).
_ACTION_AXIS = {
    Action.ARM_BASE_UP: "y",
    Action.ARM_BASE_DOWN: "y",
    Action.GRIPPER_X_PLUS: "x",
    Action.GRIPPER_X_MINUS: "x",
    Action.GRIPPER_Y_PLUS: "y",
    Action.GRIPPER_Y_MINUS: "y",
    Action.GRIPPER_Z_PLUS: "z",
    Action.GRIPPER_Z_MINUS: "z",
}

_EPS = 1e-6


@dataclass
class Observation:
    """One step's sensing, in the agent's own terms."""

    depth: np.ndarray
    src_mask: np.ndarray
    dst_mask: np.ndarray
    cam: CameraModel
    dr_delta: Pose          # believed ego-motion since the previous act
    arm: ArmState
    picked_up: bool
    last_failed: bool
    t: int


@dataclass(frozen=True)
class ControllerTuning:
    bearing_deadband: float = math.pi / 8
    grasp_range: float = 0.5          # planar range to start arm servo
    blocked_grasp_range: float = 0.8  # reach across furniture when blocked
    grasp_reach: float = 0.74         # max forward distance worth a grasp
    place_reach: float = 0.85         # looser: success radius adds slack
    servo_deadband: float = 0.03
    scan_steps: int = 8
    roam_steps: int = 4
    grasp_try_limit: int = 30
    probe_limit: int = 3
    carry_height: float = 0.5         # offset.y while carrying
    retract_z: float = 0.15
    place_hover: float = 0.12


@dataclass
class _SearchState:
    scan_left: int = 0
    roam_left: int = 0


class Policy:
    """Deterministic phase-machine controller over a target estimate."""

    def __init__(self, kind: str, est_config: EstimatorConfig | None = None,
                 tuning: ControllerTuning | None = None) -> None:
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind: {kind!r}")
        self.kind = kind
        self.tuning = tuning or ControllerTuning()
        self._est_cfg = est_config or EstimatorConfig()
        self.reset()

    @property
    def mode(self) -> str:
        return self._mode

    def reset(self, *, gt_source: Point3 | None = None,
              gt_dest: Point3 | None = None) -> None:
        if self.kind == "gt_direction" and (gt_source is None
                                            or gt_dest is None):
            # Allow bare construction; a real episode must pass priors.
            gt_source = gt_source or None
            gt_dest = gt_dest or None
        self._gt_src = gt_source
        self._gt_dst = gt_dest
        self._src_est = TargetEstimate()
        self._dst_est = TargetEstimate()
        self._src_meas: Point3 | None = None
        self._dst_meas: Point3 | None = None
        self._mode = M_SEARCH_SRC
        self._search = _SearchState(scan_left=self.tuning.scan_steps)
        self._queue: deque[Action] = deque()
        self._anchor: Point3 | None = None
        self._tries = 0
        self._probes = 0
        self._skip_axes: set[str] = set()
        self._side = 1
        self._stuck = 0
        self._dodges = 0
        self._spins = 0
        self._grasp_spent = False
        self._last_action: Action | None = None
        self._last_from_queue = False

    # -- sensing ------------------------------------------------------------

    def _ingest(self, obs: Observation) -> None:
        if self.kind == "estimator":
            self._src_est = estimate_step(
                self._src_est, obs.dr_delta, obs.depth, obs.src_mask,
                obs.cam, CAMERA_MOUNT, self._est_cfg)
            self._dst_est = estimate_step(
                self._dst_est, obs.dr_delta, obs.depth, obs.dst_mask,
                obs.cam, CAMERA_MOUNT, self._est_cfg)
        elif self.kind == "gt_direction":
            back = invert(obs.dr_delta)
            if self._gt_src is not None:
                self._gt_src = transform_point(back, self._gt_src)
            if self._gt_dst is not None:
                self._gt_dst = transform_point(back, self._gt_dst)
        else:
            self._src_meas = measure_target(obs.depth, obs.src_mask,
                                            obs.cam, CAMERA_MOUNT)
            self._dst_meas = measure_target(obs.depth, obs.dst_mask,
                                            obs.cam, CAMERA_MOUNT)

    def _estimate(self, which: str) -> Point3 | None:
        """Current body-frame estimate, however old."""
        if self.kind == "estimator":
            est = self._src_est if which == _SRC else self._dst_est
            return est.position if est.status == TRACKING else None
        if self.kind == "gt_direction":
            return self._gt_src if which == _SRC else self._gt_dst
        return self._src_meas if which == _SRC else self._dst_meas

    def target_estimate(self, which: str) -> Point3 | None:
        """Current body-frame position belief for "source" or "dest"."""
        if which not in (_SRC, _DST):
            raise ValueError(f"unknown target: {which!r}")
        return self._estimate(which)

    def _fresh_estimate(self, which: str) -> Point3 | None:
        """Estimate backed by a measurement from this frame, if any."""
        if self.kind == "estimator":
            est = self._src_est if which == _SRC else self._dst_est
            if est.status == TRACKING and est.steps_since_seen == 0:
                return est.position
            return None
        if self.kind == "mask_only":
            return self._src_meas if which == _SRC else self._dst_meas
        return None

    # -- control ------------------------------------------------------------

    def act(self, obs: Observation) -> Action:
        self._ingest(obs)
        if (self._last_action is Action.MOVE_AHEAD
                and not obs.last_failed):
            self._stuck = 0
            self._grasp_spent = False
            if not self._last_from_queue:
                self._dodges = 0
        if obs.picked_up and self._mode in (M_SEARCH_SRC, M_GOTO_SRC,
                                            M_GRASP):
            self._enter(M_LIFT)
            self._queue.clear()
        elif not obs.picked_up and self._mode in (M_LIFT, M_SEARCH_DST,
                                                  M_GOTO_DST, M_PLACE):
            self._enter(M_SEARCH_SRC)
            self._queue.clear()
        if self._queue:
            return self._emit(self._queue.popleft(), from_queue=True)
        for _ in range(4):        # bounded mode-transition cascade
            a = self._dispatch(obs)
            if a is not None:
                return self._emit(a)
        return self._emit(Action.ROTATE_RIGHT)

    def _emit(self, action: Action, from_queue: bool = False) -> Action:
        self._last_action = action
        self._last_from_queue = from_queue
        return action

    def _enter(self, mode: str) -> None:
        self._mode = mode
        self._stuck = 0
        self._dodges = 0
        self._spins = 0
        if mode in (M_SEARCH_SRC, M_SEARCH_DST):
            self._search = _SearchState(scan_left=self.tuning.scan_steps)
        if mode in (M_GRASP, M_PLACE):
            self._tries = 0
            self._probes = 0
            self._skip_axes = set()

    def _dispatch(self, obs: Observation) -> Action | None:
        if self._mode == M_SEARCH_SRC:
            return self._handle_search(obs, _SRC)
        if self._mode == M_GOTO_SRC:
            return self._handle_goto(obs, _SRC)
        if self._mode == M_GRASP:
            return self._handle_servo(obs, place=False)
        if self._mode == M_LIFT:
            return self._handle_lift(obs)
        if self._mode == M_SEARCH_DST:
            return self._handle_search(obs, _DST)
        if self._mode == M_GOTO_DST:
            return self._handle_goto(obs, _DST)
        return self._handle_servo(obs, place=True)

    def _handle_search(self, obs: Observation, which: str) -> Action | None:
        if self._estimate(which) is not None:
            self._enter(M_GOTO_SRC if which == _SRC else M_GOTO_DST)
            return None
        if not obs.picked_up:
            tuck = self._tuck_action(obs.arm)
            if tuck is not None:
                return tuck
        s = self._search
        if s.scan_left > 0:
            s.scan_left -= 1
            if s.scan_left == 0:
                s.roam_left = self.tuning.roam_steps
            return Action.ROTATE_RIGHT
        if s.roam_left > 0:
            s.roam_left -= 1
            if s.roam_left == 0:
                s.scan_left = self.tuning.scan_steps
            if obs.last_failed and self._last_action is Action.MOVE_AHEAD:
                return Action.ROTATE_RIGHT
            return Action.MOVE_AHEAD
        s.scan_left = self.tuning.scan_steps
        return None

    def _handle_goto(self, obs: Observation, which: str) -> Action | None:
        est = self._estimate(which)
        if est is None:
            self._enter(M_SEARCH_SRC if which == _SRC else M_SEARCH_DST)
            return None
        planar = math.hypot(est.x, est.z)
        blocked = (obs.last_failed
                   and self._last_action is Action.MOVE_AHEAD)
        reach = (self.tuning.grasp_reach if which == _SRC
                 else self.tuning.place_reach)
        if not self._grasp_spent and est.z <= reach and (
                planar <= self.tuning.grasp_range
                or (blocked and planar <= self.tuning.blocked_grasp_range)):
            self._anchor = est
            self._enter(M_GRASP if which == _SRC else M_PLACE)
            return None
        bearing = math.atan2(est.x, est.z)
        if (abs(bearing) > self.tuning.bearing_deadband
                and self._spins < 4):
            # Viewpoint changes shift the estimate, so a bearing that sits
            # near the deadband edge can flip sign forever; cap the streak.
            self._spins += 1
            return (Action.ROTATE_RIGHT if bearing > 0
                    else Action.ROTATE_LEFT)
        self._spins = 0
        if not obs.picked_up:
            tuck = self._tuck_action(obs.arm)
            if tuck is not None:
                return tuck
        if blocked:
            self._stuck += 1
            if self._stuck <= 1:
                self._side = -self._side
                self._queue.append(Action.MOVE_AHEAD)
                return (Action.ROTATE_RIGHT if self._side > 0
                        else Action.ROTATE_LEFT)
            return self._start_dodge()
        return Action.MOVE_AHEAD

    def _start_dodge(self) -> Action:
        """Escalating 90-degree detour along the blocking face."""
        k = self._dodges
        self._dodges += 1
        if k % 2 == 1:
            self._side = -self._side
        steps = min(2 + 2 * k, 8)
        turn = Action.ROTATE_RIGHT if self._side > 0 else Action.ROTATE_LEFT
        back = Action.ROTATE_LEFT if self._side > 0 else Action.ROTATE_RIGHT
        self._queue.extend([turn] + [Action.MOVE_AHEAD] * steps
                           + [back, Action.MOVE_AHEAD, Action.MOVE_AHEAD])
        return turn

    def _handle_servo(self, obs: Observation, place: bool) -> Action | None:
        which = _DST if place else _SRC
        if (obs.last_failed and self._last_action is not None
                and self._last_action in _ACTION_AXIS):
            self._skip_axes.add(_ACTION_AXIS[self._last_action])
        target = (self._fresh_estimate(which) or self._estimate(which)
                  or self._anchor)
        if target is None:
            self._enter(M_SEARCH_DST if place else M_SEARCH_SRC)
            return None
        if place:
            target = Point3(target.x, target.y + self.tuning.place_hover,
                            target.z)
        self._tries += 1
        if self._tries > self.tuning.grasp_try_limit:
            return self._abandon_servo(place)
        g = obs.arm.gripper_point()
        deltas = {"x": target.x - g.x, "y": target.y - g.y,
                  "z": target.z - g.z}
        for axis in ("y", "x", "z"):
            if axis in self._skip_axes:
                continue
            a = self._axis_action(obs.arm, axis, deltas[axis])
            if a is not None:
                return a
        # Aligned (or stuck on every axis): probe deeper, then give up.
        if (self._probes < self.tuning.probe_limit
                and obs.arm.offset.z < 0.7 - _EPS
                and "z" not in self._skip_axes):
            self._probes += 1
            return Action.GRIPPER_Z_PLUS
        return self._abandon_servo(place)

    def _abandon_servo(self, place: bool) -> None:
        """Drop the attempt; require a stance change before the next one."""
        self._anchor = None
        self._grasp_spent = True
        self._enter(M_SEARCH_DST if place else M_SEARCH_SRC)
        return None

    def _handle_lift(self, obs: Observation) -> Action | None:
        arm = obs.arm
        eps = ARM_STEP / 2
        if (obs.last_failed and self._last_action is Action.GRIPPER_Z_MINUS
                and arm.base_height < 1.0 - _EPS):
            return Action.ARM_BASE_UP
        if (arm.offset.y < self.tuning.carry_height - eps
                and not (obs.last_failed
                         and self._last_action is Action.GRIPPER_Y_PLUS)):
            return Action.GRIPPER_Y_PLUS
        if arm.offset.z > eps:
            return Action.GRIPPER_Z_MINUS
        if arm.offset.x > eps:
            return Action.GRIPPER_X_MINUS
        if arm.offset.x < -eps:
            return Action.GRIPPER_X_PLUS
        self._enter(M_SEARCH_DST)
        return None

    def _axis_action(self, arm: ArmState, axis: str,
                     delta: float) -> Action | None:
        """One arm action toward closing delta, or None if done/stuck."""
        if abs(delta) <= self.tuning.servo_deadband:
            return None
        off = arm.offset
        if axis == "x":
            if delta > 0 and off.x < 0.4 - _EPS:
                return Action.GRIPPER_X_PLUS
            if delta < 0 and off.x > -0.4 + _EPS:
                return Action.GRIPPER_X_MINUS
            return None
        if axis == "z":
            if delta > 0 and off.z < 0.7 - _EPS:
                return Action.GRIPPER_Z_PLUS
            if delta < 0 and off.z > _EPS:
                return Action.GRIPPER_Z_MINUS
            return None
        if delta > 0:
            if off.y < 0.5 - _EPS:
                return Action.GRIPPER_Y_PLUS
            if arm.base_height < 1.0 - _EPS:
                return Action.ARM_BASE_UP
            return None
        if off.y > -0.5 + _EPS:
            return Action.GRIPPER_Y_MINUS
        if arm.base_height > _EPS:
            return Action.ARM_BASE_DOWN
        return None

    def _tuck_action(self, arm: ArmState) -> Action | None:
        """Bring the arm toward its home pose before walking."""
        eps = ARM_STEP / 2
        off = arm.offset
        if off.z > self.tuning.retract_z + eps:
            return Action.GRIPPER_Z_MINUS
        if off.y > eps:
            return Action.GRIPPER_Y_MINUS
        if off.y < -eps:
            return Action.GRIPPER_Y_PLUS
        if off.x > eps:
            return Action.GRIPPER_X_MINUS
        if off.x < -eps:
            return Action.GRIPPER_X_PLUS
        if arm.base_height > 0.5 + eps:
            return Action.ARM_BASE_DOWN
        if arm.base_height < 0.5 - eps:
            return Action.ARM_BASE_UP
        return None


def make_policy(kind: str, *, est_config: EstimatorConfig | None = None,
                tuning: ControllerTuning | None = None) -> Policy:
    return Policy(kind, est_config=est_config, tuning=tuning)
