"""Episode runner and sweep harness.

run_episode closes the loop around one episode: render, degrade what
the policy sees, act, step, account rewards.  A reference estimator
runs alongside on clean masks, clean depth, and true ego-motion, so
the terminal estimate error measures exactly what the observation and
odometry corruption cost.

The experiment layer fans a policy/noise grid out over a task dataset.
Each episode's seed is a hash of the cell parameters and episode index,
never of loop order, so any cell of any sweep reproduces in isolation
and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .estimator import TRACKING, EstimatorConfig, TargetEstimate, estimate_step
from .geometry import CameraModel, Point3, Pose, compose, invert, transform_point
from .odometry import MotionNoiseSpec
from .policies import POLICY_KINDS, ControllerTuning, Observation, make_policy
from .scene import Scene, SceneParams, TaskConfig, generate_scene
from .sensors import (
    DegradationSpec,
    DepthFrame,
    DepthNoiseSpec,
    InstanceFrame,
    apply_degradations,
    apply_depth_noise,
    gt_mask,
    render_boxes,
)
from .task import (
    CAMERA_MOUNT,
    EpisodeResult,
    RewardLedger,
    camera_pose,
    compute_metrics,
    init_episode,
    note_observations,
    render_arrays,
    step,
)

POSE_SENSORS = ("dead_reckon", "noisy_gps")
GPS_SIGMA_POS = 0.01
GPS_SIGMA_YAW = math.radians(1.0)

AXES = ("motion_mult", "depth_severity", "keep_fraction", "present_prob",
        "confuse_prob")

SUMMARY_COLUMNS = ("policy",) + AXES + (
    "N", "PU", "SR", "SRwD", "mean_eplen",
    "src_visibility", "dst_visibility", "mean_terminal_est_error")

_NO_DEPTH_NOISE = DepthNoiseSpec(sigma_coeffs=(0.0, 0.0, 0.0),
                                 lateral_shift_px=0.0,
                                 quantization_step=0.0)


# ---------------------------------------------------------------------------
# Single episodes


@dataclass(frozen=True)
class EpisodeRecord:
    """One episode's outcome, flat enough to log as a JSON line.

    terminal_*_error measure the policy's final position belief against
    the true object center, in the terminal body frame.  The raw
    destination belief and truth vectors are kept alongside so logs
    support other error decompositions (range-only, per-axis).
    ref_*_gap measure the belief against a reference estimator fed
    clean masks, clean depth, and true ego-motion, isolating what the
    corruption cost.  dest_drift is how far the destination moved from
    its spawn point.
    """

    policy: str
    scene_seed: int
    source_index: int
    dest_index: int
    outcome: str
    success: bool
    picked_up: bool
    disturbed: bool
    steps: int
    reward_total: float
    rewards: dict[str, float]
    src_visibility: float
    dst_visibility: float
    terminal_src_error: float | None
    terminal_dst_error: float | None
    terminal_dst_estimate: tuple[float, float, float] | None
    terminal_dst_truth: tuple[float, float, float]
    ref_src_gap: float | None
    ref_dst_gap: float | None
    dest_drift: float

    def result(self) -> EpisodeResult:
        return EpisodeResult(
            success=self.success, picked_up=self.picked_up,
            disturbed=self.disturbed, steps=self.steps,
            src_visibility=self.src_visibility,
            dst_visibility=self.dst_visibility,
            terminal_est_error=self.terminal_dst_error)

    def to_dict(self) -> dict:
        return asdict(self)


def _terminal_error(policy, which: str, truth: Point3) -> float | None:
    est = policy.target_estimate(which)
    if est is None:
        return None
    return math.dist((est.x, est.y, est.z), (truth.x, truth.y, truth.z))


def _ref_gap(policy, which: str, ref: TargetEstimate) -> float | None:
    est = policy.target_estimate(which)
    if est is None or ref.status != TRACKING:
        return None
    p = ref.position
    return math.dist((est.x, est.y, est.z), (p.x, p.y, p.z))


def run_episode(scene: Scene, config: TaskConfig, policy_kind: str, *,
                cam: CameraModel,
                rng: np.random.Generator,
                motion: MotionNoiseSpec = MotionNoiseSpec(),
                depth_noise: DepthNoiseSpec | None = None,
                degrade: DegradationSpec = DegradationSpec(),
                est_config: EstimatorConfig | None = None,
                tuning: ControllerTuning | None = None,
                pose_sensor: str = "dead_reckon",
                frame_hook: Callable[..., None] | None = None,
                ) -> EpisodeRecord:
    """Run one closed-loop episode and summarize it.

    The policy sees degraded masks, corrupted depth, and its believed
    ego-motion ("dead_reckon" integrates commands; "noisy_gps" reads
    the true pose through bounded jitter).  frame_hook, if given, is
    called as (t, depth_frame, instance_frame, src_mask, dst_mask)
    with exactly what the policy saw on every rendered frame.
    """
    if pose_sensor not in POSE_SENSORS:
        raise ValueError(f"unknown pose_sensor: {pose_sensor!r}")
    noise = depth_noise if depth_noise is not None else _NO_DEPTH_NOISE
    cfg = est_config or EstimatorConfig()

    state = init_episode(scene, config)
    policy = make_policy(policy_kind, est_config=cfg, tuning=tuning)
    if policy_kind == "gt_direction":
        w2b = invert(state.true_pose)
        src = Point3(*state.object_boxes[config.source_index].center())
        dst = Point3(*state.object_boxes[config.dest_index].center())
        policy.reset(gt_source=transform_point(w2b, src),
                     gt_dest=transform_point(w2b, dst))
    else:
        policy.reset()

    ledger = RewardLedger()
    ref_src = TargetEstimate()
    ref_dst = TargetEstimate()
    prev_true = state.true_pose
    prev_believed: Pose | None = None
    pending_ref: tuple | None = None

    def observe(eligible: bool, last_failed: bool):
        nonlocal prev_true, prev_believed, pending_ref
        boxes, ids = render_arrays(state)
        depth, inst = render_boxes(boxes, ids, camera_pose(state), cam)
        src_mask = gt_mask(inst, state.source_index)
        dst_mask = gt_mask(inst, state.dest_index)
        flags = note_observations(state, bool(src_mask.any()),
                                  bool(dst_mask.any()),
                                  reward_eligible=eligible)
        true_delta = compose(invert(prev_true), state.true_pose)
        prev_true = state.true_pose
        if pose_sensor == "dead_reckon":
            believed = state.dr.pose
        else:
            jitter = Pose(x=rng.normal(0.0, GPS_SIGMA_POS),
                          z=rng.normal(0.0, GPS_SIGMA_POS),
                          yaw=rng.normal(0.0, GPS_SIGMA_YAW))
            believed = compose(state.true_pose, jitter)
        dr_delta = (Pose() if prev_believed is None
                    else compose(invert(prev_believed), believed))
        prev_believed = believed
        pending_ref = (true_delta, depth.values, src_mask, dst_mask)
        obs_src = apply_degradations(src_mask, inst, state.source_index,
                                     degrade, rng)
        obs_dst = apply_degradations(dst_mask, inst, state.dest_index,
                                     degrade, rng)
        obs_depth = apply_depth_noise(depth.values, noise, rng, cam.max_range)
        if frame_hook is not None:
            frame_hook(state.t, DepthFrame(obs_depth, cam.max_range),
                       inst, obs_src, obs_dst)
        obs = Observation(depth=obs_depth, src_mask=obs_src,
                          dst_mask=obs_dst, cam=cam, dr_delta=dr_delta,
                          arm=state.arm, picked_up=state.picked_up,
                          last_failed=last_failed, t=state.t)
        return obs, flags

    def absorb_reference() -> None:
        # The reference folds in exactly the frames the policy acts on,
        # so at zero corruption the two see identical input sequences.
        nonlocal ref_src, ref_dst, pending_ref
        true_delta, depth_values, src_mask, dst_mask = pending_ref
        pending_ref = None
        ref_src = estimate_step(ref_src, true_delta, depth_values, src_mask,
                                cam, CAMERA_MOUNT, cfg)
        ref_dst = estimate_step(ref_dst, true_delta, depth_values, dst_mask,
                                cam, CAMERA_MOUNT, cfg)

    obs, _ = observe(False, False)
    while state.done == "running":
        absorb_reference()
        action = policy.act(obs)
        ev = step(state, action, motion, rng)
        obs, (src_first, dst_first) = observe(True, ev.failed)
        ev = replace(ev, source_first_seen=src_first,
                     dest_first_seen=dst_first)
        ledger.add(ev)

    frames = max(state.frames, 1)
    w2b = invert(state.true_pose)
    src_true = transform_point(
        w2b, Point3(*state.object_boxes[config.source_index].center()))
    dst_center = state.object_boxes[config.dest_index].center()
    dst_true = transform_point(w2b, Point3(*dst_center))
    dst_est = policy.target_estimate("dest")
    return EpisodeRecord(
        policy=policy_kind,
        scene_seed=config.scene_seed,
        source_index=config.source_index,
        dest_index=config.dest_index,
        outcome=state.done,
        success=state.done == "success",
        picked_up=state.picked_up,
        disturbed=state.disturbed,
        steps=state.t,
        reward_total=ledger.total(),
        rewards=ledger.as_dict(),
        src_visibility=state.src_visible_frames / frames,
        dst_visibility=state.dst_visible_frames / frames,
        terminal_src_error=_terminal_error(policy, "source", src_true),
        terminal_dst_error=_terminal_error(policy, "dest", dst_true),
        terminal_dst_estimate=(None if dst_est is None
                               else (dst_est.x, dst_est.y, dst_est.z)),
        terminal_dst_truth=(dst_true.x, dst_true.y, dst_true.z),
        ref_src_gap=_ref_gap(policy, "source", ref_src),
        ref_dst_gap=_ref_gap(policy, "dest", ref_dst),
        dest_drift=math.dist(dst_center,
                             state.spawn_centers[config.dest_index]),
    )


# ---------------------------------------------------------------------------
# Sweep cells and seeding


@dataclass(frozen=True)
class CellParams:
    """One sweep cell: a motion multiplier plus observation corruption."""

    motion_mult: float = 0.0
    depth_severity: float = 0.0
    keep_fraction: float = 1.0
    present_prob: float = 1.0
    confuse_prob: float = 0.0

    def motion(self, base: MotionNoiseSpec) -> MotionNoiseSpec:
        return replace(base, multiplier=self.motion_mult)

    def depth_noise(self, base: DepthNoiseSpec) -> DepthNoiseSpec:
        return base.scaled(self.depth_severity)

    def degradation(self) -> DegradationSpec:
        return DegradationSpec(keep_fraction=self.keep_fraction,
                               present_prob=self.present_prob,
                               confuse_prob=self.confuse_prob)

    def as_dict(self) -> dict[str, float]:
        return {axis: getattr(self, axis) for axis in AXES}


def cell_seed(master_seed: int, policy: str, cell: CellParams,
              index: int) -> int:
    """Episode seed as a pure function of what the episode is."""
    payload = json.dumps(
        [int(master_seed), str(policy), float(cell.motion_mult),
         float(cell.depth_severity), float(cell.keep_fraction),
         float(cell.present_prob), float(cell.confuse_prob), int(index)],
        separators=(",", ":"))
    digest = hashlib.sha256(payload.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep: per-axis value lists around a shared baseline cell."""

    name: str = "sweep"
    policies: tuple[str, ...] = POLICY_KINDS
    episodes_per_cell: int = 20
    master_seed: int = 0
    cam_width: int = 128
    cam_height: int = 128
    hfov_deg: float = 90.0
    pose_sensor: str = "dead_reckon"
    averaging: str = "ema"
    alpha: float = 0.5
    baseline: CellParams = CellParams()
    motion_mults: tuple[float, ...] = ()
    depth_severities: tuple[float, ...] = ()
    keep_fractions: tuple[float, ...] = ()
    present_probs: tuple[float, ...] = ()
    confuse_probs: tuple[float, ...] = ()

    def cells(self) -> list[CellParams]:
        """Baseline first, then one-axis-at-a-time variations, deduped."""
        out = [self.baseline]
        axis_values = zip(AXES, (self.motion_mults, self.depth_severities,
                                 self.keep_fractions, self.present_probs,
                                 self.confuse_probs))
        for axis, values in axis_values:
            for v in values:
                cell = replace(self.baseline, **{axis: float(v)})
                if cell not in out:
                    out.append(cell)
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "policies": list(self.policies),
            "episodes_per_cell": self.episodes_per_cell,
            "master_seed": self.master_seed,
            "cam_width": self.cam_width,
            "cam_height": self.cam_height,
            "hfov_deg": self.hfov_deg,
            "pose_sensor": self.pose_sensor,
            "averaging": self.averaging,
            "alpha": self.alpha,
            "baseline": asdict(self.baseline),
            "motion_mults": list(self.motion_mults),
            "depth_severities": list(self.depth_severities),
            "keep_fractions": list(self.keep_fractions),
            "present_probs": list(self.present_probs),
            "confuse_probs": list(self.confuse_probs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(
            name=str(d["name"]),
            policies=tuple(str(p) for p in d["policies"]),
            episodes_per_cell=int(d["episodes_per_cell"]),
            master_seed=int(d["master_seed"]),
            cam_width=int(d["cam_width"]),
            cam_height=int(d["cam_height"]),
            hfov_deg=float(d["hfov_deg"]),
            pose_sensor=str(d["pose_sensor"]),
            averaging=str(d["averaging"]),
            alpha=float(d["alpha"]),
            baseline=CellParams(**{k: float(v)
                                   for k, v in d["baseline"].items()}),
            motion_mults=tuple(float(v) for v in d["motion_mults"]),
            depth_severities=tuple(float(v) for v in d["depth_severities"]),
            keep_fractions=tuple(float(v) for v in d["keep_fractions"]),
            present_probs=tuple(float(v) for v in d["present_probs"]),
            confuse_probs=tuple(float(v) for v in d["confuse_probs"]),
        )


# ---------------------------------------------------------------------------
# Experiment execution


def run_experiment(spec: ExperimentSpec, tasks: list[TaskConfig],
                   params: SceneParams, *,
                   out_dir: str | Path | None = None,
                   progress: Callable[[str], None] | None = None,
                   ) -> tuple[list[dict], list[dict]]:
    """Run every (policy, cell) over the task list; aggregate per cell.

    Returns (summary rows, per-episode log records).  With out_dir set,
    also writes summary.csv, episodes.jsonl.gz, and spec.json there.
    """
    if not tasks:
        raise ValueError("empty task dataset")
    for kind in spec.policies:
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind: {kind!r}")
    cam = CameraModel.from_fov(spec.cam_width, spec.cam_height, spec.hfov_deg)
    est_cfg = EstimatorConfig(alpha=spec.alpha, averaging=spec.averaging)
    base_motion = MotionNoiseSpec()
    base_depth = DepthNoiseSpec()
    cells = spec.cells()
    scenes: dict[int, Scene] = {}
    rows: list[dict] = []
    records: list[dict] = []
    for policy in spec.policies:
        for ci, cell in enumerate(cells):
            results = []
            for i in range(spec.episodes_per_cell):
                config = tasks[i % len(tasks)]
                seed = cell_seed(spec.master_seed, policy, cell, i)
                rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence(seed)))
                scene = scenes.get(config.scene_seed)
                if scene is None:
                    scene = generate_scene(config.scene_seed, params)
                    scenes[config.scene_seed] = scene
                rec = run_episode(
                    scene, config, policy, cam=cam, rng=rng,
                    motion=cell.motion(base_motion),
                    depth_noise=cell.depth_noise(base_depth),
                    degrade=cell.degradation(),
                    est_config=est_cfg,
                    pose_sensor=spec.pose_sensor)
                results.append(rec.result())
                records.append({**cell.as_dict(), "episode_index": i,
                                "seed": seed, **rec.to_dict()})
            metrics = compute_metrics(results)
            merged = {"policy": policy, **cell.as_dict(), **metrics}
            rows.append({k: merged[k] for k in SUMMARY_COLUMNS})
            if progress is not None:
                progress(f"{policy}: cell {ci + 1}/{len(cells)} "
                         f"SR={metrics['SR']:.2f}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(out / "summary.csv", rows)
        write_episode_log(out / "episodes.jsonl.gz", records)
        (out / "spec.json").write_text(
            json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n")
    return rows, records


# ---------------------------------------------------------------------------
# Files


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_format_cell(row[k]) for k in SUMMARY_COLUMNS])


def load_rows_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = []
        for vals in reader:
            row: dict = {}
            for k, v in zip(header, vals):
                if k == "policy":
                    row[k] = v
                elif k == "N":
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def write_episode_log(path: str | Path, records: list[dict]) -> None:
    """Gzipped JSON lines with a zeroed timestamp: reruns byte-match."""
    raw = "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                  for r in records).encode()
    with Path(path).open("wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", filename="", mtime=0) as gz:
            gz.write(raw)


def load_episode_log(path: str | Path) -> list[dict]:
    with gzip.open(path, "rt") as f:
        return [json.loads(ln) for ln in f if ln.strip()]


def output_root() -> Path:
    return Path(os.environ.get("GRIPWORLD_OUTPUT_ROOT", "runs"))
