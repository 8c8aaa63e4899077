"""Command-line front end: scene/dataset generation, runs, sweeps, reports.

Every command is deterministic given its arguments; sweep output lands
under --out, or under $GRIPWORLD_OUTPUT_ROOT/<name> when --out is
omitted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .estimator import EstimatorConfig
from .geometry import CameraModel
from .harness import (
    CellParams,
    ExperimentSpec,
    load_rows_csv,
    output_root,
    run_episode,
    run_experiment,
)
from .odometry import MotionNoiseSpec
from .policies import POLICY_KINDS
from .report import emit_report, render_summary_text
from .scene import (
    SceneParams,
    generate_scene,
    generate_task_dataset,
    load_task_dataset,
    scene_to_dict,
    write_task_dataset,
)
from .sensors import (
    DegradationSpec,
    DepthNoiseSpec,
    write_depth_pgm,
    write_instance_pgm,
    write_mask_pbm,
)


def _add_camera_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cam-size", type=int, default=128,
                   help="square camera resolution in pixels")
    p.add_argument("--hfov-deg", type=float, default=90.0,
                   help="horizontal field of view in degrees")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--averaging", choices=("ema", "running_mean"),
                   default="ema", help="measurement aggregation rule")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="EMA weight of the fresh measurement")
    p.add_argument("--pose-sensor", choices=("dead_reckon", "noisy_gps"),
                   default="dead_reckon",
                   help="where the policy's ego-motion belief comes from")


def cmd_gen_scenes(args: argparse.Namespace) -> int:
    params = SceneParams()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        for seed in range(args.first_seed, args.first_seed + args.count):
            scene = generate_scene(seed, params)
            f.write(json.dumps(scene_to_dict(scene), sort_keys=True,
                               separators=(",", ":")) + "\n")
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    if args.scene_seeds:
        seeds = [int(s) for s in args.scene_seeds]
    else:
        seeds = list(range(args.first_seed, args.first_seed + args.scenes))
    params = SceneParams()
    tasks = generate_task_dataset(seeds, params, args.pairs_per_scene,
                                  master_seed=args.master_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_task_dataset(out, tasks, params)
    print(f"wrote {len(tasks)} tasks over {len(seeds)} scenes to {out}")
    return 0


def _frame_dumper(frames_dir: Path):
    frames_dir.mkdir(parents=True, exist_ok=True)

    def dump(t, depth, inst, src_mask, dst_mask):
        write_depth_pgm(frames_dir / f"depth_{t:04d}.pgm", depth)
        write_instance_pgm(frames_dir / f"inst_{t:04d}.pgm", inst)
        write_mask_pbm(frames_dir / f"src_{t:04d}.pbm", src_mask)
        write_mask_pbm(frames_dir / f"dst_{t:04d}.pbm", dst_mask)

    return dump


def cmd_run(args: argparse.Namespace) -> int:
    params, tasks = load_task_dataset(args.dataset)
    if not 0 <= args.index < len(tasks):
        print(f"error: index {args.index} outside dataset "
              f"(0..{len(tasks) - 1})", file=sys.stderr)
        return 2
    config = tasks[args.index]
    scene = generate_scene(config.scene_seed, params)
    cam = CameraModel.from_fov(args.cam_size, args.cam_size, args.hfov_deg)
    hook = _frame_dumper(Path(args.frames_dir)) if args.frames_dir else None
    record = run_episode(
        scene, config, args.policy, cam=cam,
        rng=np.random.default_rng(args.seed),
        motion=MotionNoiseSpec(multiplier=args.motion_mult),
        depth_noise=DepthNoiseSpec().scaled(args.depth_severity),
        degrade=DegradationSpec(keep_fraction=args.keep_fraction,
                                present_prob=args.present_prob,
                                confuse_prob=args.confuse_prob),
        est_config=EstimatorConfig(alpha=args.alpha,
                                   averaging=args.averaging),
        pose_sensor=args.pose_sensor,
        frame_hook=hook)
    print(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    params, tasks = load_task_dataset(args.dataset)
    out = Path(args.out) if args.out else output_root() / args.name
    spec = ExperimentSpec(
        name=args.name,
        policies=tuple(args.policies),
        episodes_per_cell=args.episodes_per_cell,
        master_seed=args.master_seed,
        cam_width=args.cam_size,
        cam_height=args.cam_size,
        hfov_deg=args.hfov_deg,
        pose_sensor=args.pose_sensor,
        averaging=args.averaging,
        alpha=args.alpha,
        motion_mults=tuple(args.motion_mults),
        depth_severities=tuple(args.depth_severities),
        keep_fractions=tuple(args.keep_fractions),
        present_probs=tuple(args.present_probs),
        confuse_probs=tuple(args.confuse_probs),
    )
    rows, _ = run_experiment(spec, tasks, params, out_dir=out,
                             progress=lambda msg: print(msg,
                                                        file=sys.stderr))
    print(render_summary_text(rows), end="")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    csv_path = run_dir / "summary.csv"
    if not csv_path.exists():
        print(f"error: {csv_path} not found", file=sys.stderr)
        return 2
    rows = load_rows_csv(csv_path)
    baseline = CellParams()
    spec_path = run_dir / "spec.json"
    if spec_path.exists():
        spec = ExperimentSpec.from_dict(json.loads(spec_path.read_text()))
        baseline = spec.baseline
    out = Path(args.out) if args.out else run_dir
    written = emit_report(rows, out, baseline)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gripworld",
        description="deterministic pick-and-displace simulator and "
                    "noise-sweep harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="render generated scenes to JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--first-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-dataset",
                       help="sample a task dataset over generated scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--scene-seeds", nargs="+", default=None,
                   help="explicit scene seeds (overrides --scenes)")
    p.add_argument("--scenes", type=int, default=10,
                   help="number of consecutive scene seeds")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--pairs-per-scene", type=int, default=5)
    p.add_argument("--master-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("run", help="run one episode and print its record")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, required=True,
                   help="task index within the dataset")
    p.add_argument("--policy", choices=POLICY_KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion-mult", type=float, default=0.0)
    p.add_argument("--depth-severity", type=float, default=0.0)
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--present-prob", type=float, default=1.0)
    p.add_argument("--confuse-prob", type=float, default=0.0)
    p.add_argument("--frames-dir", default=None,
                   help="dump per-frame PGM/PBM images here")
    _add_camera_args(p)
    _add_estimator_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep",
                       help="run a policy/noise grid and write summaries")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None,
                   help="run directory (default: output root + name)")
    p.add_argument("--name", default="sweep")
    p.add_argument("--policies", nargs="+", choices=POLICY_KINDS,
                   default=list(POLICY_KINDS))
    p.add_argument("--episodes-per-cell", type=int, default=20)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--motion-mults", nargs="*", type=float, default=[])
    p.add_argument("--depth-severities", nargs="*", type=float, default=[])
    p.add_argument("--keep-fractions", nargs="*", type=float, default=[])
    p.add_argument("--present-probs", nargs="*", type=float, default=[])
    p.add_argument("--confuse-probs", nargs="*", type=float, default=[])
    _add_camera_args(p)
    _add_estimator_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report",
                       help="render curve CSVs and figures for a sweep")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None,
                   help="write report files here instead of the run dir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
