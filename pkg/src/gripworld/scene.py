"""Procedural box-world scenes, reachability, and task datasets.

A scene is a closed rectangular room (four walls, floor, ceiling), a few
furniture boxes, and a handful of movable category objects resting on
the floor or a furniture top.  Everything is an axis-aligned box; all
randomness flows from explicit seeds so generation is reproducible bit
for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gripworld.errors import GenerationError, SchemaError
from gripworld.geometry import Pose

SCHEMA_VERSION = 1

AGENT_RADIUS = 0.2
AGENT_HEIGHT = 1.0
GRID_STEP = 0.2
YAW_BINS = 8

# Canonical half-meter-scale object sizes (w, h, d) in meters.
CATEGORY_SIZES = {
    "Apple": (0.08, 0.08, 0.08),
    "Bread": (0.25, 0.10, 0.12),
    "Tomato": (0.07, 0.07, 0.07),
    "Lettuce": (0.15, 0.12, 0.15),
    "Pot": (0.22, 0.14, 0.22),
    "Mug": (0.09, 0.10, 0.09),
    "Potato": (0.09, 0.06, 0.06),
    "Pan": (0.26, 0.06, 0.26),
    "Egg": (0.05, 0.06, 0.05),
    "Spatula": (0.30, 0.03, 0.08),
    "Cup": (0.08, 0.09, 0.08),
    "SoapBottle": (0.07, 0.18, 0.07),
}

_WALL_THICKNESS = 0.1


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; min/max corners in world coordinates."""

    xmin: float
    ymin: float
    zmin: float
    xmax: float
    ymax: float
    zmax: float

    @classmethod
    def from_center(cls, cx: float, cy: float, cz: float,
                    sx: float, sy: float, sz: float) -> "Box":
        return cls(cx - sx / 2, cy - sy / 2, cz - sz / 2,
                   cx + sx / 2, cy + sy / 2, cz + sz / 2)

    def center(self) -> tuple[float, float, float]:
        return ((self.xmin + self.xmax) / 2,
                (self.ymin + self.ymax) / 2,
                (self.zmin + self.zmax) / 2)

    def size(self) -> tuple[float, float, float]:
        return (self.xmax - self.xmin,
                self.ymax - self.ymin,
                self.zmax - self.zmin)

    def translated(self, dx: float, dy: float, dz: float) -> "Box":
        return Box(self.xmin + dx, self.ymin + dy, self.zmin + dz,
                   self.xmax + dx, self.ymax + dy, self.zmax + dz)

    def inflated(self, m: float) -> "Box":
        return Box(self.xmin - m, self.ymin - m, self.zmin - m,
                   self.xmax + m, self.ymax + m, self.zmax + m)

    def contains_point(self, x: float, y: float, z: float) -> bool:
        return (self.xmin <= x <= self.xmax
                and self.ymin <= y <= self.ymax
                and self.zmin <= z <= self.zmax)

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.zmin,
                         self.xmax, self.ymax, self.zmax], dtype=np.float64)


def boxes_overlap(a: Box, b: Box) -> bool:
    """True on interpenetration; shared faces do not count."""
    return (a.xmin < b.xmax and a.xmax > b.xmin
            and a.ymin < b.ymax and a.ymax > b.ymin
            and a.zmin < b.zmax and a.zmax > b.zmin)


def footprints_overlap(a: Box, b: Box) -> bool:
    return (a.xmin < b.xmax and a.xmax > b.xmin
            and a.zmin < b.zmax and a.zmax > b.zmin)


def cylinder_intersects_box(cx: float, cz: float, radius: float,
                            y0: float, y1: float, box: Box) -> bool:
    """Vertical-cylinder vs box overlap, strict (touching is allowed)."""
    if not (box.ymin < y1 and box.ymax > y0):
        return False
    dx = max(box.xmin - cx, 0.0, cx - box.xmax)
    dz = max(box.zmin - cz, 0.0, cz - box.zmax)
    return dx * dx + dz * dz < radius * radius


@dataclass(frozen=True)
class StaticBox:
    uid: str
    kind: str        # "wall" | "floor" | "ceiling" | "furniture"
    box: Box


@dataclass(frozen=True)
class SceneObject:
    uid: str
    category: str
    box: Box
    movable: bool = True


@dataclass(frozen=True)
class Scene:
    seed: int
    bounds: Box
    statics: list[StaticBox]
    objects: list[SceneObject]

    def furniture(self) -> list[StaticBox]:
        return [s for s in self.statics if s.kind == "furniture"]

    def object_index(self, uid: str) -> int:
        for i, o in enumerate(self.objects):
            if o.uid == uid:
                return i
        raise KeyError(uid)

    def static_boxes_array(self) -> np.ndarray:
        if not self.statics:
            return np.zeros((0, 6), dtype=np.float64)
        return np.stack([s.box.as_array() for s in self.statics])


@dataclass(frozen=True)
class SceneParams:
    """Knobs for the generator; tuples are inclusive sampling ranges."""

    room_width: tuple[float, float] = (3.8, 5.0)
    room_depth: tuple[float, float] = (3.8, 5.0)
    wall_height: float = 2.5
    # Furniture stays free-standing and at most 0.9 m across so any
    # supported object is inside the 0.7 m arm reach from some side.
    furniture_count: tuple[int, int] = (2, 3)
    furniture_width: tuple[float, float] = (0.6, 0.9)
    furniture_depth: tuple[float, float] = (0.6, 0.9)
    furniture_height: tuple[float, float] = (0.5, 0.9)
    object_count: tuple[int, int] = (6, 8)
    categories: tuple[str, ...] = tuple(sorted(CATEGORY_SIZES))
    floor_prob: float = 0.2
    wall_margin: float = 0.5
    furniture_gap: float = 0.6
    max_retries: int = 500


def _room_shell(w: float, d: float, h: float) -> list[StaticBox]:
    t = _WALL_THICKNESS
    return [
        StaticBox("floor", "floor", Box(-t, -t, -t, w + t, 0.0, d + t)),
        StaticBox("ceiling", "ceiling", Box(-t, h, -t, w + t, h + t, d + t)),
        StaticBox("wall_west", "wall", Box(-t, 0.0, -t, 0.0, h, d + t)),
        StaticBox("wall_east", "wall", Box(w, 0.0, -t, w + t, h, d + t)),
        StaticBox("wall_south", "wall", Box(-t, 0.0, -t, w + t, h, 0.0)),
        StaticBox("wall_north", "wall", Box(-t, 0.0, d, w + t, h, d + t)),
    ]


def _place_furniture(rng, params: SceneParams, w: float, d: float,
                     seed: int) -> list[StaticBox]:
    target = int(rng.integers(params.furniture_count[0],
                              params.furniture_count[1] + 1))
    placed: list[StaticBox] = []
    grid = 0.05
    for i in range(target):
        done = False
        for attempt in range(20):
            # Shrink toward the minimum size as attempts fail.
            shrink = 1.0 - 0.5 * attempt / 19.0
            fw = float(rng.uniform(params.furniture_width[0],
                                   max(params.furniture_width[0],
                                       params.furniture_width[1] * shrink)))
            fd = float(rng.uniform(params.furniture_depth[0],
                                   max(params.furniture_depth[0],
                                       params.furniture_depth[1] * shrink)))
            fh = float(rng.uniform(*params.furniture_height))
            xs = np.arange(params.wall_margin,
                           w - params.wall_margin - fw + 1e-9, grid)
            zs = np.arange(params.wall_margin,
                           d - params.wall_margin - fd + 1e-9, grid)
            if xs.size == 0 or zs.size == 0:
                continue
            x0g, z0g = np.meshgrid(xs, zs, indexing="ij")
            ok = np.ones(x0g.shape, dtype=bool)
            # Late attempts accept the tightest gap the body still passes.
            gap = params.furniture_gap if attempt < 10 else 0.45
            for p in placed:
                clash = ((x0g < p.box.xmax + gap)
                         & (x0g + fw > p.box.xmin - gap)
                         & (z0g < p.box.zmax + gap)
                         & (z0g + fd > p.box.zmin - gap))
                ok &= ~clash
            flat = np.flatnonzero(ok)
            if flat.size == 0:
                continue
            pick = int(flat[int(rng.integers(flat.size))])
            x0 = float(x0g.flat[pick])
            z0 = float(z0g.flat[pick])
            placed.append(StaticBox(
                f"table_{i}", "furniture",
                Box(x0, 0.0, z0, x0 + fw, fh, z0 + fd)))
            done = True
            break
        if not done:
            break   # crowded room: settle for fewer, minimum enforced below
    if len(placed) < params.furniture_count[0]:
        raise GenerationError(
            f"scene generation failed for seed {seed}: placed "
            f"{len(placed)} furniture pieces, need "
            f"{params.furniture_count[0]}")
    return placed


def _place_objects(rng, params: SceneParams, bounds: Box,
                   furniture: list[StaticBox], seed: int) -> list[SceneObject]:
    count = int(rng.integers(params.object_count[0],
                             params.object_count[1] + 1))
    cats = list(params.categories)
    order = rng.permutation(len(cats))
    chosen = [cats[order[i % len(cats)]] for i in range(count)]
    objects: list[SceneObject] = []
    for i, category in enumerate(chosen):
        sx, sy, sz = CATEGORY_SIZES[category]
        hx, hz = sx / 2, sz / 2
        for _ in range(params.max_retries):
            use_floor = (not furniture) or (rng.random() < params.floor_prob)
            if use_floor:
                top = 0.0
                x_lo, x_hi = bounds.xmin + hx, bounds.xmax - hx
                z_lo, z_hi = bounds.zmin + hz, bounds.zmax - hz
            else:
                sup = furniture[int(rng.integers(len(furniture)))].box
                top = sup.ymax
                x_lo, x_hi = sup.xmin + hx, sup.xmax - hx
                z_lo, z_hi = sup.zmin + hz, sup.zmax - hz
            if x_hi <= x_lo or z_hi <= z_lo:
                continue
            cx = float(rng.uniform(x_lo, x_hi))
            cz = float(rng.uniform(z_lo, z_hi))
            cand = Box(cx - hx, top, cz - hz, cx + hx, top + sy, cz + hz)
            if any(boxes_overlap(cand, o.box) for o in objects):
                continue
            if any(boxes_overlap(cand, f.box) for f in furniture):
                continue
            if use_floor and any(footprints_overlap(cand, f.box)
                                 for f in furniture):
                continue   # keep floor objects out from under tables
            objects.append(SceneObject(f"{category}_{i}", category, cand))
            break
        else:
            break   # no room left; minimum enforced below
    if len(objects) < params.object_count[0]:
        raise GenerationError(
            f"scene generation failed for seed {seed}: placed "
            f"{len(objects)} objects, need {params.object_count[0]}")
    return objects


def generate_scene(seed: int, params: SceneParams) -> Scene:
    """Deterministically generate a scene from (seed, params)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    w = float(rng.uniform(*params.room_width))
    d = float(rng.uniform(*params.room_depth))
    h = params.wall_height
    statics = _room_shell(w, d, h)
    furniture = _place_furniture(rng, params, w, d, seed)
    statics += furniture
    objects = _place_objects(rng, params, Box(0, 0, 0, w, h, d),
                             furniture, seed)
    return Scene(seed=seed, bounds=Box(0.0, 0.0, 0.0, w, h, d),
                 statics=statics, objects=objects)


def reachable_positions(scene: Scene, step: float = GRID_STEP) -> list[tuple[float, float]]:
    """Grid cells where the body cylinder stands collision-free.

    The grid is anchored at world-coordinate multiples of the step, so a
    finer step yields a superset of a coarser one.
    """
    b = scene.bounds
    kx0 = math.ceil((b.xmin + AGENT_RADIUS) / step - 1e-9)
    kx1 = math.floor((b.xmax - AGENT_RADIUS) / step + 1e-9)
    kz0 = math.ceil((b.zmin + AGENT_RADIUS) / step - 1e-9)
    kz1 = math.floor((b.zmax - AGENT_RADIUS) / step + 1e-9)
    blockers = [s.box for s in scene.statics] + [o.box for o in scene.objects]
    out = []
    for kx in range(kx0, kx1 + 1):
        x = kx * step
        for kz in range(kz0, kz1 + 1):
            z = kz * step
            if any(cylinder_intersects_box(x, z, AGENT_RADIUS, 0.0,
                                           AGENT_HEIGHT, blk)
                   for blk in blockers):
                continue
            out.append((x, z))
    return out


# ---------------------------------------------------------------------------
# Task configurations and datasets


@dataclass(frozen=True)
class TaskConfig:
    """One episode setup: which scene, which object pair, where the agent starts."""

    scene_seed: int
    source_index: int
    dest_index: int
    source_category: str
    dest_category: str
    agent_start: Pose


def generate_task_dataset(scene_seeds: list[int], params: SceneParams,
                          pairs_per_scene: int,
                          master_seed: int = 0) -> list[TaskConfig]:
    """Sample (source, dest, start) triples per scene, without pair repeats."""
    configs: list[TaskConfig] = []
    for scene_seed in scene_seeds:
        scene = generate_scene(scene_seed, params)
        cells = reachable_positions(scene)
        if not cells:
            raise GenerationError(
                f"scene generation failed for seed {scene_seed}: "
                f"no reachable agent positions")
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([master_seed, scene_seed])))
        n = len(scene.objects)
        ordered_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        take = min(pairs_per_scene, len(ordered_pairs))
        pick = rng.choice(len(ordered_pairs), size=take, replace=False)
        for flat in pick:
            i, j = ordered_pairs[int(flat)]
            x, z = cells[int(rng.integers(len(cells)))]
            yaw_bin = int(rng.integers(YAW_BINS))
            start = Pose(x=x, z=z, y=0.0, yaw=yaw_bin * (2 * math.pi / YAW_BINS))
            configs.append(TaskConfig(
                scene_seed=scene_seed,
                source_index=i, dest_index=j,
                source_category=scene.objects[i].category,
                dest_category=scene.objects[j].category,
                agent_start=start))
    return configs


# ---------------------------------------------------------------------------
# Serialization (schema_version 1 throughout)


def _box_to_list(b: Box) -> list[float]:
    return [b.xmin, b.ymin, b.zmin, b.xmax, b.ymax, b.zmax]


def _box_from_list(v: list[float]) -> Box:
    return Box(*[float(x) for x in v])


def _pose_to_dict(p: Pose) -> dict:
    return {"x": p.x, "z": p.z, "y": p.y, "yaw": p.yaw}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(x=float(d["x"]), z=float(d["z"]), y=float(d["y"]),
                yaw=float(d["yaw"]))


def _require_version(d: dict, what: str) -> None:
    v = d.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaError(f"{what}: unsupported schema_version {v!r}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scene",
        "seed": scene.seed,
        "bounds": _box_to_list(scene.bounds),
        "statics": [{"uid": s.uid, "kind": s.kind, "box": _box_to_list(s.box)}
                    for s in scene.statics],
        "objects": [{"uid": o.uid, "category": o.category,
                     "box": _box_to_list(o.box), "movable": o.movable}
                    for o in scene.objects],
    }


def scene_from_dict(d: dict) -> Scene:
    _require_version(d, "scene")
    return Scene(
        seed=int(d["seed"]),
        bounds=_box_from_list(d["bounds"]),
        statics=[StaticBox(s["uid"], s["kind"], _box_from_list(s["box"]))
                 for s in d["statics"]],
        objects=[SceneObject(o["uid"], o["category"], _box_from_list(o["box"]),
                             bool(o["movable"]))
                 for o in d["objects"]],
    )


def params_to_dict(p: SceneParams) -> dict:
    return {
        "room_width": list(p.room_width),
        "room_depth": list(p.room_depth),
        "wall_height": p.wall_height,
        "furniture_count": list(p.furniture_count),
        "furniture_width": list(p.furniture_width),
        "furniture_depth": list(p.furniture_depth),
        "furniture_height": list(p.furniture_height),
        "object_count": list(p.object_count),
        "categories": list(p.categories),
        "floor_prob": p.floor_prob,
        "wall_margin": p.wall_margin,
        "furniture_gap": p.furniture_gap,
        "max_retries": p.max_retries,
    }


def params_from_dict(d: dict) -> SceneParams:
    return SceneParams(
        room_width=tuple(d["room_width"]),
        room_depth=tuple(d["room_depth"]),
        wall_height=float(d["wall_height"]),
        furniture_count=tuple(int(x) for x in d["furniture_count"]),
        furniture_width=tuple(d["furniture_width"]),
        furniture_depth=tuple(d["furniture_depth"]),
        furniture_height=tuple(d["furniture_height"]),
        object_count=tuple(int(x) for x in d["object_count"]),
        categories=tuple(d["categories"]),
        floor_prob=float(d["floor_prob"]),
        wall_margin=float(d["wall_margin"]),
        furniture_gap=float(d["furniture_gap"]),
        max_retries=int(d["max_retries"]),
    )


def config_to_dict(cfg: TaskConfig) -> dict:
    return {
        "scene_seed": cfg.scene_seed,
        "source_index": cfg.source_index,
        "dest_index": cfg.dest_index,
        "source_category": cfg.source_category,
        "dest_category": cfg.dest_category,
        "agent_start": _pose_to_dict(cfg.agent_start),
    }


def config_from_dict(d: dict) -> TaskConfig:
    return TaskConfig(
        scene_seed=int(d["scene_seed"]),
        source_index=int(d["source_index"]),
        dest_index=int(d["dest_index"]),
        source_category=d["source_category"],
        dest_category=d["dest_category"],
        agent_start=_pose_from_dict(d["agent_start"]),
    )


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def write_task_dataset(path: str | Path, configs: list[TaskConfig],
                       params: SceneParams) -> None:
    """JSON-lines: a header record, then one record per task config."""
    path = Path(path)
    with path.open("w") as f:
        f.write(_dump_line({"schema_version": SCHEMA_VERSION,
                            "kind": "task_dataset",
                            "params": params_to_dict(params)}))
        for cfg in configs:
            f.write(_dump_line(config_to_dict(cfg)))


def load_task_dataset(path: str | Path) -> tuple[SceneParams, list[TaskConfig]]:
    path = Path(path)
    with path.open() as f:
        lines = [ln for ln in f if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    _require_version(header, str(path))
    if header.get("kind") != "task_dataset":
        raise SchemaError(f"{path}: not a task dataset")
    params = params_from_dict(header["params"])
    configs = [config_from_dict(json.loads(ln)) for ln in lines[1:]]
    return params, configs
