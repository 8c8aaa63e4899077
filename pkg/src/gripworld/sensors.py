"""Depth/instance rendering, mask degradations, and depth noise.

Rendering casts one ray per pixel against every axis-aligned box in the
frame.  Rays are parameterized with a unit forward component in the
camera frame, so the hit parameter t IS the planar z-depth that
:func:`gripworld.geometry.backproject_pixel` expects.  Pixels with no
hit inside the sensor range carry the max_range sentinel and the
background id -1.

Mask degradations model three failure modes of an upstream segmenter:
random pixel dropout within the mask, whole-frame dropout, and swapping
the target's mask for another visible object's.  Depth noise is a
simplified parametric stack: lateral sub-pixel shift, additive Gaussian
whose sigma grows with range, then quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from gripworld.geometry import CameraModel, Pose
from gripworld.scene import Scene

BACKGROUND_ID = -1


@dataclass(frozen=True)
class DepthFrame:
    """Planar z-depth per pixel; max_range doubles as the no-return value."""

    values: np.ndarray
    max_range: float

    def valid(self) -> np.ndarray:
        return self.values < self.max_range


@dataclass(frozen=True)
class InstanceFrame:
    """Per-pixel instance id; movables >= 0, statics < -1, background -1."""

    ids: np.ndarray


@njit(cache=True)
def _raycast(ox, oy, oz, cos_yaw, sin_yaw, fx, fy, cx, cy,
             boxes, ids, max_range, depth_out, inst_out):
    h, w = depth_out.shape
    n = boxes.shape[0]
    for v in range(h):
        dy = -((v - cy) / fy)          # optical y-down -> level y-up
        for u in range(w):
            dx = (u - cx) / fx
            wx = dx * cos_yaw + sin_yaw
            wy = dy
            wz = -dx * sin_yaw + cos_yaw
            ix = 1.0 / wx if abs(wx) > 1e-12 else 1e30
            iy = 1.0 / wy if abs(wy) > 1e-12 else 1e30
            iz = 1.0 / wz if abs(wz) > 1e-12 else 1e30
            best_t = max_range
            best_id = BACKGROUND_ID
            for b in range(n):
                t1 = (boxes[b, 0] - ox) * ix
                t2 = (boxes[b, 3] - ox) * ix
                if t1 > t2:
                    t1, t2 = t2, t1
                tn = t1
                tf = t2
                t1 = (boxes[b, 1] - oy) * iy
                t2 = (boxes[b, 4] - oy) * iy
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tn:
                    tn = t1
                if t2 < tf:
                    tf = t2
                t1 = (boxes[b, 2] - oz) * iz
                t2 = (boxes[b, 5] - oz) * iz
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tn:
                    tn = t1
                if t2 < tf:
                    tf = t2
                if tf >= tn and 1e-9 < tn < best_t:
                    best_t = tn
                    best_id = ids[b]
            depth_out[v, u] = best_t
            inst_out[v, u] = best_id


def render_boxes(boxes: np.ndarray, ids: np.ndarray, camera_pose: Pose,
                 cam: CameraModel) -> tuple[DepthFrame, InstanceFrame]:
    """Raycast a set of world boxes from a level camera pose."""
    boxes64 = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6)
    ids32 = np.ascontiguousarray(ids, dtype=np.int32)
    depth = np.empty((cam.height, cam.width), dtype=np.float64)
    inst = np.empty((cam.height, cam.width), dtype=np.int32)
    _raycast(camera_pose.x, camera_pose.y, camera_pose.z,
             math.cos(camera_pose.yaw), math.sin(camera_pose.yaw),
             cam.fx, cam.fy, cam.cx, cam.cy,
             boxes64, ids32, cam.max_range, depth, inst)
    return DepthFrame(values=depth, max_range=cam.max_range), \
        InstanceFrame(ids=inst)


def scene_render_arrays(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Box array and id array for a scene at spawn state.

    Statics come first with ids -2, -3, ... so ties on shared faces
    resolve to the static; movable object i keeps id i.
    """
    boxes = [s.box.as_array() for s in scene.statics]
    ids = [-(2 + k) for k in range(len(scene.statics))]
    for i, o in enumerate(scene.objects):
        boxes.append(o.box.as_array())
        ids.append(i)
    if not boxes:
        return np.zeros((0, 6)), np.zeros(0, dtype=np.int32)
    return np.stack(boxes), np.array(ids, dtype=np.int32)


def render(scene: Scene, camera_pose: Pose,
           cam: CameraModel) -> tuple[DepthFrame, InstanceFrame]:
    boxes, ids = scene_render_arrays(scene)
    return render_boxes(boxes, ids, camera_pose, cam)


def gt_mask(inst: InstanceFrame, object_index: int) -> np.ndarray:
    """Ground-truth boolean mask of one movable object."""
    return inst.ids == object_index


# ---------------------------------------------------------------------------
# Mask degradations


@dataclass(frozen=True)
class DegradationSpec:
    """Identity by default: full masks, always present, never confused."""

    keep_fraction: float = 1.0
    present_prob: float = 1.0
    confuse_prob: float = 0.0


def degrade_partial(mask: np.ndarray, keep_fraction: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Keep a uniform subset of exactly round(keep_fraction * |mask|) pixels."""
    if keep_fraction >= 1.0:
        return mask.copy()
    vs, us = np.nonzero(mask)
    n = vs.size
    out = np.zeros_like(mask)
    if n == 0:
        return out
    k = int(round(keep_fraction * n))
    if k <= 0:
        return out
    pick = rng.choice(n, size=k, replace=False)
    out[vs[pick], us[pick]] = True
    return out


def degrade_missing(mask: np.ndarray, present_prob: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Whole-frame dropout: one Bernoulli draw per call."""
    present = rng.random() < present_prob
    return mask.copy() if present else np.zeros_like(mask)


def degrade_confuse(mask: np.ndarray, inst: InstanceFrame, target_index: int,
                    confuse_prob: float,
                    rng: np.random.Generator) -> np.ndarray:
    """With the given probability, swap in another visible object's mask.

    "Another object" means a movable instance (id >= 0) present in the
    frame; if none is visible the swap produces an empty mask.
    """
    if confuse_prob <= 0.0 or rng.random() >= confuse_prob:
        return mask.copy()
    present = np.unique(inst.ids)
    others = [int(i) for i in present if i >= 0 and i != target_index]
    if not others:
        return np.zeros_like(mask)
    chosen = others[int(rng.integers(len(others)))]
    return inst.ids == chosen


def apply_degradations(mask: np.ndarray, inst: InstanceFrame,
                       target_index: int, spec: DegradationSpec,
                       rng: np.random.Generator) -> np.ndarray:
    out = degrade_confuse(mask, inst, target_index, spec.confuse_prob, rng)
    out = degrade_missing(out, spec.present_prob, rng)
    out = degrade_partial(out, spec.keep_fraction, rng)
    return out


# ---------------------------------------------------------------------------
# Depth noise


@dataclass(frozen=True)
class DepthNoiseSpec:
    """Parametric depth corruption; all amplitudes zero means identity.

    sigma(z) = c0 + c1*z + c2*z^2 (clipped at 0) is the additive noise
    std in meters at planar depth z.
    """

    sigma_coeffs: tuple[float, float, float] = (0.0015, -0.00152, 0.0019)
    lateral_shift_px: float = 0.5
    quantization_step: float = 0.005

    def scaled(self, severity: float) -> "DepthNoiseSpec":
        return DepthNoiseSpec(
            sigma_coeffs=tuple(c * severity for c in self.sigma_coeffs),
            lateral_shift_px=self.lateral_shift_px * severity,
            quantization_step=self.quantization_step * severity,
        )

    def is_identity(self) -> bool:
        return (all(c == 0.0 for c in self.sigma_coeffs)
                and self.lateral_shift_px == 0.0
                and self.quantization_step == 0.0)


_MIN_DEPTH = 1e-3


def apply_depth_noise(values: np.ndarray, spec: DepthNoiseSpec,
                      rng: np.random.Generator,
                      max_range: float) -> np.ndarray:
    """Corrupt a depth grid; no-return pixels pass through untouched."""
    out = np.array(values, dtype=np.float64, copy=True)
    if spec.is_identity():
        return out
    h, w = out.shape
    valid = out < max_range
    if spec.lateral_shift_px > 0.0:
        du = rng.normal(0.0, spec.lateral_shift_px, size=(h, w))
        dv = rng.normal(0.0, spec.lateral_shift_px, size=(h, w))
        uu = np.clip(np.rint(np.arange(w)[None, :] + du), 0, w - 1).astype(np.intp)
        vv = np.clip(np.rint(np.arange(h)[:, None] + dv), 0, h - 1).astype(np.intp)
        shifted = np.asarray(values, dtype=np.float64)[vv, uu]
        out[valid] = shifted[valid]
    c0, c1, c2 = spec.sigma_coeffs
    if c0 != 0.0 or c1 != 0.0 or c2 != 0.0:
        g = rng.normal(0.0, 1.0, size=(h, w))
        live = valid & (out < max_range)
        sigma = np.clip(c0 + c1 * out + c2 * out * out, 0.0, None)
        out[live] += (g * sigma)[live]
    if spec.quantization_step > 0.0:
        q = spec.quantization_step
        live = valid & (out < max_range)
        out[live] = np.round(out[live] / q) * q
    live = valid & (out < max_range)
    out[live] = np.clip(out[live], _MIN_DEPTH, max_range)
    out[valid & ~live] = max_range
    return out


# ---------------------------------------------------------------------------
# Portable dumps (PNG-free)


def write_depth_pgm(path: str | Path, depth: DepthFrame) -> None:
    """16-bit big-endian PGM in millimeters."""
    mm = np.clip(np.rint(depth.values * 1000.0), 0, 65535).astype(">u2")
    h, w = mm.shape
    with Path(path).open("wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def write_mask_pbm(path: str | Path, mask: np.ndarray) -> None:
    """Packed 1-bit PBM (P4), MSB-first rows."""
    h, w = mask.shape
    bits = np.packbits(mask.astype(np.uint8), axis=1)
    with Path(path).open("wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(bits.tobytes())


def write_instance_pgm(path: str | Path, inst: InstanceFrame) -> None:
    """16-bit PGM of instance ids offset by +2 so statics stay visible."""
    vals = np.clip(inst.ids.astype(np.int64) + 2, 0, 65535).astype(">u2")
    h, w = vals.shape
    with Path(path).open("wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(vals.tobytes())
