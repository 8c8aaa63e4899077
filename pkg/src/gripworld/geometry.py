"""Planar-rigid pose algebra and pinhole depth backprojection.

Frames
------
World and body frames are x-right, y-up, z-forward.  Yaw is the heading
about the vertical axis, positive turning right, so a frame's forward
axis points along (sin yaw, 0, cos yaw) in its parent.  Poses form a
group under :func:`compose` (planar rigid motion plus an additive height
channel); yaw is kept in (-pi, pi].

The camera optical frame follows the usual depth-image convention
instead: x-right, y-DOWN, z-forward.  :func:`backproject_pixel` returns
optical-frame points; :func:`optical_to_body` is the one-line flip back
into the level body convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to the interval (-pi, pi]."""
    a = math.fmod(angle, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


@dataclass(frozen=True)
class Point3:
    """A 3D point; the frame it lives in is the caller's business."""

    x: float
    y: float
    z: float

    def __add__(self, other: "Point3") -> "Point3":
        return Point3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Point3") -> "Point3":
        return Point3(self.x - other.x, self.y - other.y, self.z - other.z)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def planar_range(self) -> float:
        """Distance ignoring the height channel."""
        return math.hypot(self.x, self.z)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Pose:
    """Planar rigid transform with a height offset.

    (x, z) locate the frame origin in the parent's ground plane, y is the
    height offset, yaw the heading.  Identity by default.
    """

    x: float = 0.0
    z: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def forward(self) -> Point3:
        """Unit forward axis expressed in the parent frame."""
        return Point3(math.sin(self.yaw), 0.0, math.cos(self.yaw))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose of b's frame in a's parent, given b expressed in a's frame."""
    c = math.cos(a.yaw)
    s = math.sin(a.yaw)
    return Pose(
        x=a.x + b.x * c + b.z * s,
        z=a.z - b.x * s + b.z * c,
        y=a.y + b.y,
        yaw=a.yaw + b.yaw,
    )


def invert(pose: Pose) -> Pose:
    """The pose q with compose(pose, q) == identity."""
    c = math.cos(pose.yaw)
    s = math.sin(pose.yaw)
    return Pose(
        x=-pose.x * c + pose.z * s,
        z=-pose.x * s - pose.z * c,
        y=-pose.y,
        yaw=-pose.yaw,
    )


def transform_point(pose: Pose, p: Point3) -> Point3:
    """Re-express a point from pose's frame into its parent frame."""
    c = math.cos(pose.yaw)
    s = math.sin(pose.yaw)
    return Point3(
        x=pose.x + p.x * c + p.z * s,
        y=pose.y + p.y,
        z=pose.z - p.x * s + p.z * c,
    )


def bearing(p: Point3) -> float:
    """Horizontal bearing of a body-frame point; 0 dead ahead, +right."""
    return math.atan2(p.x, p.z)


def optical_to_body(p: Point3) -> Point3:
    """Flip an optical-frame (y-down) point into the y-up body convention."""
    return Point3(p.x, -p.y, p.z)


def body_to_optical(p: Point3) -> Point3:
    return Point3(p.x, -p.y, p.z)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the sensor's maximum range."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    max_range: float

    @classmethod
    def from_fov(cls, width: int = 224, height: int = 224,
                 hfov_deg: float = 90.0, max_range: float = 5.0) -> "CameraModel":
        """Derive intrinsics from a horizontal FOV, assuming square pixels."""
        half_h = math.radians(hfov_deg) / 2.0
        fx = (width / 2.0) / math.tan(half_h)
        vfov_half = math.atan((height / width) * math.tan(half_h))
        fy = (height / 2.0) / math.tan(vfov_half)
        return cls(width=width, height=height, fx=fx, fy=fy,
                   cx=width / 2.0, cy=height / 2.0, max_range=max_range)


def backproject_pixel(cam: CameraModel, u: float, v: float, depth: float) -> Point3:
    """Lift one pixel with a planar depth into the camera optical frame.

    Raises ValueError on a non-finite or non-positive depth and on pixel
    coordinates outside the frame.
    """
    if not math.isfinite(depth) or depth <= 0.0:
        raise ValueError(f"depth must be finite and positive, got {depth!r}")
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ValueError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} frame")
    return Point3(
        x=(u - cam.cx) * depth / cam.fx,
        y=(v - cam.cy) * depth / cam.fy,
        z=depth,
    )


def backproject_masked_centroid(depth: np.ndarray, mask: np.ndarray,
                                cam: CameraModel) -> Point3 | None:
    """Mean of backprojected pixels under a mask, in the optical frame.

    Pixels with no return (at or beyond max_range) or a non-finite or
    non-positive depth are excluded.  An empty usable mask means no
    observation and returns None.  The mean uses exact summation so a
    brute-force loop lands on the same bits.
    """
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} vs mask {mask.shape} size mismatch")
    if depth.shape != (cam.height, cam.width):
        raise ValueError(
            f"frame {depth.shape} does not match camera "
            f"{cam.height}x{cam.width}")
    d = np.asarray(depth, dtype=np.float64)
    usable = mask & np.isfinite(d) & (d > 0.0) & (d < cam.max_range)
    vs, us = np.nonzero(usable)
    if vs.size == 0:
        return None
    dsel = d[vs, us]
    xs = (us - cam.cx) * dsel / cam.fx
    ys = (vs - cam.cy) * dsel / cam.fy
    n = vs.size
    return Point3(
        x=math.fsum(xs) / n,
        y=math.fsum(ys) / n,
        z=math.fsum(dsel) / n,
    )
