"""Target localization from masked depth across ego-motion.

The estimate lives in the agent's CURRENT body frame and is maintained
by a per-tick propagate-then-observe cycle: propagation re-expresses the
stored position through the inverse of the believed ego-motion delta
(dead reckoning, not ground truth), then a non-empty mask contributes a
fresh backprojected surface centroid.  Fusion is an exponential moving
average by default; a running-mean mode weighs all observations equally.
Once a target has been seen the estimate never reverts to unobserved.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gripworld.geometry import (
    CameraModel,
    Point3,
    Pose,
    backproject_masked_centroid,
    invert,
    optical_to_body,
    transform_point,
)

UNOBSERVED = "unobserved"
TRACKING = "tracking"


@dataclass(frozen=True)
class EstimatorConfig:
    alpha: float = 0.5
    averaging: str = "ema"      # "ema" | "running_mean"


@dataclass(frozen=True)
class TargetEstimate:
    status: str = UNOBSERVED
    position: Point3 | None = None
    observation_count: int = 0
    steps_since_seen: int = 0
    propagate_skipped: bool = False


def measure_target(depth_values: np.ndarray, mask: np.ndarray,
                   cam: CameraModel, camera_to_body: Pose) -> Point3 | None:
    """One frame's body-frame position measurement, or None if unseen."""
    c_opt = backproject_masked_centroid(depth_values, mask, cam)
    if c_opt is None:
        return None
    return transform_point(camera_to_body, optical_to_body(c_opt))


def propagate(est: TargetEstimate, ego_delta: Pose) -> TargetEstimate:
    """Carry the estimate across one believed ego-motion."""
    if est.status != TRACKING:
        return replace(est, propagate_skipped=True)
    moved = transform_point(invert(ego_delta), est.position)
    return replace(est, position=moved,
                   steps_since_seen=est.steps_since_seen + 1,
                   propagate_skipped=False)


def _fuse(est: TargetEstimate, fresh: Point3,
          config: EstimatorConfig) -> TargetEstimate:
    if est.status != TRACKING:
        return TargetEstimate(status=TRACKING, position=fresh,
                              observation_count=1, steps_since_seen=0)
    if config.averaging == "running_mean":
        alpha = 1.0 / (est.observation_count + 1)
    else:
        alpha = config.alpha
    p = est.position
    blended = Point3(
        (1.0 - alpha) * p.x + alpha * fresh.x,
        (1.0 - alpha) * p.y + alpha * fresh.y,
        (1.0 - alpha) * p.z + alpha * fresh.z,
    )
    return replace(est, position=blended,
                   observation_count=est.observation_count + 1,
                   steps_since_seen=0)


def observe(est: TargetEstimate, depth_values: np.ndarray, mask: np.ndarray,
            cam: CameraModel, camera_to_body: Pose,
            config: EstimatorConfig, *,
            tick_on_miss: bool = True) -> TargetEstimate:
    """Fold one frame into the estimate.

    An empty (or fully invalid) mask is a miss, not an error: the
    position stays and, for a standalone call, steps_since_seen ticks.
    estimate_step disables that tick because its propagate already
    counted the step.
    """
    fresh = measure_target(depth_values, mask, cam, camera_to_body)
    if fresh is None:
        if tick_on_miss and est.status == TRACKING:
            return replace(est, steps_since_seen=est.steps_since_seen + 1)
        return est
    return _fuse(est, fresh, config)


def estimate_step(est: TargetEstimate, ego_delta: Pose,
                  depth_values: np.ndarray, mask: np.ndarray,
                  cam: CameraModel, camera_to_body: Pose,
                  config: EstimatorConfig) -> TargetEstimate:
    """One tick: propagate through ego-motion, then observe the frame."""
    est = propagate(est, ego_delta)
    return observe(est, depth_values, mask, cam, camera_to_body, config,
                   tick_on_miss=False)
