"""Actuation noise and dead reckoning.

Executed body motion differs from the commanded motion by
multiplier * (bias + Gaussian) per channel; translations additionally
pick up lateral slip and a small heading drift.  Dead reckoning
integrates the COMMANDED motion only, so its gap to the true pose is
exactly the accumulated actuation error.  At multiplier 0 execution is
exact and no random numbers are consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gripworld.geometry import Pose, compose


@dataclass(frozen=True)
class MotionNoiseSpec:
    """Noise magnitudes at multiplier 1; everything scales linearly.

    The forward std at multiplier 1 matches the 0.2 m step size, i.e. at
    full noise a step is as uncertain as it is long.
    """

    multiplier: float = 0.0
    trans_sigma_at_1: float = 0.2
    lat_sigma_at_1: float = 0.03
    rot_sigma_at_1: float = math.radians(45.0) * 0.25
    rot_drift_sigma_at_1: float = 0.03
    trans_bias_at_1: float = 0.0
    lat_bias_at_1: float = 0.0
    rot_bias_at_1: float = 0.0


@dataclass(frozen=True)
class MotionCommand:
    """Exactly one of translate/rotate is nonzero for a body action."""

    translate: float = 0.0
    rotate: float = 0.0


@dataclass(frozen=True)
class MotionResult:
    """Executed motion: forward, yaw, and sideways components."""

    translate: float
    rotate: float
    lateral: float


def perturb_motion(cmd: MotionCommand, spec: MotionNoiseSpec,
                   rng: np.random.Generator) -> MotionResult:
    m = spec.multiplier
    if m == 0.0:
        return MotionResult(translate=cmd.translate, rotate=cmd.rotate,
                            lateral=0.0)
    if cmd.translate != 0.0:
        fwd = cmd.translate + m * (spec.trans_bias_at_1
                                   + rng.normal(0.0, spec.trans_sigma_at_1))
        lat = m * (spec.lat_bias_at_1 + rng.normal(0.0, spec.lat_sigma_at_1))
        drift = m * rng.normal(0.0, spec.rot_drift_sigma_at_1)
        return MotionResult(translate=fwd, rotate=drift, lateral=lat)
    if cmd.rotate != 0.0:
        rot = cmd.rotate + m * (spec.rot_bias_at_1
                                + rng.normal(0.0, spec.rot_sigma_at_1))
        return MotionResult(translate=0.0, rotate=rot, lateral=0.0)
    return MotionResult(translate=0.0, rotate=0.0, lateral=0.0)


def motion_delta(result: MotionResult) -> Pose:
    """Executed motion as a pose delta in the pre-motion body frame."""
    return Pose(x=result.lateral, z=result.translate, yaw=result.rotate)


@dataclass(frozen=True)
class DeadReckonState:
    pose: Pose = Pose()


def dead_reckon(state: DeadReckonState, cmd: MotionCommand) -> DeadReckonState:
    """Advance the believed pose by the commanded motion."""
    delta = Pose(z=cmd.translate, yaw=cmd.rotate)
    return DeadReckonState(pose=compose(state.pose, delta))
