"""Desk-scale pick-and-displace simulator with a visual target estimator.

A deterministic box-world: an agent with a magnetic gripper must pick up
a source object and carry it next to a destination object, localizing
both from instance masks over a depth camera while its odometry and
sensing degrade in configurable ways.  A sweep harness runs scripted
policies over noise and mask-degradation grids and reports success
metrics.
"""

__version__ = "0.1.0"

from gripworld.geometry import CameraModel, Point3, Pose  # noqa: F401
from gripworld.harness import (  # noqa: F401
    CellParams,
    EpisodeRecord,
    ExperimentSpec,
    run_episode,
    run_experiment,
)
from gripworld.policies import POLICY_KINDS, make_policy  # noqa: F401
from gripworld.scene import SceneParams, generate_scene  # noqa: F401
