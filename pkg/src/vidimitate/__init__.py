"""Geometry core for imitating manipulation from generated video.

Submodules:

* :mod:`vidimitate.geom3d` rigid transforms, quaternions, pinhole camera
* :mod:`vidimitate.depthfit` scale/shift alignment of predicted depth, flicker diagnostics
* :mod:`vidimitate.trackfit` PnP/RANSAC trajectories from point tracks, smoothing
* :mod:`vidimitate.retarget` object-to-end-effector retargeting
* :mod:`vidimitate.execsim` closed-loop execution against a kinematic simulator
* :mod:`vidimitate.filtergate` judged generation filtering and its statistics
* :mod:`vidimitate.bench` jitter metrics, success judging and the scenario suite
"""

from .geom3d import CameraIntrinsics, Pose, compose, inverse, project, backproject, rotation_angle
from .trajectory import PoseTrajectory, load_trajectory, save_trajectory

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "PoseTrajectory",
    "backproject",
    "compose",
    "inverse",
    "load_trajectory",
    "project",
    "rotation_angle",
    "save_trajectory",
]
