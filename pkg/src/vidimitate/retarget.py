"""Object trajectory to end-effector trajectory through a fixed grasp offset.

With the object rigidly held, ``object = ee @ offset`` at every instant, so
the end-effector must follow ``ee(t) = object(t) @ inverse(offset)``. Nothing
here depends on the robot: a new gripper only changes the offset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .geom3d import Pose, compose, inverse
from .trajectory import PoseTrajectory, parse_trajectory, trajectory_records

__all__ = [
    "GraspTransform",
    "EndEffectorTrajectory",
    "grasp_offset",
    "retarget_trajectory",
    "expected_object_pose",
    "object_trajectory",
    "save_grasp",
    "load_grasp",
]


@dataclass(frozen=True)
class GraspTransform:
    """Pose of the object expressed in the end-effector frame."""

    offset: Pose
    t: float = 0.0

    @classmethod
    def from_parts(cls, object_in_gripper: Pose, gripper_in_ee: Pose, t: float = 0.0) -> "GraspTransform":
        return cls(compose(gripper_in_ee, object_in_gripper), t)


class EndEffectorTrajectory(PoseTrajectory):
    """Commanded end-effector poses, sampled at the object trajectory's timestamps."""


def grasp_offset(object_at_grasp: Pose, ee_at_grasp: Pose, t: float = 0.0) -> GraspTransform:
    return GraspTransform(compose(inverse(ee_at_grasp), object_at_grasp), t)


def retarget_trajectory(obj: PoseTrajectory, g: GraspTransform) -> EndEffectorTrajectory:
    inv = inverse(g.offset)
    ee = [compose(o, inv) for o in obj]
    return EndEffectorTrajectory(
        obj.timestamps,
        [p.translation for p in ee],
        [p.rotation for p in ee],
    )


def expected_object_pose(ee: Pose, g: GraspTransform) -> Pose:
    return compose(ee, g.offset)


def object_trajectory(ee: PoseTrajectory, g: GraspTransform) -> PoseTrajectory:
    """Object poses implied by an end-effector trajectory under grasp ``g``."""
    return ee.with_poses(expected_object_pose(p, g) for p in ee)


def save_grasp(g: GraspTransform, path) -> None:
    traj = PoseTrajectory.from_poses([g.t], [g.offset])
    Path(path).write_text(json.dumps(trajectory_records(traj)[0]) + "\n", encoding="utf-8")


def load_grasp(path) -> GraspTransform:
    traj = parse_trajectory(Path(path).read_text(encoding="utf-8").splitlines())
    if len(traj) != 1:
        raise ValueError(f"{path}: grasp file must hold exactly one record")
    return GraspTransform(traj[0], float(traj.timestamps[0]))
