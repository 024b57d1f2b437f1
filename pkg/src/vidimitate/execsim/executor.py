"""Closed-loop waypoint execution with deviation-triggered backtracking.

Every tick the executor commands the current end-effector waypoint, reads the
object pose, and compares it with the planned object pose for that waypoint.
A deviation above the policy bound sends the robot back to the last waypoint
it settled at. Before resuming, the grasp offset is re-measured from the
current observation and the remaining plan is retargeted with it, so a
slipped grasp still drives the object along the planned object trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geom3d import Pose, rotation_angle
from ..retarget import GraspTransform, expected_object_pose, grasp_offset, retarget_trajectory
from ..trajectory import PoseTrajectory
from .sim import KinematicSim, Perturbation

__all__ = [
    "DeviationPolicy",
    "TickRecord",
    "ExecutionLog",
    "ExecutionFailed",
    "BudgetExhausted",
    "BacktrackLimit",
    "deviation",
    "execute",
]

EVENTS = ("advance", "backtrack", "settle")


@dataclass(frozen=True)
class DeviationPolicy:
    max_translation: float = 0.03
    max_rotation: float = 20.0
    settle_translation: float = 0.005
    settle_rotation: float = 2.0
    max_backtracks: int = 10
    max_ticks: int = 10_000

    def __post_init__(self):
        vals = (self.max_translation, self.max_rotation, self.settle_translation, self.settle_rotation)
        if min(vals) <= 0 or self.max_backtracks <= 0 or self.max_ticks <= 0:
            raise ValueError("policy values must be positive")
        if self.settle_translation >= self.max_translation or self.settle_rotation >= self.max_rotation:
            raise ValueError("settle tolerances must be smaller than deviation thresholds")

    def exceeded(self, dev_m: float, dev_deg: float) -> bool:
        return dev_m > self.max_translation or dev_deg > self.max_rotation

    def settled(self, dev_m: float, dev_deg: float) -> bool:
        return dev_m <= self.settle_translation and dev_deg <= self.settle_rotation


def deviation(observed: Pose, expected: Pose) -> tuple[float, float]:
    """Translation distance (m) and geodesic rotation angle (deg)."""
    return (
        float(np.linalg.norm(observed.translation - expected.translation)),
        rotation_angle(observed.rotation, expected.rotation),
    )


@dataclass(frozen=True)
class TickRecord:
    tick: int
    waypoint: int
    event: str
    commanded: Pose
    observed: Pose
    expected: Pose
    dev_m: float
    dev_deg: float
    from_waypoint: int | None = None

    def to_record(self) -> dict:
        def pose(p: Pose) -> dict:
            return {"p": [float(x) for x in p.translation], "q": [float(x) for x in p.rotation]}

        rec = {
            "tick": self.tick,
            "waypoint": self.waypoint,
            "event": self.event,
            "commanded": pose(self.commanded),
            "observed": pose(self.observed),
            "expected": pose(self.expected),
            "dev_m": self.dev_m,
            "dev_deg": self.dev_deg,
        }
        if self.from_waypoint is not None:
            rec["from_waypoint"] = self.from_waypoint
        return rec


@dataclass
class ExecutionLog:
    records: list[TickRecord] = field(default_factory=list)
    completed: bool = False
    failure: str | None = None
    final_dev_m: float = math.nan
    final_dev_deg: float = math.nan
    planned_final: Pose | None = None

    @property
    def backtracks(self) -> int:
        return sum(r.event == "backtrack" for r in self.records)

    @property
    def final_observed(self) -> Pose:
        return self.records[-1].observed

    def summary(self) -> dict:
        return {
            "completed": self.completed,
            "failure": self.failure,
            "ticks": len(self.records),
            "backtracks": self.backtracks,
            "final_dev_m": self.final_dev_m,
            "final_dev_deg": self.final_dev_deg,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(r.to_record()) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}))
        return lines

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")


class ExecutionFailed(RuntimeError):
    def __init__(self, message: str, log: ExecutionLog):
        super().__init__(message)
        self.log = log


class BudgetExhausted(ExecutionFailed):
    pass


class BacktrackLimit(ExecutionFailed):
    pass


def _check_density(obj_plan: Sequence[Pose], policy: DeviationPolicy) -> None:
    # deviation is measured against the commanded waypoint, so neighbours must be close
    for k in range(1, len(obj_plan)):
        dm, dd = deviation(obj_plan[k], obj_plan[k - 1])
        if dm > policy.max_translation or dd > policy.max_rotation:
            raise ValueError(
                f"plan too coarse between waypoints {k - 1} and {k} "
                f"({dm:.4f} m, {dd:.2f} deg); resample it more densely"
            )


def execute(
    plan: PoseTrajectory,
    g: GraspTransform,
    policy: DeviationPolicy,
    sim: KinematicSim,
    perturbations: Sequence[Perturbation] = (),
) -> ExecutionLog:
    """Run ``plan`` (end-effector waypoints) on ``sim`` until the last waypoint settles.

    Deviation monitoring starts once waypoint 0 has settled and is paused
    while the robot returns to a backtrack target. Raises
    :class:`BacktrackLimit` or :class:`BudgetExhausted` (both carry the log).
    """
    if len(plan) == 0:
        raise ValueError("empty plan")
    obj_plan = [expected_object_pose(p, g) for p in plan]
    _check_density(obj_plan, policy)
    object_traj = PoseTrajectory.from_poses(plan.timestamps, obj_plan)
    ee_plan = list(plan)
    last = len(plan) - 1

    log = ExecutionLog(planned_final=obj_plan[-1])
    pending = sorted(perturbations, key=lambda p: (p.tick if p.tick is not None else -1, p.waypoint or 0))
    settled: set[int] = set()
    recovering = False
    i = 0
    backtracks = 0
    while True:
        tick = sim.tick
        if len(log.records) >= policy.max_ticks:
            log.failure = "budget"
            raise BudgetExhausted(f"no completion within {policy.max_ticks} ticks", log)
        firing = [p for p in pending if p.fires(tick, i)]
        pending = [p for p in pending if p not in firing]
        command = ee_plan[i]
        obs = sim.step(command, firing)
        dev_m, dev_deg = deviation(obs, obj_plan[i])

        if i > 0 and not recovering and policy.exceeded(dev_m, dev_deg):
            backtracks += 1
            j = max(k for k in settled if k < i)
            log.records.append(
                TickRecord(tick, j, "backtrack", command, obs, obj_plan[i], dev_m, dev_deg, from_waypoint=i)
            )
            if backtracks > policy.max_backtracks:
                log.failure = "backtracks"
                raise BacktrackLimit(f"exceeded {policy.max_backtracks} backtracks", log)
            g = grasp_offset(obs, sim.ee_pose)
            ee_plan = list(retarget_trajectory(object_traj, g))
            settled = {k for k in settled if k < j}
            recovering = True
            i = j
            continue

        if policy.settled(*deviation(sim.ee_pose, command)):
            settled.add(i)
            recovering = False
            log.records.append(TickRecord(tick, i, "settle", command, obs, obj_plan[i], dev_m, dev_deg))
            if i == last:
                log.completed = True
                log.final_dev_m, log.final_dev_deg = dev_m, dev_deg
                return log
            i += 1
        else:
            log.records.append(TickRecord(tick, i, "advance", command, obs, obj_plan[i], dev_m, dev_deg))
