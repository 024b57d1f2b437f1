"""Kinematic arm-plus-object simulator with scripted perturbations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..geom3d import Pose, compose, quat_conjugate, quat_multiply, quat_to_rotvec, rotvec_to_quat

__all__ = [
    "Perturbation",
    "KinematicSim",
    "PERTURBATION_KINDS",
    "load_perturbations",
    "save_perturbations",
]

PERTURBATION_KINDS = ("ee_impulse", "grasp_slip", "observation_noise")


@dataclass(frozen=True)
class Perturbation:
    """A scripted disturbance.

    Exactly one of ``tick`` / ``waypoint`` selects when it fires. ``delta`` is
    used by ``ee_impulse`` (world-frame offset of the end-effector) and
    ``grasp_slip`` (offset applied to the object in the end-effector frame).
    ``observation_noise`` adds Gaussian noise with ``noise_m`` / ``noise_deg``
    standard deviations to every observation from the trigger on.
    """

    kind: str
    tick: int | None = None
    waypoint: int | None = None
    delta: Pose = field(default_factory=Pose.identity)
    noise_m: float = 0.0
    noise_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if (self.tick is None) == (self.waypoint is None):
            raise ValueError("a perturbation needs exactly one of tick / waypoint")
        if (self.tick is not None and self.tick < 0) or (self.waypoint is not None and self.waypoint < 0):
            raise ValueError("trigger must be non-negative")
        if not (math.isfinite(self.noise_m) and math.isfinite(self.noise_deg)):
            raise ValueError("noise magnitudes must be finite")
        if self.noise_m < 0 or self.noise_deg < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @classmethod
    def slip(cls, dx: float, dy: float = 0.0, dz: float = 0.0, **kw) -> "Perturbation":
        return cls("grasp_slip", delta=Pose.translate(dx, dy, dz), **kw)

    @classmethod
    def impulse(cls, dx: float, dy: float = 0.0, dz: float = 0.0, **kw) -> "Perturbation":
        return cls("ee_impulse", delta=Pose.translate(dx, dy, dz), **kw)

    def fires(self, tick: int, waypoint: int) -> bool:
        if self.tick is not None:
            return tick == self.tick
        return waypoint >= self.waypoint

    def to_record(self) -> dict:
        trigger = {"tick": self.tick} if self.tick is not None else {"waypoint": self.waypoint}
        if self.kind == "observation_noise":
            magnitude = {"std_m": self.noise_m, "std_deg": self.noise_deg}
        else:
            magnitude = {
                "p": [float(x) for x in self.delta.translation],
                "q": [float(x) for x in self.delta.rotation],
            }
        return {"kind": self.kind, "trigger": trigger, "magnitude": magnitude, "seed": self.seed}

    @classmethod
    def from_record(cls, rec: dict) -> "Perturbation":
        trig = rec["trigger"]
        if isinstance(trig, int):
            trig = {"waypoint": trig}
        mag = rec.get("magnitude", {})
        kw = dict(kind=rec["kind"], tick=trig.get("tick"), waypoint=trig.get("waypoint"), seed=int(rec.get("seed", 0)))
        if rec["kind"] == "observation_noise":
            kw.update(noise_m=float(mag.get("std_m", 0.0)), noise_deg=float(mag.get("std_deg", 0.0)))
        else:
            kw["delta"] = Pose(mag.get("p", [0.0, 0.0, 0.0]), mag.get("q", [1.0, 0.0, 0.0, 0.0]))
        return cls(**kw)


def load_perturbations(path) -> list[Perturbation]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(Perturbation.from_record(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_perturbations(perts: Iterable[Perturbation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in perts:
            fh.write(json.dumps(p.to_record()) + "\n")


def _move_toward(current: Pose, target: Pose, max_m: float, max_deg: float) -> Pose:
    dt = target.translation - current.translation
    dist = float(np.linalg.norm(dt))
    t = target.translation if dist <= max_m else current.translation + dt * (max_m / dist)

    rel = quat_multiply(target.rotation, quat_conjugate(current.rotation))
    v = quat_to_rotvec(rel)
    ang = float(np.linalg.norm(v))
    max_rad = math.radians(max_deg)
    if ang <= max_rad:
        q = target.rotation
    else:
        q = quat_multiply(rotvec_to_quat(v * (max_rad / ang)), current.rotation)
    return Pose(t, q)


class KinematicSim:
    """End-effector that moves toward commands at bounded speed, holding an object.

    The held object sits at ``ee @ attach``. One call to :meth:`step` is one
    control tick.
    """

    def __init__(
        self,
        ee_pose: Pose,
        attach: Pose,
        max_step_m: float = 0.01,
        max_step_deg: float = 5.0,
    ):
        if max_step_m <= 0 or max_step_deg <= 0:
            raise ValueError("speed limits must be positive")
        self.ee_pose = ee_pose
        self.attach = attach
        self.max_step_m = max_step_m
        self.max_step_deg = max_step_deg
        self.tick = 0
        self._noise: list[tuple[Perturbation, np.random.Generator]] = []

    @property
    def object_pose(self) -> Pose:
        return compose(self.ee_pose, self.attach)

    def step(self, command: Pose, perturbations: Sequence[Perturbation] = ()) -> Pose:
        """Advance one tick and return the observed object pose."""
        self.ee_pose = _move_toward(self.ee_pose, command, self.max_step_m, self.max_step_deg)
        for p in perturbations:
            if p.kind == "ee_impulse":
                e = self.ee_pose
                self.ee_pose = Pose(
                    e.translation + p.delta.translation,
                    quat_multiply(p.delta.rotation, e.rotation),
                )
            elif p.kind == "grasp_slip":
                self.attach = compose(p.delta, self.attach)
            else:
                self._noise.append((p, np.random.default_rng(p.seed)))
        obs = self.object_pose
        for p, rng in self._noise:
            dt = rng.normal(0.0, p.noise_m, 3)
            dr = rng.normal(0.0, math.radians(p.noise_deg), 3)
            obs = Pose(obs.translation + dt, quat_multiply(rotvec_to_quat(dr), obs.rotation))
        self.tick += 1
        return obs
