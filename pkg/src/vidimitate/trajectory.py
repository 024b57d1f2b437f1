"""Timestamped pose sequences and their line-delimited file format.

One record per line::

    {"t": 0.0, "p": [x, y, z], "q": [w, x, y, z]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geom3d import Pose, canonical_quat, compose


@dataclass(frozen=True, eq=False)
class PoseTrajectory:
    """Strictly increasing timestamps with one pose per sample.

    Stored as arrays; ``translations`` is (N, 3) and ``rotations`` is (N, 4)
    with canonical (w, x, y, z) quaternions.
    """

    timestamps: np.ndarray
    translations: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        tr = np.array(self.translations, dtype=float).reshape(-1, 3)
        rot = np.array(self.rotations, dtype=float).reshape(-1, 4)
        if len(ts) < 1:
            raise ValueError("trajectory needs at least one sample")
        if not (len(ts) == len(tr) == len(rot)):
            raise ValueError("timestamps, translations and rotations differ in length")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        rot = np.array([canonical_quat(q) for q in rot])
        for a in (ts, tr, rot):
            a.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "translations", tr)
        object.__setattr__(self, "rotations", rot)

    @classmethod
    def from_poses(cls, timestamps: Sequence[float], poses: Iterable[Pose]) -> "PoseTrajectory":
        poses = list(poses)
        return cls(
            timestamps,
            np.array([p.translation for p in poses]).reshape(-1, 3),
            np.array([p.rotation for p in poses]).reshape(-1, 4),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.translations[i], self.rotations[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def poses(self) -> list[Pose]:
        return list(self)

    def with_poses(self, poses: Iterable[Pose]) -> "PoseTrajectory":
        return PoseTrajectory.from_poses(self.timestamps, poses)

    def left_compose(self, g: Pose) -> "PoseTrajectory":
        """Every pose P becomes ``g @ P``."""
        return self.with_poses(compose(g, p) for p in self)

    def index_of(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.timestamps - t)))
        return idx


def trajectory_records(traj: PoseTrajectory) -> list[dict]:
    return [
        {"t": float(t), "p": [float(x) for x in p], "q": [float(x) for x in q]}
        for t, p, q in zip(traj.timestamps, traj.translations, traj.rotations)
    ]


def parse_trajectory(lines: Iterable[str]) -> PoseTrajectory:
    ts, ps, qs = [], [], []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            ts.append(float(rec["t"]))
            ps.append([float(x) for x in rec["p"]])
            qs.append([float(x) for x in rec["q"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: bad trajectory record ({exc})") from exc
    return PoseTrajectory(ts, ps, qs)


def save_trajectory(traj: PoseTrajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trajectory_records(traj):
            fh.write(json.dumps(rec) + "\n")


def load_trajectory(path) -> PoseTrajectory:
    return parse_trajectory(Path(path).read_text(encoding="utf-8").splitlines())
