"""Evaluation: RMS jitter, success judging, and the seeded scenario suite."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.spatial.transform import Rotation

from .execsim import (
    TASK_KINDS,
    DeviationPolicy,
    ExecutionFailed,
    ExecutionLog,
    KinematicSim,
    Perturbation,
    execute,
    gen_synthetic_task,
)
from .execsim.executor import deviation
from .geom3d import Pose, compose
from .retarget import retarget_trajectory
from .trackfit import RansacConfig, TrackConfig, TrackSet, smooth_trajectory, track_trajectory
from .trajectory import PoseTrajectory

__all__ = [
    "TooShort",
    "ConfigError",
    "JitterReport",
    "SuccessCriterion",
    "gaussian_kernel",
    "gaussian_smooth_traj",
    "rms_jitter",
    "judge_success",
    "corrupt_tracks",
    "validate_config",
    "run_suite",
    "plot_rows",
    "plot_csv",
    "report_json",
    "SCHEMA",
    "VARIANTS",
    "PLOT_METRICS",
]

SCHEMA = "vidimitate.suite/1"
VARIANTS = ("oracle-pose", "pnp-track")


class TooShort(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class JitterReport:
    translational: float  # meters
    rotational: float  # degrees
    sigma: float
    n: int

    def to_dict(self) -> dict:
        return {"translational_m": self.translational, "rotational_deg": self.rotational, "sigma": self.sigma, "n": self.n}


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unnormalized Gaussian weights on integer offsets ``-ceil(3 sigma) .. ceil(3 sigma)``."""
    r = int(math.ceil(3.0 * sigma))
    k = np.arange(-r, r + 1, dtype=float)
    return np.exp(-0.5 * (k / sigma) ** 2)


def gaussian_smooth_traj(traj: PoseTrajectory, sigma: float = 2.0) -> PoseTrajectory:
    """Gaussian smoothing of positions and orientations, truncated at 3 sigma.

    Near the ends the truncated kernel is renormalized over the samples that
    exist. For each sample, neighbouring quaternions are flipped into the
    sample's hemisphere, their weighted mean (normalized) becomes the
    reference rotation, and rotation vectors relative to it are averaged with
    the same weights.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = len(traj)
    if n < 3:
        raise TooShort(f"need at least 3 samples, got {n}")
    w_full = gaussian_kernel(sigma)
    r = len(w_full) // 2
    trans = traj.translations
    quats = traj.rotations
    out_t = np.empty_like(trans)
    out_q = np.empty_like(quats)
    for i in range(n):
        lo, hi = max(0, i - r), min(n, i + r + 1)
        w = w_full[lo - i + r : hi - i + r]
        w = w / w.sum()
        out_t[i] = w @ trans[lo:hi]
        q = quats[lo:hi]
        q = np.where((q @ quats[i] < 0)[:, None], -q, q)
        ref = w @ q
        ref = Rotation.from_quat(ref / np.linalg.norm(ref), scalar_first=True)
        rel = (ref.inv() * Rotation.from_quat(q, scalar_first=True)).as_rotvec()
        out_q[i] = (ref * Rotation.from_rotvec(w @ rel)).as_quat(scalar_first=True)
    return PoseTrajectory(traj.timestamps, out_t, out_q)


def rms_jitter(traj: PoseTrajectory, sigma: float = 2.0) -> JitterReport:
    """Translational (m) and rotational (deg) RMS of the residual to the Gaussian-smoothed path."""
    n = len(traj)
    if n < 3:
        raise TooShort(f"need at least 3 samples, got {n}")
    smooth = gaussian_smooth_traj(traj, sigma)
    dt = traj.translations - smooth.translations
    rel = Rotation.from_quat(smooth.rotations, scalar_first=True).inv() * Rotation.from_quat(
        traj.rotations, scalar_first=True
    )
    theta = np.degrees(rel.magnitude())
    return JitterReport(
        translational=float(np.sqrt(np.mean(np.sum(dt * dt, axis=1)))),
        rotational=float(np.sqrt(np.mean(theta**2))),
        sigma=float(sigma),
        n=n,
    )


@dataclass(frozen=True)
class SuccessCriterion:
    target: Pose
    tol_m: float
    tol_deg: float

    def __post_init__(self):
        if self.tol_m <= 0 or self.tol_deg <= 0:
            raise ValueError("tolerances must be positive")

    def contains(self, pose: Pose) -> bool:
        dm, dd = deviation(pose, self.target)
        return dm <= self.tol_m and dd <= self.tol_deg


def judge_success(log: ExecutionLog, crit: SuccessCriterion) -> bool:
    if not log.records:
        return False
    return crit.contains(log.final_observed)


def corrupt_tracks(tracks: TrackSet, fraction: float, seed: int, width: int, height: int) -> TrackSet:
    """Replace ``fraction`` of the visible observations in every frame after the first
    with uniformly random pixels."""
    if fraction <= 0:
        return tracks
    rng = np.random.default_rng(seed)
    xy = np.array(tracks.xy)
    for f in range(1, tracks.frame_count):
        vis = np.flatnonzero(tracks.vis[:, f])
        m = int(round(fraction * len(vis)))
        if m == 0:
            continue
        bad = rng.choice(vis, size=m, replace=False)
        xy[bad, f] = rng.uniform([0.0, 0.0], [width - 1, height - 1], (m, 2))
    return TrackSet(xy, tracks.vis)


_CELL_DEFAULTS: dict[str, Any] = {
    "variant": "oracle-pose",
    "seeds": {"start": 0, "count": 10},
    "track_outlier_fraction": 0.0,
    "obs_noise_m": 0.0,
    "obs_noise_deg": 0.0,
    "smooth_window": 5,
    "perturbations": [],
    "ransac": {"iterations": 200, "threshold_px": 3.0, "min_inliers": 0},
    "success": {"tol_m": 0.02, "tol_deg": 10.0},
    "policy": {},
    "sim": {"max_step_m": 0.01, "max_step_deg": 5.0},
}


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(config: dict) -> dict:
    """Check a suite config and return it with per-cell defaults filled in."""
    _require(isinstance(config, dict), "$", "config must be an object")
    _require(config.get("schema") == SCHEMA, "schema", f"expected {SCHEMA!r}, got {config.get('schema')!r}")
    cells = config.get("cells")
    _require(isinstance(cells, list) and len(cells) > 0, "cells", "must be a non-empty list")
    defaults = copy.deepcopy(_CELL_DEFAULTS)
    defaults.update(config.get("defaults", {}))
    out_cells = []
    names = set()
    for ci, raw in enumerate(cells):
        p = f"cells[{ci}]"
        _require(isinstance(raw, dict), p, "must be an object")
        unknown = set(raw) - set(_CELL_DEFAULTS) - {"name", "task"}
        _require(not unknown, p, f"unknown fields {sorted(unknown)}")
        cell = copy.deepcopy(defaults)
        cell.update(copy.deepcopy(raw))
        _require(cell.get("task") in TASK_KINDS, f"{p}.task", f"must be one of {list(TASK_KINDS)}")
        cell.setdefault("name", f"{cell['task']}-{cell['variant']}-{ci}")
        _require(cell["name"] not in names, f"{p}.name", f"duplicate cell name {cell['name']!r}")
        names.add(cell["name"])
        _require(cell["variant"] in VARIANTS, f"{p}.variant", f"must be one of {list(VARIANTS)}")
        seeds = cell["seeds"]
        if isinstance(seeds, dict):
            _require(
                isinstance(seeds.get("count"), int) and seeds["count"] > 0,
                f"{p}.seeds.count",
                "must be a positive integer",
            )
            _require(isinstance(seeds.get("start", 0), int), f"{p}.seeds.start", "must be an integer")
            cell["seeds"] = list(range(seeds.get("start", 0), seeds.get("start", 0) + seeds["count"]))
        else:
            _require(
                isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds),
                f"{p}.seeds",
                "must be a list of integers or {start, count}",
            )
        frac = cell["track_outlier_fraction"]
        _require(_is_num(frac) and 0 <= frac < 1, f"{p}.track_outlier_fraction", "must be in [0, 1)")
        for k in ("obs_noise_m", "obs_noise_deg"):
            _require(_is_num(cell[k]) and cell[k] >= 0, f"{p}.{k}", "must be a non-negative number")
        w = cell["smooth_window"]
        _require(isinstance(w, int) and w >= 1 and w % 2 == 1, f"{p}.smooth_window", "must be a positive odd integer")
        _require(isinstance(cell["perturbations"], list), f"{p}.perturbations", "must be a list")
        for pi, rec in enumerate(cell["perturbations"]):
            try:
                Perturbation.from_record(rec)
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"{p}.perturbations[{pi}]: {exc}") from exc
        for k, v in cell["success"].items():
            _require(k in ("tol_m", "tol_deg"), f"{p}.success.{k}", "unknown field")
            _require(_is_num(v) and v > 0, f"{p}.success.{k}", "must be positive")
        try:
            DeviationPolicy(**cell["policy"])
        except TypeError as exc:
            raise ConfigError(f"{p}.policy: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{p}.policy: {exc}") from exc
        try:
            RansacConfig(**cell["ransac"])
        except TypeError as exc:
            raise ConfigError(f"{p}.ransac: {exc}") from exc
        for k, v in cell["sim"].items():
            _require(k in ("max_step_m", "max_step_deg"), f"{p}.sim.{k}", "unknown field")
            _require(_is_num(v) and v > 0, f"{p}.sim.{k}", "must be positive")
        out_cells.append(cell)
    return {"schema": SCHEMA, "cells": out_cells}


def _run_episode(cell: dict, seed: int) -> dict:
    task = gen_synthetic_task(cell["task"], seed)
    O0 = task.trajectory[0]
    carried = 0
    if cell["variant"] == "oracle-pose":
        estimate = task.trajectory
    else:
        tracks = corrupt_tracks(task.tracks, cell["track_outlier_fraction"], seed + 7919, task.K.width, task.K.height)
        rc = RansacConfig(**{**cell["ransac"], "seed": cell["ransac"].get("seed", 0) + seed})
        res = track_trajectory(tracks, task.depth0, task.K, TrackConfig(ransac=rc), timestamps=task.trajectory.timestamps)
        carried = res.carried_count
        estimate = res.trajectory.with_poses(compose(p, O0) for p in res.trajectory)
    plan_obj = smooth_trajectory(estimate, cell["smooth_window"])
    plan = retarget_trajectory(plan_obj, task.grasp)

    perts = [Perturbation.from_record(r) for r in cell["perturbations"]]
    if cell["obs_noise_m"] > 0 or cell["obs_noise_deg"] > 0:
        perts.append(
            Perturbation("observation_noise", tick=0, noise_m=cell["obs_noise_m"], noise_deg=cell["obs_noise_deg"], seed=seed)
        )
    sim = KinematicSim(task.ee_at_grasp, task.grasp.offset, **cell["sim"])
    policy = DeviationPolicy(**cell["policy"])
    try:
        log = execute(plan, task.grasp, policy, sim, perts)
    except ExecutionFailed as exc:
        log = exc.log
    crit = SuccessCriterion(task.trajectory[-1], **cell["success"])
    ok = judge_success(log, crit)
    final_m, final_deg = deviation(log.final_observed, task.trajectory[-1])
    jit = rms_jitter(estimate)
    return {
        "seed": seed,
        "success": ok,
        "completed": log.completed,
        "failure": log.failure,
        "backtracks": log.backtracks,
        "ticks": len(log.records),
        "carried_frames": carried,
        "final_error_m": final_m,
        "final_error_deg": final_deg,
        "jitter_m": jit.translational,
        "jitter_deg": jit.rotational,
    }


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan


def run_suite(config: dict) -> dict:
    """Run every (cell, seed) episode and reduce to per-cell statistics.

    The report depends only on the config; cells appear in config order.
    """
    cfg = validate_config(config)
    cells_out = []
    for cell in cfg["cells"]:
        episodes = [_run_episode(cell, s) for s in cell["seeds"]]
        n = len(episodes)
        wins = sum(e["success"] for e in episodes)
        cells_out.append(
            {
                "name": cell["name"],
                "task": cell["task"],
                "variant": cell["variant"],
                "episodes": n,
                "successes": wins,
                "success_rate": wins / n,
                "success_fraction": f"{wins}/{n}",
                "completed": sum(e["completed"] for e in episodes),
                "backtracks_total": sum(e["backtracks"] for e in episodes),
                "backtracks_mean": _mean([e["backtracks"] for e in episodes]),
                "carried_frames_total": sum(e["carried_frames"] for e in episodes),
                "final_error_m_mean": _mean([e["final_error_m"] for e in episodes]),
                "final_error_deg_mean": _mean([e["final_error_deg"] for e in episodes]),
                "jitter_m_mean": _mean([e["jitter_m"] for e in episodes]),
                "jitter_deg_mean": _mean([e["jitter_deg"] for e in episodes]),
                "config": {k: cell[k] for k in sorted(cell) if k not in ("name",)},
                "runs": episodes,
            }
        )
    return {"schema": SCHEMA, "cells": cells_out}


PLOT_METRICS = (
    "success_rate",
    "backtracks_mean",
    "carried_frames_total",
    "final_error_m_mean",
    "final_error_deg_mean",
    "jitter_m_mean",
    "jitter_deg_mean",
)


def plot_rows(report: dict) -> list[dict]:
    """One row per (cell, metric)."""
    rows = []
    for c in report["cells"]:
        for m in PLOT_METRICS:
            rows.append({"cell": c["name"], "task": c["task"], "variant": c["variant"], "metric": m, "value": c[m]})
    return rows


def plot_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["cell", "task", "variant", "metric", "value"], lineterminator="\n")
    writer.writeheader()
    for row in plot_rows(report):
        writer.writerow({**row, "value": repr(float(row["value"]))})
    return buf.getvalue()


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
