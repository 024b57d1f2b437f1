"""Object pose trajectories from 2-D point tracks, and trajectory smoothing.

Tracks are lifted to 3-D once, using the first frame and its real depth. Every
later frame is solved as a Perspective-n-Point problem against those model
points, so a pose ``P_t`` returned here is the rigid motion of the object
between frame 0 and frame t, expressed in the camera frame::

    X_t = P_t.apply(X_0)

``P_0`` is the identity. Compose with the initial object pose to obtain the
object-in-camera pose: ``O_t = P_t @ O_0``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .depthfit import DepthMap
from .geom3d import CameraIntrinsics, Pose, backproject
from .trajectory import PoseTrajectory

__all__ = [
    "TrackSet",
    "ModelPoints",
    "PnPResult",
    "RansacConfig",
    "TrackConfig",
    "TrackResult",
    "NoValidPoints",
    "TooFewPoints",
    "Diverged",
    "NoConsensus",
    "EvenWindow",
    "lift_tracks",
    "sample_depth",
    "pnp_refine",
    "pnp_ransac",
    "reprojection_errors",
    "track_trajectory",
    "smooth_trajectory",
    "load_tracks",
    "save_tracks",
]

log = logging.getLogger(__name__)


class NoValidPoints(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class Diverged(RuntimeError):
    pass


class NoConsensus(RuntimeError):
    pass


class EvenWindow(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrackSet:
    """``xy`` is (tracks, frames, 2) in pixels; ``vis`` is (tracks, frames)."""

    xy: np.ndarray
    vis: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float)
        vis = np.array(self.vis, dtype=bool)
        if xy.ndim != 3 or xy.shape[2] != 2:
            raise ValueError(f"xy must have shape (tracks, frames, 2), got {xy.shape}")
        if vis.shape != xy.shape[:2]:
            raise ValueError(f"vis shape {vis.shape} does not match xy {xy.shape[:2]}")
        if np.any(~np.isfinite(xy[vis])):
            raise ValueError("visible track positions must be finite")
        xy.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "vis", vis)

    @property
    def track_count(self) -> int:
        return self.xy.shape[0]

    @property
    def frame_count(self) -> int:
        return self.xy.shape[1]

    def check_bounds(self, K: CameraIntrinsics) -> None:
        inside = K.in_bounds(self.xy)
        bad = self.vis & ~inside
        if bad.any():
            tr, fr = np.argwhere(bad)[0]
            raise ValueError(f"track {tr} is visible outside the image at frame {fr}")


@dataclass(frozen=True, eq=False)
class ModelPoints:
    """Frame-0 camera-frame 3-D points, one per track."""

    points: np.ndarray
    valid: np.ndarray

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    @property
    def centroid(self) -> np.ndarray:
        return self.points[self.valid].mean(axis=0)


@dataclass(frozen=True, eq=False)
class PnPResult:
    pose: Pose
    inlier_flags: np.ndarray
    reprojection_error: float
    iterations: int
    cost_history: tuple[float, ...] = ()

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_flags.sum())


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    threshold_px: float = 3.0
    min_inliers: int = 0
    seed: int = 0


@dataclass(frozen=True)
class TrackConfig:
    ransac: RansacConfig | None = field(default_factory=RansacConfig)
    fps: float = 15.0
    max_iterations: int = 100


@dataclass(frozen=True, eq=False)
class TrackResult:
    trajectory: PoseTrajectory
    carried: np.ndarray  # frames whose pose was copied from the last solved frame
    inlier_counts: np.ndarray
    visible_counts: np.ndarray

    @property
    def carried_count(self) -> int:
        return int(self.carried.sum())


def sample_depth(depth: DepthMap, px: np.ndarray) -> np.ndarray:
    """Bilinear depth lookup at (N, 2) pixel positions.

    Any NaN among the four neighbours, or a position outside the raster,
    yields NaN.
    """
    px = np.asarray(px, dtype=float).reshape(-1, 2)
    h, w = depth.values.shape
    out = np.full(len(px), np.nan)
    u, v = px[:, 0], px[:, 1]
    ok = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (v >= 0) & (u <= w - 1) & (v <= h - 1)
    u, v = u[ok], v[ok]
    u0 = np.minimum(np.floor(u).astype(int), w - 2 if w > 1 else 0)
    v0 = np.minimum(np.floor(v).astype(int), h - 2 if h > 1 else 0)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = u - u0
    b = v - v0
    d = depth.values
    val = (
        (1 - a) * (1 - b) * d[v0, u0]
        + a * (1 - b) * d[v0, u1]
        + (1 - a) * b * d[v1, u0]
        + a * b * d[v1, u1]
    )
    out[ok] = val
    return out


def lift_tracks(tracks: TrackSet, depth0: DepthMap, K: CameraIntrinsics) -> ModelPoints:
    if depth0.values.shape != (K.height, K.width):
        raise ValueError(
            f"depth raster {depth0.values.shape} does not match intrinsics {(K.height, K.width)}"
        )
    px = tracks.xy[:, 0, :]
    z = sample_depth(depth0, px)
    valid = tracks.vis[:, 0] & np.isfinite(z) & (z > 0)
    pts = np.full((tracks.track_count, 3), np.nan)
    if valid.any():
        pts[valid] = backproject(K, px[valid], z[valid])
    if valid.sum() < 4:
        raise NoValidPoints(f"only {int(valid.sum())} tracks have valid frame-0 depth, need 4")
    pts.flags.writeable = False
    valid.flags.writeable = False
    return ModelPoints(points=pts, valid=valid)


def _project_batch(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    z = Xc[..., 2]
    return np.stack([K.fx * Xc[..., 0] / z + K.cx, K.fy * Xc[..., 1] / z + K.cy], axis=-1)


def _cost(K, X, u, w, R, t):
    Xc = np.matmul(X, R.transpose(0, 2, 1)) + t[:, None, :]
    behind = np.any((Xc[..., 2] <= 0) & (w > 0), axis=1)
    r = _project_batch(K, np.where(Xc[..., 2:3] > 0, Xc, 1.0)) - u
    c = np.sum(w * np.sum(r * r, axis=-1), axis=1)
    c[behind] = np.inf
    return c, Xc, r


def _levenberg_marquardt(K, X, u, w, R0, t0, max_iter=100, step_tol=1e-10, lam0=1e-3):
    """Batched damped Gauss-Newton on B independent PnP problems.

    Pose updates are left perturbations ``exp(d) @ P`` with ``d = (omega, v)``.
    Returns rotations, translations, final costs, iteration counts and the
    cost after every accepted step of problem 0.
    """
    B = X.shape[0]
    R = R0.copy()
    t = t0.copy()
    lam = np.full(B, lam0)
    cost, Xc, r = _cost(K, X, u, w, R, t)
    active = np.isfinite(cost)
    iters = np.zeros(B, dtype=int)
    history = [float(cost[0])]
    eye6 = np.eye(6)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xa, ra, wa = Xc[idx], r[idx], w[idx]
        x, y, z = Xa[..., 0], Xa[..., 1], Xa[..., 2]
        iz = 1.0 / np.where(z > 0, z, 1.0)
        # pixel rows d, camera point w.r.t. (omega, v) is [-[X]x | I], so omega columns are X x d
        a, c = K.fx * iz, -K.fx * x * iz * iz
        b, e = K.fy * iz, -K.fy * y * iz * iz
        zero = np.zeros_like(z)
        Ju = np.stack([y * c, z * a - x * c, -y * a, a, zero, c], axis=-1)
        Jv = np.stack([y * e - z * b, -x * e, x * b, zero, b, e], axis=-1)
        J = np.stack([Ju, Jv], axis=2).reshape(len(idx), -1, 6)
        Jw = J * np.repeat(wa, 2, axis=1)[..., None]
        Jt = Jw.transpose(0, 2, 1)
        H = np.matmul(Jt, J)
        g = np.matmul(Jt, ra.reshape(len(idx), -1, 1))[..., 0]
        step = -np.linalg.solve(H + lam[idx, None, None] * eye6, g[..., None])[..., 0]
        dR = Rotation.from_rotvec(step[:, :3]).as_matrix()
        Rn = dR @ R[idx]
        tn = np.matmul(dR, t[idx][..., None])[..., 0] + step[:, 3:]
        cn, Xcn, rn = _cost(K, X[idx], u[idx], w[idx], Rn, tn)
        iters[idx] += 1
        accept = np.isfinite(cn) & (cn < cost[idx])
        acc = idx[accept]
        R[acc], t[acc], cost[acc] = Rn[accept], tn[accept], cn[accept]
        Xc[acc], r[acc] = Xcn[accept], rn[accept]
        lam[acc] *= 0.1
        lam[idx[~accept]] *= 10.0
        if accept[0] and idx[0] == 0:
            history.append(float(cn[0]))
        snorm = np.linalg.norm(step, axis=1)
        done = (snorm < step_tol) | (lam[idx] > 1e16) | (cost[idx] == 0.0)
        active[idx[done]] = False
    return R, t, cost, iters, history


def reprojection_errors(K: CameraIntrinsics, pose: Pose, points: np.ndarray, obs: np.ndarray):
    Xc = pose.apply(points)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(_project_batch(K, Xc) - obs, axis=-1)
    err[~(Xc[:, 2] > 0)] = np.inf
    return err


def _correspondences(model: ModelPoints, obs: np.ndarray, mask=None) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (len(model.points), 2):
        raise ValueError(f"obs must have shape ({len(model.points)}, 2), got {obs.shape}")
    use = model.valid & np.all(np.isfinite(obs), axis=1)
    if mask is not None:
        use &= np.asarray(mask, dtype=bool)
    return use


def pnp_refine(
    model: ModelPoints,
    obs,
    K: CameraIntrinsics,
    init: Pose | None = None,
    mask=None,
    max_iterations: int = 100,
) -> PnPResult:
    """Minimize the summed squared reprojection error from ``init``.

    Only points that are valid in ``model``, finite in ``obs`` and selected by
    ``mask`` take part.
    """
    obs = np.asarray(obs, dtype=float)
    use = _correspondences(model, obs, mask)
    n = int(use.sum())
    if n < 4:
        raise TooFewPoints(f"{n} correspondences, need at least 4")
    init = init or Pose.identity()
    X = model.points[use][None]
    u = obs[use][None]
    w = np.ones((1, n))
    R, t, cost, iters, history = _levenberg_marquardt(
        K, X, u, w, init.R[None], init.translation[None], max_iter=max_iterations
    )
    if not np.isfinite(cost[0]):
        raise Diverged("reprojection cost is not finite (points behind the camera?)")
    pose = Pose.from_rt(R[0], t[0])
    err = reprojection_errors(K, pose, model.points[use], obs[use])
    return PnPResult(
        pose=pose,
        inlier_flags=use.copy(),
        reprojection_error=float(err.mean()),
        iterations=int(iters[0]),
        cost_history=tuple(history),
    )


# hypotheses only need pixel-level accuracy before scoring; the final refine is exact
_HYPOTHESIS_ITERATIONS = 20
_HYPOTHESIS_STEP_TOL = 1e-8


def pnp_ransac(
    model: ModelPoints,
    obs,
    K: CameraIntrinsics,
    cfg: RansacConfig = RansacConfig(),
    init: Pose | None = None,
    max_iterations: int = 100,
) -> PnPResult:
    """Robust PnP: 4-point hypotheses scored by inlier count, then a full refine."""
    obs = np.asarray(obs, dtype=float)
    use = _correspondences(model, obs)
    cand = np.flatnonzero(use)
    n = cand.size
    if n < 4:
        raise TooFewPoints(f"{n} correspondences, need at least 4")
    init = init or Pose.identity()
    need = max(4, cfg.min_inliers)

    rng = np.random.default_rng(cfg.seed)
    samples = np.stack([rng.choice(n, size=4, replace=False) for _ in range(cfg.iterations)])
    Xs = model.points[cand][samples]
    us = obs[cand][samples]
    B = len(samples)
    R, t, cost, _, _ = _levenberg_marquardt(
        K,
        Xs,
        us,
        np.ones((B, 4)),
        np.repeat(init.R[None], B, axis=0),
        np.repeat(init.translation[None], B, axis=0),
        max_iter=_HYPOTHESIS_ITERATIONS,
        step_tol=_HYPOTHESIS_STEP_TOL,
    )
    Xall = model.points[cand]
    Xc = np.matmul(Xall[None], R.transpose(0, 2, 1)) + t[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(_project_batch(K, Xc) - obs[cand][None], axis=-1)
    err[~(Xc[..., 2] > 0)] = np.inf
    err[~np.isfinite(cost)] = np.inf
    inl = err < cfg.threshold_px
    counts = inl.sum(axis=1)
    best_count = int(counts.max())
    if best_count < need:
        raise NoConsensus(f"best hypothesis has {best_count} inliers, need {need}")
    tied = np.flatnonzero(counts == best_count)
    score = np.array([err[i][inl[i]].sum() for i in tied])
    best = int(tied[np.argmin(score)])

    start = Pose.from_rt(R[best], t[best])
    inliers = np.zeros(len(obs), dtype=bool)
    inliers[cand[inl[best]]] = True
    for _ in range(2):
        res = pnp_refine(model, obs, K, init=start, mask=inliers, max_iterations=max_iterations)
        e = reprojection_errors(K, res.pose, model.points[cand], obs[cand])
        new_inliers = np.zeros(len(obs), dtype=bool)
        new_inliers[cand[e < cfg.threshold_px]] = True
        if np.array_equal(new_inliers, inliers) or new_inliers.sum() < need:
            break
        inliers, start = new_inliers, res.pose
    return PnPResult(
        pose=res.pose,
        inlier_flags=res.inlier_flags,
        reprojection_error=res.reprojection_error,
        iterations=res.iterations,
        cost_history=res.cost_history,
    )


def track_trajectory(
    tracks: TrackSet,
    depth0: DepthMap,
    K: CameraIntrinsics,
    cfg: TrackConfig = TrackConfig(),
    timestamps=None,
) -> TrackResult:
    """Per-frame PnP from frame-0 lifted tracks, warm-started from the previous frame.

    Frames that cannot be solved (fewer than four visible tracks, no RANSAC
    consensus, divergence) keep the last solved pose and are flagged in
    ``TrackResult.carried``.
    """
    tracks.check_bounds(K)
    model = lift_tracks(tracks, depth0, K)
    F = tracks.frame_count
    if timestamps is None:
        timestamps = np.arange(F) / cfg.fps
    poses = [Pose.identity()]
    carried = np.zeros(F, dtype=bool)
    inlier_counts = np.zeros(F, dtype=int)
    visible_counts = np.zeros(F, dtype=int)
    visible_counts[0] = inlier_counts[0] = model.count
    last = poses[0]
    for f in range(1, F):
        vis = tracks.vis[:, f] & model.valid
        visible_counts[f] = int(vis.sum())
        obs = np.where(vis[:, None], tracks.xy[:, f, :], np.nan)
        try:
            if cfg.ransac is None:
                res = pnp_refine(model, obs, K, init=last, max_iterations=cfg.max_iterations)
            else:
                rc = cfg.ransac
                res = pnp_ransac(
                    model,
                    obs,
                    K,
                    RansacConfig(rc.iterations, rc.threshold_px, rc.min_inliers, rc.seed + f),
                    init=last,
                    max_iterations=cfg.max_iterations,
                )
        except (TooFewPoints, NoConsensus, Diverged) as exc:
            log.debug("frame %d carried forward: %s", f, exc)
            carried[f] = True
            poses.append(last)
            continue
        last = res.pose
        inlier_counts[f] = res.inlier_count
        poses.append(last)
    traj = PoseTrajectory.from_poses(timestamps, poses)
    return TrackResult(traj, carried, inlier_counts, visible_counts)


def smooth_trajectory(traj: PoseTrajectory, window: int = 5) -> PoseTrajectory:
    """Centered moving average of positions and orientations.

    The window shrinks symmetrically near the ends, so the first and last
    samples are returned unchanged. Orientations are averaged as rotation
    vectors relative to the window's center sample.
    """
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be a positive odd count, got {window}")
    n = len(traj)
    half = window // 2
    q = np.array(traj.rotations)
    for i in range(1, n):
        if np.dot(q[i], q[i - 1]) < 0:
            q[i] = -q[i]
    rots = Rotation.from_quat(q, scalar_first=True)
    trans = traj.translations
    out_t = np.empty_like(trans)
    out_q = np.empty_like(q)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        lo, hi = i - h, i + h + 1
        out_t[i] = trans[lo:hi].mean(axis=0)
        center = rots[i]
        rel = (center.inv() * rots[lo:hi]).as_rotvec()
        out_q[i] = (center * Rotation.from_rotvec(rel.mean(axis=0))).as_quat(scalar_first=True)
    return PoseTrajectory(traj.timestamps, out_t, out_q)


def load_tracks(path) -> TrackSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    F = int(data["frame_count"])
    xy, vis = [], []
    for i, tr in enumerate(data["tracks"]):
        if len(tr["xy"]) != F or len(tr["vis"]) != F:
            raise ValueError(f"track {i} does not have {F} entries")
        xy.append([[np.nan, np.nan] if p is None else p for p in tr["xy"]])
        vis.append([bool(b) for b in tr["vis"]])
    return TrackSet(np.array(xy, dtype=float).reshape(len(xy), F, 2), np.array(vis).reshape(len(xy), F))


def save_tracks(tracks: TrackSet, path) -> None:
    out = {"frame_count": tracks.frame_count, "tracks": []}
    for xy, vis in zip(tracks.xy, tracks.vis):
        out["tracks"].append(
            {
                "xy": [None if not np.all(np.isfinite(p)) else [float(p[0]), float(p[1])] for p in xy],
                "vis": [bool(v) for v in vis],
            }
        )
    Path(path).write_text(json.dumps(out) + "\n", encoding="utf-8")
