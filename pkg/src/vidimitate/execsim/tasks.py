"""Synthetic manipulation episodes with consistent depth, masks and point tracks.

The object is a box seen by a pinhole camera in front of a flat backdrop. Each
task kind scripts a motion that mirrors one of the evaluation tasks:

* ``pour``  - lateral transport with a 60 degree roll, depth held constant
* ``lift``  - the object moves toward the camera
* ``place`` - transport while about half the tracks are occluded for a while
* ``sweep`` - an elongated object; for a few frames all but three tracks are lost
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from ..depthfit import DepthMap, Mask
from ..geom3d import CameraIntrinsics, Pose, compose, inverse
from ..retarget import GraspTransform
from ..trackfit import TrackSet
from ..trajectory import PoseTrajectory

__all__ = ["TASK_KINDS", "SyntheticTask", "gen_synthetic_task", "render_box", "default_camera"]

TASK_KINDS = ("pour", "lift", "place", "sweep")
BACKDROP_DEPTH = 1.2


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=159.5, cy=119.5, width=320, height=240)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    kind: str
    seed: int
    trajectory: PoseTrajectory  # object-in-camera, ground truth
    K: CameraIntrinsics
    depth0: DepthMap
    mask0: Mask
    tracks: TrackSet
    object_points: np.ndarray  # track points in the object frame
    half_extents: np.ndarray
    grasp: GraspTransform
    occlusion_window: tuple[int, int]  # [start, stop) frames, empty when start == stop
    pred_scale: float
    pred_shift: float
    flicker: np.ndarray  # per-frame offset added to the predicted depth
    pred_noise_std: float = 0.0

    @property
    def ee_at_grasp(self) -> Pose:
        return compose(self.trajectory[0], inverse(self.grasp.offset))

    @cached_property
    def _renders(self) -> tuple[tuple[DepthMap, ...], tuple[Mask, ...]]:
        depths, masks = [self.depth0], [self.mask0]
        for p in list(self.trajectory)[1:]:
            d, m, _ = render_box(self.K, p, self.half_extents)
            depths.append(d)
            masks.append(m)
        return tuple(depths), tuple(masks)

    @property
    def true_depths(self) -> tuple[DepthMap, ...]:
        return self._renders[0]

    @property
    def masks(self) -> tuple[Mask, ...]:
        return self._renders[1]

    @cached_property
    def pred_depths(self) -> tuple[DepthMap, ...]:
        """Affine-distorted, flickering depth as a monocular predictor would produce."""
        rng = np.random.default_rng([self.seed, TASK_KINDS.index(self.kind), 1])
        out = []
        for f, d in enumerate(self.true_depths):
            pred = (d.values - self.pred_shift) / self.pred_scale + self.flicker[f]
            if self.pred_noise_std > 0:
                pred = pred + rng.normal(0.0, self.pred_noise_std, pred.shape)
            out.append(DepthMap(np.where(pred > 0, pred, np.nan)))
        return tuple(out)


def _pixel_rays(K: CameraIntrinsics, px: np.ndarray) -> np.ndarray:
    return np.stack([(px[..., 0] - K.cx) / K.fx, (px[..., 1] - K.cy) / K.fy, np.ones(px.shape[:-1])], axis=-1)


def _intersect_box(rays: np.ndarray, pose: Pose, half: np.ndarray):
    """Camera-frame depth (z) of the first box hit along each ray, and the face hit."""
    Rt = pose.R.T
    o = -(Rt @ pose.translation)
    d = rays @ Rt.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    tmin = np.max(near, axis=-1)
    tmax = np.min(far, axis=-1)
    hit = np.isfinite(tmin) & (tmax >= tmin) & (tmin > 0)
    axis = np.argmax(near, axis=-1)
    side = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0] > 0
    face = np.where(hit, axis * 2 + side, -1)
    return np.where(hit, tmin, np.nan), face


def render_box(K: CameraIntrinsics, pose: Pose, half_extents, backdrop: float = BACKDROP_DEPTH):
    """Depth raster, object mask and per-pixel face id (-1 off the object)."""
    half = np.asarray(half_extents, dtype=float)
    z = np.full((K.height, K.width), np.nan)
    face = np.full((K.height, K.width), -1)
    corners = pose.apply(np.array(np.meshgrid(*[[-1, 1]] * 3)).reshape(3, -1).T * half)
    if np.all(corners[:, 2] > 0):
        # only rays through the projected bounding rectangle can hit the box
        u = K.fx * corners[:, 0] / corners[:, 2] + K.cx
        v = K.fy * corners[:, 1] / corners[:, 2] + K.cy
        u0, u1 = max(int(np.floor(u.min())) - 1, 0), min(int(np.ceil(u.max())) + 2, K.width)
        v0, v1 = max(int(np.floor(v.min())) - 1, 0), min(int(np.ceil(v.max())) + 2, K.height)
        if u0 < u1 and v0 < v1:
            vv, uu = np.mgrid[v0:v1, u0:u1].astype(float)
            zz, ff = _intersect_box(_pixel_rays(K, np.stack([uu, vv], axis=-1)), pose, half)
            z[v0:v1, u0:u1] = zz
            face[v0:v1, u0:u1] = ff
    else:
        vv, uu = np.mgrid[0 : K.height, 0 : K.width].astype(float)
        z, face = _intersect_box(_pixel_rays(K, np.stack([uu, vv], axis=-1)), pose, half)
    obj = np.isfinite(z) & (z < backdrop)
    depth = np.where(obj, z, backdrop)
    return DepthMap(depth), Mask(obj), np.where(obj, face, -1)


def _sample_track_pixels(K, pose, half, face, n, rng, margin=3):
    # keep 2*margin+1 windows on one face so bilinear depth stays on a single plane
    good = np.zeros_like(face, dtype=bool)
    st = np.ones((2 * margin + 1, 2 * margin + 1), dtype=bool)
    for f in np.unique(face[face >= 0]):
        good |= ndimage.binary_erosion(face == f, structure=st)
    cand = np.argwhere(good)
    if len(cand) < n:
        raise RuntimeError(f"object too small in view: {len(cand)} interior pixels for {n} tracks")
    pick = cand[rng.choice(len(cand), size=n, replace=False)]
    px = pick[:, ::-1].astype(float) + rng.uniform(-0.5, 0.5, (n, 2))
    z, _ = _intersect_box(_pixel_rays(K, px), pose, half)
    cam = _pixel_rays(K, px) * z[:, None]
    return inverse(pose).apply(cam)


def _ease(s):
    return 0.5 - 0.5 * np.cos(np.pi * s)


def _script(kind: str, rng: np.random.Generator, frames: int):
    s = _ease(np.linspace(0.0, 1.0, frames))
    if kind == "pour":
        half = np.array([0.03, 0.03, 0.06]) * rng.uniform(0.9, 1.1)
        start = np.array([rng.uniform(-0.12, -0.08), rng.uniform(-0.03, 0.03), rng.uniform(0.55, 0.65)])
        travel = np.array([rng.uniform(0.16, 0.22), rng.uniform(-0.02, 0.02), 0.0])
        base = Rotation.from_euler("x", rng.uniform(-20, -10), degrees=True)
        roll = rng.uniform(55, 65) * rng.choice([-1, 1])
        pos = start + s[:, None] * travel
        rot = Rotation.from_euler("z", s * roll, degrees=True) * base
        occl = (0, 0)
    elif kind == "lift":
        half = np.array([0.05, 0.05, 0.015]) * rng.uniform(0.9, 1.1)
        start = np.array([rng.uniform(-0.04, 0.04), rng.uniform(0.0, 0.05), rng.uniform(0.68, 0.75)])
        travel = np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.06, -0.03), -rng.uniform(0.2, 0.26)])
        base = Rotation.from_euler("x", rng.uniform(-35, -25), degrees=True)
        pos = start + s[:, None] * travel
        rot = Rotation.from_euler("y", s * rng.uniform(-10, 10), degrees=True) * base
        occl = (0, 0)
    elif kind == "place":
        half = np.array([0.04, 0.025, 0.03]) * rng.uniform(0.9, 1.1)
        start = np.array([rng.uniform(-0.12, -0.08), rng.uniform(-0.02, 0.02), rng.uniform(0.6, 0.7)])
        travel = np.array([rng.uniform(0.16, 0.22), rng.uniform(0.02, 0.05), rng.uniform(-0.04, 0.04)])
        base = Rotation.from_euler("xy", [rng.uniform(-25, -15), rng.uniform(10, 20)], degrees=True)
        pos = start + s[:, None] * travel
        rot = Rotation.from_euler("y", s * rng.uniform(-20, 20), degrees=True) * base
        a = frames // 3
        occl = (a, a + frames // 3)
    elif kind == "sweep":
        half = np.array([0.09, 0.02, 0.012]) * rng.uniform(0.95, 1.05)
        start = np.array([rng.uniform(-0.09, -0.06), rng.uniform(0.0, 0.04), rng.uniform(0.6, 0.66)])
        travel = np.array([rng.uniform(0.1, 0.14), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)])
        base = Rotation.from_euler("xz", [rng.uniform(-40, -30), rng.uniform(-10, 10)], degrees=True)
        pos = start + s[:, None] * travel
        rot = Rotation.from_euler("z", s * rng.uniform(-15, 15), degrees=True) * base
        a = frames // 2
        occl = (a, a + 4)
    else:
        raise ValueError(f"unknown task kind {kind!r}, expected one of {TASK_KINDS}")
    poses = [Pose(p, q) for p, q in zip(pos, rot.as_quat(scalar_first=True))]
    return half, poses, occl


def gen_synthetic_task(
    kind: str,
    seed: int,
    frames: int = 45,
    fps: float = 15.0,
    n_tracks: int = 60,
    flicker_std: float = 0.01,
    pred_noise_std: float = 0.0,
) -> SyntheticTask:
    """Deterministic synthetic episode for ``kind`` and ``seed``.

    ``pred_depths`` are ``(true - shift) / scale`` plus a per-frame global
    offset with standard deviation ``flicker_std`` on frames after the first
    (and optional per-pixel noise), so fitting predicted against real depth recovers
    ``(pred_scale, pred_shift)``.
    """
    rng = np.random.default_rng([seed, TASK_KINDS.index(kind) if kind in TASK_KINDS else 99])
    half, poses, occl = _script(kind, rng, frames)
    K = default_camera()
    ts = np.arange(frames) / fps
    traj = PoseTrajectory.from_poses(ts, poses)

    depth0, mask0, face0 = render_box(K, poses[0], half)
    pts = _sample_track_pixels(K, poses[0], half, face0, n_tracks, rng)

    xy = np.empty((n_tracks, frames, 2))
    vis = np.empty((n_tracks, frames), dtype=bool)
    for f, p in enumerate(poses):
        cam = p.apply(pts)
        uv = np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.cx, K.fy * cam[:, 1] / cam[:, 2] + K.cy], axis=-1)
        xy[:, f] = uv
        vis[:, f] = (cam[:, 2] > 0) & K.in_bounds(uv)
    a, b = occl
    if b > a:
        if kind == "sweep":
            keep = rng.choice(n_tracks, size=3, replace=False)
            hidden = np.ones(n_tracks, dtype=bool)
            hidden[keep] = False
        else:
            hidden = pts[:, 0] > np.median(pts[:, 0])
        vis[hidden, a:b] = False
    xy[~vis] = np.nan

    grasp_t = np.array([0.0, 0.0, 0.1]) + rng.uniform(-0.01, 0.01, 3)
    grasp_r = Rotation.from_euler("xyz", rng.uniform(-15, 15, 3), degrees=True)
    grasp = GraspTransform(Pose(grasp_t, grasp_r.as_quat(scalar_first=True)), float(ts[0]))

    scale = float(rng.uniform(0.5, 2.0))
    shift = float(rng.uniform(-0.2, 0.2))
    flicker = rng.normal(0.0, flicker_std, frames) if flicker_std > 0 else np.zeros(frames)
    flicker[0] = 0.0  # frame 0 is the one aligned against real depth
    flicker.flags.writeable = False

    return SyntheticTask(
        kind=kind,
        seed=seed,
        trajectory=traj,
        K=K,
        depth0=depth0,
        mask0=mask0,
        tracks=TrackSet(xy, vis),
        object_points=pts,
        half_extents=half,
        grasp=grasp,
        occlusion_window=(a, b),
        pred_scale=scale,
        pred_shift=shift,
        flicker=flicker,
        pred_noise_std=pred_noise_std,
    )
