
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from scenes import (
    K320,
    backproject_all,
    depth_for,
    model_from_points,
    point_scene,
    project_all,
    random_pnp_case,
    random_rotation,
    tracks_for_motion,
)
from vidimitate.bench import rms_jitter
from vidimitate.depthfit import DepthMap
from vidimitate.geom3d import Pose, compose, inverse, rotation_angle
from vidimitate.trackfit import (
    EvenWindow,
    NoConsensus,
    NoValidPoints,
    RansacConfig,
    TooFewPoints,
    TrackConfig,
    TrackSet,
    lift_tracks,
    load_tracks,
    pnp_ransac,
    pnp_refine,
    sample_depth,
    save_tracks,
    smooth_trajectory,
    track_trajectory,
)
from vidimitate.trajectory import PoseTrajectory


def pose_err(a: Pose, b: Pose):
    return float(np.linalg.norm(a.translation - b.translation)), rotation_angle(a.rotation, b.rotation)


# --- lifting ---------------------------------------------------------------


def test_lift_principal_point():
    d = DepthMap(np.ones((240, 320)))
    xy = np.tile([[[159.5, 119.5]]], (4, 2, 1))
    model = lift_tracks(TrackSet(xy, np.ones((4, 2), bool)), d, K320)
    np.testing.assert_allclose(model.points[0], [0, 0, 1], atol=1e-12)


def test_lift_cube_corners():
    corners = np.array([[x, y, z] for x in (-0.1, 0.1) for y in (-0.1, 0.1) for z in (0.9, 1.1)])
    corners = corners + [0.02, -0.01, 0.0]
    px = project_all(K320, corners)
    depth = depth_for(px, corners[:, 2])
    tracks = TrackSet(px[:, None, :], np.ones((8, 1), bool))
    model = lift_tracks(tracks, depth, K320)
    assert model.valid.all()
    np.testing.assert_allclose(model.points, corners, atol=1e-6)


def test_lift_all_nan_depth():
    xy = np.tile([[[100.0, 100.0]]], (6, 1, 1))
    with pytest.raises(NoValidPoints):
        lift_tracks(TrackSet(xy, np.ones((6, 1), bool)), DepthMap(np.full((240, 320), np.nan)), K320)


def test_bilinear_sampling_nan_poisoning():
    v = np.arange(12.0).reshape(3, 4) + 1
    v[2, 3] = np.nan
    d = DepthMap(v)
    got = sample_depth(d, np.array([[0.5, 0.5], [1.0, 1.0], [2.5, 1.5], [3.0, 0.0], [-0.1, 0.0], [1.0, 2.0]]))
    assert got[0] == pytest.approx((1 + 2 + 5 + 6) / 4)
    assert got[1] == pytest.approx(6.0)
    assert np.isnan(got[2])  # touches the NaN corner
    assert got[3] == pytest.approx(4.0)  # right edge
    assert np.isnan(got[4])  # outside
    assert got[5] == pytest.approx(10.0)  # bottom edge


# --- PnP -------------------------------------------------------------------


def test_pnp_identity():
    rng = np.random.default_rng(0)
    X, _, _ = random_pnp_case(rng, 12)
    res = pnp_refine(model_from_points(X), project_all(K320, X), K320, init=Pose.identity())
    m, d = pose_err(res.pose, Pose.identity())
    assert m < 1e-12 and d < 1e-6
    assert res.reprojection_error < 1e-9
    assert res.inlier_count == 12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 60))
def test_pnp_recovers_random_pose(seed, n):
    rng = np.random.default_rng(seed)
    X, T, obs = random_pnp_case(rng, max(n, 6))
    init = Pose(np.zeros(3), [1, 0, 0, 0])
    res = pnp_refine(model_from_points(X), obs, K320, init=init)
    m, d = pose_err(res.pose, T)
    assert m < 1e-6 and d < 1e-4


def test_pnp_cost_non_increasing():
    rng = np.random.default_rng(11)
    X, T, obs = random_pnp_case(rng, 30)
    obs = obs + rng.normal(0, 0.5, obs.shape)
    res = pnp_refine(model_from_points(X), obs, K320)
    h = np.array(res.cost_history)
    assert len(h) >= 2
    assert np.all(np.diff(h) <= 1e-12 * h[:-1])


def test_pnp_too_few():
    rng = np.random.default_rng(1)
    X, T, obs = random_pnp_case(rng, 3)
    with pytest.raises(TooFewPoints):
        pnp_refine(model_from_points(X), obs, K320)
    with pytest.raises(TooFewPoints):
        pnp_ransac(model_from_points(X), obs, K320)
    X, T, obs = random_pnp_case(rng, 6)
    obs[:3] = np.nan  # invisible observations are not correspondences
    with pytest.raises(TooFewPoints):
        pnp_refine(model_from_points(X), obs, K320)


def test_ransac_without_outliers_matches_refine():
    rng = np.random.default_rng(2)
    X, T, obs = random_pnp_case(rng, 40)
    model = model_from_points(X)
    a = pnp_refine(model, obs, K320)
    b = pnp_ransac(model, obs, K320, RansacConfig(seed=5))
    np.testing.assert_allclose(b.pose.translation, a.pose.translation, atol=1e-9)
    assert rotation_angle(a.pose.rotation, b.pose.rotation) < 1e-7
    assert b.inlier_flags.all()


@pytest.mark.parametrize("seed", range(5))
def test_ransac_with_30_percent_outliers(seed):
    rng = np.random.default_rng(100 + seed)
    X, T, obs = random_pnp_case(rng, 50)
    bad = rng.choice(50, size=15, replace=False)
    obs[bad] = rng.uniform([0, 0], [319, 239], (15, 2))
    res = pnp_ransac(model_from_points(X), obs, K320, RansacConfig(seed=seed))
    m, d = pose_err(res.pose, T)
    assert m < 1e-3 and d < 0.1
    truly_bad = np.zeros(50, bool)
    truly_bad[bad] = True
    # a random pixel can land within 3 px of the truth by luck; those are harmless
    err = np.linalg.norm(obs - project_all(K320, T.apply(X)), axis=1)
    np.testing.assert_array_equal(~res.inlier_flags, truly_bad & (err >= 3.0))


def test_ransac_is_deterministic_per_seed():
    rng = np.random.default_rng(7)
    X, T, obs = random_pnp_case(rng, 30)
    obs[:9] = rng.uniform([0, 0], [319, 239], (9, 2))
    model = model_from_points(X)
    a = pnp_ransac(model, obs, K320, RansacConfig(seed=3))
    b = pnp_ransac(model, obs, K320, RansacConfig(seed=3))
    np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())


def test_ransac_no_consensus_with_80_percent_outliers():
    rng = np.random.default_rng(8)
    X, T, obs = random_pnp_case(rng, 40)
    obs[:32] = rng.uniform([0, 0], [319, 239], (32, 2))
    with pytest.raises(NoConsensus):
        pnp_ransac(model_from_points(X), obs, K320, RansacConfig(min_inliers=20))


# --- trajectories ----------------------------------------------------------


def _scene(rng, n=40):
    px, z = point_scene(rng, n)
    return backproject_all(K320, px, z), depth_for(px, z)


def _about(center, rot: Rotation, shift=(0.0, 0.0, 0.0)):
    R = rot.as_matrix()
    return Pose(np.asarray(center) - R @ center + shift, rot.as_quat(scalar_first=True))


def test_static_tracks_give_identity():
    rng = np.random.default_rng(0)
    X0, depth = _scene(rng)
    tracks = tracks_for_motion(X0, [Pose.identity()] * 10)
    res = track_trajectory(tracks, depth, K320)
    for P in res.trajectory:
        m, d = pose_err(P, Pose.identity())
        assert m < 1e-9 and d < 1e-6
    assert res.carried_count == 0


def test_rotation_45_deg_about_z():
    rng = np.random.default_rng(1)
    X0, depth = _scene(rng)
    c = X0.mean(axis=0)
    motions = [_about(c, Rotation.from_euler("z", 45 * f / 29, degrees=True)) for f in range(30)]
    res = track_trajectory(tracks_for_motion(X0, motions), depth, K320)
    assert res.carried_count == 0
    for P, T in zip(res.trajectory, motions):
        m, d = pose_err(P, T)
        assert m < 1e-3 and d < 0.1
    np.testing.assert_allclose(np.diff(res.trajectory.timestamps), 1 / 15)


def test_tracking_loss_carries_forward():
    rng = np.random.default_rng(2)
    X0, depth = _scene(rng, 30)
    c = X0.mean(axis=0)
    motions = [_about(c, Rotation.from_euler("y", 1.0 * f, degrees=True)) for f in range(30)]
    tracks = tracks_for_motion(X0, motions)
    vis = np.array(tracks.vis)
    vis[3:, 20:] = False  # all but three tracks vanish from frame 20
    tracks = TrackSet(tracks.xy, vis)
    res = track_trajectory(tracks, depth, K320)
    np.testing.assert_array_equal(res.carried, np.arange(30) >= 20)
    for f in range(20, 30):
        np.testing.assert_array_equal(res.trajectory[f].matrix(), res.trajectory[19].matrix())
    assert res.visible_counts[25] == 3


def test_track_trajectory_needs_valid_frame0():
    rng = np.random.default_rng(3)
    X0, _ = _scene(rng, 10)
    tracks = tracks_for_motion(X0, [Pose.identity()] * 3)
    with pytest.raises(NoValidPoints):
        track_trajectory(tracks, DepthMap(np.full((240, 320), np.nan)), K320)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_tracking_is_equivariant(seed):
    rng = np.random.default_rng(seed)
    X0, depth = _scene(rng, 30)
    c = X0.mean(axis=0)
    motions = [
        _about(c, Rotation.from_rotvec(np.radians([2.0, -1.0, 3.0]) * f), shift=[0.004 * f, 0, -0.003 * f])
        for f in range(8)
    ]
    G = Pose(rng.uniform(-0.03, 0.03, 3), random_rotation(rng, 4.0))
    XG = G.apply(X0)
    depth_g = depth_for(project_all(K320, XG), XG[:, 2])
    conj = [compose(compose(G, P), inverse(G)) for P in motions]

    cfg = TrackConfig(ransac=None)
    a = track_trajectory(tracks_for_motion(X0, motions), depth, K320, cfg)
    b = track_trajectory(tracks_for_motion(XG, conj), depth_g, K320, cfg)
    for P, Q in zip(a.trajectory, b.trajectory):
        expect = compose(compose(G, P), inverse(G))
        np.testing.assert_allclose(Q.matrix(), expect.matrix(), atol=1e-6)


# --- smoothing -------------------------------------------------------------


def _random_walk(rng, n=40, step_m=0.002, step_deg=1.0):
    t = np.cumsum(rng.normal(0, step_m, (n, 3)), axis=0)
    rots = [Rotation.identity()]
    for _ in range(n - 1):
        rots.append(Rotation.from_rotvec(rng.normal(0, np.radians(step_deg), 3)) * rots[-1])
    q = Rotation.concatenate(rots).as_quat(scalar_first=True)
    return PoseTrajectory(np.arange(n) / 15.0, t, q)


def test_window_one_is_identity():
    tr = _random_walk(np.random.default_rng(0))
    out = smooth_trajectory(tr, 1)
    np.testing.assert_allclose(out.translations, tr.translations, atol=1e-15)
    np.testing.assert_allclose(out.rotations, tr.rotations, atol=1e-12)


def test_constant_trajectory_unchanged():
    P = Pose([0.1, 0.2, 0.7], random_rotation(np.random.default_rng(1), 90))
    tr = PoseTrajectory.from_poses(np.arange(9.0), [P] * 9)
    for w in (3, 5, 9, 11):
        out = smooth_trajectory(tr, w)
        np.testing.assert_allclose(out.translations, tr.translations, atol=1e-12)
        for q in out.rotations:
            assert rotation_angle(q, P.rotation) < 1e-7


def test_linear_ramp_against_windowed_mean():
    x = np.arange(11) * 0.01
    tr = PoseTrajectory(np.arange(11.0), np.stack([x, 2 * x, 0 * x + 1], 1), np.tile([1.0, 0, 0, 0], (11, 1)))
    out = smooth_trajectory(tr, 5)
    # independent evaluation of the centered, symmetrically shrinking window
    expect = []
    for i in range(11):
        h = min(2, i, 10 - i)
        expect.append(tr.translations[i - h : i + h + 1].mean(axis=0))
    np.testing.assert_allclose(out.translations, expect, atol=1e-15)
    # a symmetric window reproduces a straight line everywhere, ends included
    np.testing.assert_allclose(out.translations, tr.translations, atol=1e-15)
    np.testing.assert_array_equal(out.timestamps, tr.timestamps)


def test_window_shrinks_symmetrically_at_ends():
    x = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 4.0, 9.0])
    tr = PoseTrajectory(np.arange(7.0), np.stack([x, 0 * x, 0 * x], 1), np.tile([1.0, 0, 0, 0], (7, 1)))
    out = smooth_trajectory(tr, 5).translations[:, 0]
    assert out[0] == 0.0 and out[-1] == 9.0
    assert out[5] == pytest.approx((1 + 4 + 9) / 3)
    assert out[3] == pytest.approx((0 + 0 + 0 + 1 + 4) / 5)


def test_even_window_rejected():
    tr = _random_walk(np.random.default_rng(0), 5)
    for w in (0, 2, 4, -1):
        with pytest.raises(EvenWindow):
            smooth_trajectory(tr, w)


def test_rotation_smoothing_handles_sign_flips():
    rng = np.random.default_rng(5)
    tr = _random_walk(rng, 20)
    q = np.array(tr.rotations)
    q[::2] *= -1  # same rotations, alternating hemisphere
    flipped = PoseTrajectory(tr.timestamps, tr.translations, q)
    a, b = smooth_trajectory(tr, 5), smooth_trajectory(flipped, 5)
    for qa, qb in zip(a.rotations, b.rotations):
        assert rotation_angle(qa, qb) < 1e-7


def test_rotation_smoothing_near_pi():
    # rotations about z straddling 180 deg must average near 180, not near 0
    angles = np.radians([176, 178, 180, 182, 184])
    q = Rotation.from_rotvec(np.outer(angles, [0, 0, 1])).as_quat(scalar_first=True)
    tr = PoseTrajectory(np.arange(5.0), np.zeros((5, 3)), q)
    mid = smooth_trajectory(tr, 5)[2]
    assert rotation_angle(mid.rotation, Pose.rot_axis("z", 180).rotation) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([3, 5, 7]))
def test_smoothing_commutes_with_left_composition(seed, w):
    rng = np.random.default_rng(seed)
    tr = _random_walk(rng, 25, step_deg=5.0)
    G = Pose(rng.uniform(-1, 1, 3), random_rotation(rng, 180))
    a = smooth_trajectory(tr.left_compose(G), w)
    b = smooth_trajectory(tr, w).left_compose(G)
    np.testing.assert_allclose(a.translations, b.translations, atol=1e-6)
    for qa, qb in zip(a.rotations, b.rotations):
        assert rotation_angle(qa, qb) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([3, 5, 7, 9]))
def test_smoothing_reduces_jitter(seed, w):
    tr = _random_walk(np.random.default_rng(seed), 40)
    raw = rms_jitter(tr)
    smooth = rms_jitter(smooth_trajectory(tr, w))
    assert smooth.translational <= raw.translational + 1e-15
    assert smooth.rotational <= raw.rotational + 1e-12


# --- files -----------------------------------------------------------------


def test_tracks_file_round_trip(tmp_path):
    xy = np.array([[[1.0, 2.0], [3.5, 4.5]], [[5.0, 6.0], [np.nan, np.nan]]])
    vis = np.array([[True, True], [True, False]])
    save_tracks(TrackSet(xy, vis), tmp_path / "t.json")
    text = (tmp_path / "t.json").read_text()
    assert '"frame_count": 2' in text and "null" in text
    back = load_tracks(tmp_path / "t.json")
    np.testing.assert_array_equal(back.vis, vis)
    np.testing.assert_array_equal(back.xy[vis], xy[vis])


def test_tracks_validation():
    with pytest.raises(ValueError):
        TrackSet(np.zeros((2, 3, 3)), np.ones((2, 3), bool))
    with pytest.raises(ValueError):
        TrackSet(np.full((1, 1, 2), np.nan), np.ones((1, 1), bool))
    ts = TrackSet(np.array([[[400.0, 10.0]]]), np.ones((1, 1), bool))
    with pytest.raises(ValueError):
        ts.check_bounds(K320)
