import copy
import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from scenes import random_rotation
from vidimitate.bench import (
    PLOT_METRICS,
    SCHEMA,
    ConfigError,
    SuccessCriterion,
    TooShort,
    corrupt_tracks,
    gaussian_kernel,
    gaussian_smooth_traj,
    judge_success,
    plot_csv,
    report_json,
    rms_jitter,
    run_suite,
    validate_config,
)
from vidimitate.execsim import DeviationPolicy, KinematicSim, execute, gen_synthetic_task
from vidimitate.geom3d import Pose, rotation_angle
from vidimitate.retarget import retarget_trajectory
from vidimitate.trajectory import PoseTrajectory


def traj_from(t, q=None):
    t = np.asarray(t, dtype=float)
    if q is None:
        q = np.tile([1.0, 0, 0, 0], (len(t), 1))
    return PoseTrajectory(np.arange(len(t)) / 15.0, t, q)


def random_walk(rng, n=50):
    t = np.cumsum(rng.normal(0, 0.003, (n, 3)), axis=0)
    rots = [Rotation.identity()]
    for _ in range(n - 1):
        rots.append(Rotation.from_rotvec(rng.normal(0, 0.03, 3)) * rots[-1])
    return traj_from(t, Rotation.concatenate(rots).as_quat(scalar_first=True))


# --- Gaussian smoothing and jitter -----------------------------------------


def test_kernel_shape():
    k = gaussian_kernel(2.0)
    assert len(k) == 13  # offsets -6 .. 6
    assert k[6] == 1.0 and k[0] == pytest.approx(math.exp(-4.5))
    assert len(gaussian_kernel(0.5)) == 5


def test_constant_trajectory_unchanged():
    P = Pose([0.3, -0.1, 0.8], random_rotation(np.random.default_rng(0), 120))
    tr = PoseTrajectory.from_poses(np.arange(20.0), [P] * 20)
    sm = gaussian_smooth_traj(tr)
    np.testing.assert_allclose(sm.translations, tr.translations, atol=1e-15)
    for q in sm.rotations:
        assert rotation_angle(q, P.rotation) < 1e-7
    rep = rms_jitter(tr)
    assert rep.translational == pytest.approx(0.0, abs=1e-15)
    assert rep.rotational == pytest.approx(0.0, abs=1e-5)


def test_impulse_gives_normalized_kernel():
    x = np.zeros(41)
    x[20] = 1.0
    sm = gaussian_smooth_traj(traj_from(np.stack([x, 0 * x, 0 * x], 1)), sigma=2.0)
    # direct convolution oracle
    offsets = np.arange(-6, 7)
    w = np.exp(-0.5 * (offsets / 2.0) ** 2)
    w /= w.sum()
    expect = np.zeros(41)
    expect[14:27] = w[::-1]
    np.testing.assert_allclose(sm.translations[:, 0], expect, atol=1e-15)
    assert sm.translations[:, 0].sum() == pytest.approx(1.0)


def test_boundary_renormalization():
    x = np.ones(10)
    x[0] = 0.0
    sm = gaussian_smooth_traj(traj_from(np.stack([x, x, x], 1)), sigma=2.0)
    w = np.exp(-0.5 * (np.arange(0, 7) / 2.0) ** 2)
    assert sm.translations[0, 0] == pytest.approx((w.sum() - w[0]) / w.sum(), abs=1e-15)


def test_linear_ramp_interior_preserved():
    x = np.linspace(0, 1, 40)
    tr = traj_from(np.stack([x, -2 * x, 0.5 + 0 * x], 1))
    sm = gaussian_smooth_traj(tr, sigma=2.0)
    np.testing.assert_allclose(sm.translations[6:-6], tr.translations[6:-6], atol=1e-9)
    assert not np.allclose(sm.translations[0], tr.translations[0])


def test_too_short():
    with pytest.raises(TooShort):
        rms_jitter(traj_from(np.zeros((2, 3))))
    with pytest.raises(TooShort):
        gaussian_smooth_traj(traj_from(np.zeros((2, 3))))
    with pytest.raises(ValueError):
        gaussian_smooth_traj(traj_from(np.zeros((5, 3))), sigma=0)


def test_alternating_steps_match_formula():
    x = np.array([0.001 if i % 2 else -0.001 for i in range(100)])
    tr = traj_from(np.stack([x, 0 * x, 0 * x], 1))
    w_full = np.exp(-0.5 * (np.arange(-6, 7) / 2.0) ** 2)
    res = []
    for i in range(100):
        lo, hi = max(0, i - 6), min(100, i + 7)
        w = w_full[lo - i + 6 : hi - i + 6]
        res.append(x[i] - np.dot(w, x[lo:hi]) / w.sum())
    expect = math.sqrt(sum(r * r for r in res) / 100)
    got = rms_jitter(tr)
    assert got.translational == pytest.approx(expect, rel=1e-12)
    assert got.rotational == 0.0
    assert got.n == 100 and got.sigma == 2.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_jitter_invariant_to_rigid_precomposition(seed):
    rng = np.random.default_rng(seed)
    tr = random_walk(rng)
    G = Pose(rng.uniform(-2, 2, 3), random_rotation(rng, 180))
    a, b = rms_jitter(tr), rms_jitter(tr.left_compose(G))
    assert b.translational == pytest.approx(a.translational, abs=1e-9)
    assert b.rotational == pytest.approx(a.rotational, abs=1e-9)


def test_jitter_report_dict():
    d = rms_jitter(random_walk(np.random.default_rng(1))).to_dict()
    assert set(d) == {"translational_m", "rotational_deg", "sigma", "n"}


# --- success judging -------------------------------------------------------


def test_success_criterion():
    P = Pose([0.1, 0.0, 0.6], [1, 0, 0, 0])
    crit = SuccessCriterion(P, 0.02, 10.0)
    assert crit.contains(P)
    assert not crit.contains(Pose([0.13, 0.0, 0.6], [1, 0, 0, 0]))
    assert not crit.contains(Pose.rot_axis("z", 15) @ P)
    with pytest.raises(ValueError):
        SuccessCriterion(P, 0.0, 10.0)


def test_noiseless_episodes_succeed():
    wins = 0
    for seed in range(10):
        task = gen_synthetic_task(("pour", "lift", "place", "sweep")[seed % 4], seed)
        plan = retarget_trajectory(task.trajectory, task.grasp)
        log = execute(plan, task.grasp, DeviationPolicy(), KinematicSim(task.ee_at_grasp, task.grasp.offset))
        wins += judge_success(log, SuccessCriterion(task.trajectory[-1], 0.02, 10.0))
    assert wins == 10


# --- track corruption ------------------------------------------------------


def test_corrupt_tracks_fraction_and_frame0():
    task = gen_synthetic_task("pour", 0)
    bad = corrupt_tracks(task.tracks, 0.3, 1, 320, 240)
    np.testing.assert_array_equal(bad.xy[:, 0], task.tracks.xy[:, 0])
    changed = np.any(bad.xy[:, 1:] != task.tracks.xy[:, 1:], axis=2) & task.tracks.vis[:, 1:]
    assert np.all(changed.sum(axis=0) == 18)
    assert corrupt_tracks(task.tracks, 0.0, 1, 320, 240) is task.tracks


# --- suite -----------------------------------------------------------------


def small_config(**cell):
    base = {"task": "pour", "seeds": {"start": 0, "count": 2}}
    base.update(cell)
    return {"schema": SCHEMA, "cells": [base]}


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda c: c.update(schema="other/9"), "schema"),
        (lambda c: c.update(cells=[]), "cells"),
        (lambda c: c["cells"][0].update(task="juggle"), "cells[0].task"),
        (lambda c: c["cells"][0].update(variant="neural"), "cells[0].variant"),
        (lambda c: c["cells"][0].update(seeds={"count": 0}), "cells[0].seeds.count"),
        (lambda c: c["cells"][0].update(track_outlier_fraction=1.5), "cells[0].track_outlier_fraction"),
        (lambda c: c["cells"][0].update(smooth_window=4), "cells[0].smooth_window"),
        (lambda c: c["cells"][0].update(success={"tol_m": -1}), "cells[0].success.tol_m"),
        (lambda c: c["cells"][0].update(perturbations=[{"kind": "quake", "trigger": 1}]), "cells[0].perturbations[0]"),
        (lambda c: c["cells"][0].update(policy={"max_translation": 0.001}), "cells[0].policy"),
        (lambda c: c["cells"][0].update(colour="red"), "cells[0]"),
    ],
)
def test_config_errors_name_the_field(mutate, path):
    cfg = small_config()
    mutate(cfg)
    with pytest.raises(ConfigError) as err:
        validate_config(cfg)
    assert str(err.value).startswith(path + ":")


def test_second_cell_error_path():
    cfg = small_config()
    cfg["cells"].append({"task": "lift", "variant": "bogus"})
    with pytest.raises(ConfigError, match=r"^cells\[1\]\.variant"):
        validate_config(cfg)


def test_oracle_cell_is_perfect():
    rep = run_suite(small_config(seeds={"start": 0, "count": 3}))
    cell = rep["cells"][0]
    assert cell["success_rate"] == 1.0 and cell["success_fraction"] == "3/3"
    assert cell["backtracks_total"] == 0
    assert len(cell["runs"]) == 3


def test_pnp_cell_with_outliers():
    cfg = small_config(variant="pnp-track", track_outlier_fraction=0.3, seeds={"start": 0, "count": 20})
    cell = run_suite(cfg)["cells"][0]
    assert cell["success_rate"] >= 0.8


def test_occlusion_cell_reports_carried_frames():
    cfg = small_config(task="place", variant="pnp-track", ransac={"min_inliers": 40}, seeds=[0, 1])
    cell = run_suite(cfg)["cells"][0]
    a, b = gen_synthetic_task("place", 0).occlusion_window
    assert cell["carried_frames_total"] >= 2 * (b - a)
    assert all(r["carried_frames"] >= b - a for r in cell["runs"])


def test_slip_cell_counts_backtracks():
    slip = {"kind": "grasp_slip", "trigger": {"waypoint": 20}, "magnitude": {"p": [0.04, 0, 0], "q": [1, 0, 0, 0]}}
    cell = run_suite(small_config(task="lift", perturbations=[slip]))["cells"][0]
    assert cell["backtracks_total"] >= 2 and cell["success_rate"] == 1.0


def test_report_is_reproducible_and_plot_data_shape():
    cfg = {
        "schema": SCHEMA,
        "cells": [
            {"task": "sweep", "variant": "pnp-track", "seeds": [3], "obs_noise_m": 0.001},
            {"name": "pour-oracle", "task": "pour", "seeds": [1, 2]},
        ],
    }
    a = report_json(run_suite(copy.deepcopy(cfg)))
    b = report_json(run_suite(copy.deepcopy(cfg)))
    assert a == b
    rep = json.loads(a)
    assert rep["schema"] == SCHEMA
    assert [c["name"] for c in rep["cells"]] == ["sweep-pnp-track-0", "pour-oracle"]
    rows = list(csv.DictReader(io.StringIO(plot_csv(rep))))
    assert len(rows) == 2 * len(PLOT_METRICS)
    assert list(rows[0]) == ["cell", "task", "variant", "metric", "value"]
