import json
import math

import numpy as np
import pytest

from vbd_twohost import calibrate
from vbd_twohost.calibrate import (
    CalibrationError,
    FitSpec,
    Objective,
    Tolerances,
    confidence_bands,
    fd_gradient,
    latin_hypercube_starts,
    local_optimize,
    loss,
    multi_start_calibrate,
)
from vbd_twohost.datagen import NoiseConfig, generate_dataset

TRUTH = np.array([0.1, 0.8, 1 / 120, 1 / 60])


@pytest.fixture(scope="module")
def clean_fit(clean_dataset, table2):
    return multi_start_calibrate(clean_dataset, table2, FitSpec(n_starts=3, seed=5))


@pytest.fixture(scope="module")
def noisy_fit(noisy_dataset, table2):
    return multi_start_calibrate(noisy_dataset, table2, FitSpec(n_starts=3, seed=5))


def test_loss_at_truth_is_zero(clean_dataset, table2):
    assert loss(TRUTH, clean_dataset, table2, FitSpec()) <= 1e-10


def test_loss_detects_recovery_perturbation(clean_dataset, table2):
    theta = TRUTH.copy()
    theta[2] *= 1.5
    assert loss(theta, clean_dataset, table2, FitSpec()) > 0


def test_loss_invariant_to_joint_unit_scaling(table2):
    # the model is homogeneous of degree one in (populations, state), so a
    # 10x population with the same noise draws scales both series by 10
    big = table2.with_values(n_d=10 * table2.n_d, n_nd=10 * table2.n_nd, n_v=10 * table2.n_v)
    noise = NoiseConfig(seed=3)
    small_ds = generate_dataset(table2, duration_days=400, noise=noise)
    big_ds = generate_dataset(big, duration_days=400, noise=noise)
    np.testing.assert_allclose(big_ds["obs_I_MD"], 10 * small_ds["obs_I_MD"], rtol=1e-7)
    theta = np.array([0.12, 0.6, 0.01, 0.02])
    spec = FitSpec()
    assert loss(theta, big_ds, big, spec) == pytest.approx(loss(theta, small_ds, table2, spec), rel=1e-6)


def test_loss_rejects_out_of_bounds(clean_dataset, table2):
    with pytest.raises(ValueError):
        loss([0.6, 0.8, 0.01, 0.02], clean_dataset, table2, FitSpec())


def test_integration_failure_becomes_penalty(clean_dataset, table2, monkeypatch):
    def broken(*args, **kwargs):
        raise calibrate.IntegrationError("step size underflow", 3.0)

    monkeypatch.setattr(calibrate, "solve_ivp", broken)
    obj = Objective(clean_dataset, table2, FitSpec())
    assert obj(TRUTH) == calibrate.PENALTY
    assert obj.n_failures == 1 and "underflow" in obj.last_failure


def test_fd_gradient_stays_inside_bounds():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float((x[0] - 0.3) ** 2)

    g = fd_gradient(f, np.array([0.0]), np.array([0.0]), np.array([1.0]))
    assert all(0.0 <= x[0] <= 1.0 for x in seen)
    assert g[0] == pytest.approx(-0.6, abs=1e-6)


def test_quadratic_bowl():
    res = local_optimize(lambda x: float((x[0] - 3) ** 2), [0.0], ([-10.0], [10.0]))
    assert res.theta[0] == pytest.approx(3.0, abs=1e-6)


def test_rosenbrock():
    def rosen(x):
        return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)

    res = local_optimize(rosen, [-1.2, 1.0], ([-5.0, -5.0], [5.0, 5.0]))
    np.testing.assert_allclose(res.theta, [1.0, 1.0], atol=1e-4)


def test_active_bound():
    res = local_optimize(lambda x: float((x[0] - 2) ** 2), [0.0], ([-1.0], [1.0]))
    assert res.theta[0] == 1.0
    assert res.pg_norm <= 1e-8


def test_non_finite_start_fails_immediately():
    res = local_optimize(lambda x: math.nan, [0.0], ([-1.0], [1.0]))
    assert not res.success and res.iterations == 0 and "not finite" in res.reason


def test_start_outside_bounds_rejected():
    with pytest.raises(ValueError):
        local_optimize(lambda x: 0.0, [2.0], ([-1.0], [1.0]))


def test_fitspec_validation():
    with pytest.raises(ValueError):
        FitSpec(free=("beta",))
    with pytest.raises(ValueError):
        FitSpec(bounds={"a_mean": (0.5, 0.1)})
    with pytest.raises(ValueError):
        FitSpec(bounds={"a_mean": (0.0, math.inf)})
    with pytest.raises(ValueError):
        FitSpec(n_starts=0)


def test_latin_hypercube_stratifies_each_axis():
    spec = FitSpec(n_starts=8, seed=3)
    pts = latin_hypercube_starts(spec)
    unit = (pts - spec.lower) / (spec.upper - spec.lower)
    for col in unit.T:
        assert sorted(np.floor(col * 8).astype(int)) == list(range(8))
    np.testing.assert_array_equal(pts, latin_hypercube_starts(spec))


def test_zero_noise_recovery(clean_fit):
    np.testing.assert_allclose(clean_fit.theta, TRUTH, rtol=0.02)


def test_best_is_min_over_starts_and_within_bounds(clean_fit, clean_dataset, table2):
    spec = FitSpec(n_starts=3, seed=5)
    assert clean_fit.loss == min(s.loss for s in clean_fit.starts)
    obj = Objective(clean_dataset, table2, spec)
    for rec in clean_fit.starts:
        conv = np.array(rec.converged)
        assert np.all(conv >= spec.lower) and np.all(conv <= spec.upper)
        assert rec.loss <= obj(np.array(rec.start))


def test_single_start_equals_local_optimize(clean_dataset, table2):
    spec = FitSpec(n_starts=1, seed=9)
    fit = multi_start_calibrate(clean_dataset, table2, spec)
    obj = Objective(clean_dataset, table2, spec)
    start = latin_hypercube_starts(spec)[0]
    res = local_optimize(obj, start, (spec.lower, spec.upper), spec.tolerances)
    np.testing.assert_array_equal(fit.theta, res.theta)
    assert fit.loss == res.loss


def test_calibration_is_deterministic(table2):
    ds = generate_dataset(table2, duration_days=760, noise=NoiseConfig(seed=4))
    spec = FitSpec(n_starts=2, seed=1, tolerances=Tolerances(max_iter=15))
    a = multi_start_calibrate(ds, table2, spec)
    b = multi_start_calibrate(ds, table2, spec)
    assert a.to_json() == b.to_json()
    np.testing.assert_array_equal(a.bands.fit_md, b.bands.fit_md)


def test_short_dataset_warns(table2):
    ds = generate_dataset(table2, duration_days=200, noise=NoiseConfig(0.0, 0.0))
    spec = FitSpec(free=("gamma_md",), n_starts=1, tolerances=Tolerances(max_iter=3))
    with pytest.warns(UserWarning, match="seasonal periods"):
        multi_start_calibrate(ds, table2, spec)


def test_all_starts_failing_raises(clean_dataset, table2, monkeypatch):
    monkeypatch.setattr(Objective, "__call__", lambda self, theta: math.inf)
    with pytest.raises(CalibrationError, match="all 2 starts failed"):
        multi_start_calibrate(clean_dataset, table2, FitSpec(n_starts=2))


def test_empty_dataset_rejected(clean_dataset, table2):
    from vbd_twohost.datagen import Dataset

    empty = Dataset(clean_dataset.table[:0].copy())
    with pytest.raises(CalibrationError):
        multi_start_calibrate(empty, table2, FitSpec(n_starts=1))


def test_initial_fractions_can_be_fitted(table2):
    ds = generate_dataset(table2, duration_days=760, noise=NoiseConfig(0.0, 0.0))
    spec = FitSpec(free=("i_md0",), n_starts=1, seed=2)
    fit = multi_start_calibrate(ds, table2, spec)
    assert fit.values["i_md0"] == pytest.approx(0.025, rel=0.02)
    assert fit.initial.i_md + fit.initial.s_d == pytest.approx(table2.n_d)


def test_zero_noise_band_is_tight(clean_fit, clean_dataset, table2):
    bands = clean_fit.bands
    assert np.max(bands.hi_md - bands.fit_md) <= 1e-3 * np.ptp(clean_dataset["I_MD"])
    assert np.max(bands.hi_m - bands.fit_m) <= 1e-3 * np.ptp(clean_dataset["I_M"])


def test_band_is_symmetric(noisy_fit):
    b = noisy_fit.bands
    np.testing.assert_allclose(b.hi_md - b.fit_md, b.fit_md - b.lo_md, rtol=1e-12)
    np.testing.assert_allclose(b.hi_m - b.fit_m, b.fit_m - b.lo_m, rtol=1e-12)


def test_band_coverage(noisy_fit, noisy_dataset):
    cov_md, cov_m = noisy_fit.bands.coverage(noisy_dataset)
    assert 0.90 <= cov_md <= 0.98
    assert 0.90 <= cov_m <= 0.98


def test_band_needs_ten_residuals(noisy_fit, noisy_dataset, table2):
    from vbd_twohost.datagen import Dataset

    tiny = Dataset(noisy_dataset.table[:9].copy())
    with pytest.raises(CalibrationError, match="10 residuals"):
        confidence_bands(noisy_fit, tiny, table2)


def test_fit_serialisation(tmp_path, noisy_fit):
    data = json.loads(noisy_fit.to_json())
    assert set(data["fitted"]) == {"a_mean", "a_amp", "gamma_md", "gamma_nd"}
    assert len(data["starts"]) == 3
    path = tmp_path / "curves.csv"
    noisy_fit.bands.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,fit_I_MD,lo_I_MD,hi_I_MD,fit_I_M,lo_I_M,hi_I_M"
    assert len(lines) == 1082
