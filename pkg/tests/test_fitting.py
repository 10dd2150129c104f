import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionfringe.config import load_config
from ionfringe.errors import ConvergenceError, ValidationError
from ionfringe.fitting import (FitBounds, MeasuredScan, fit_full, fit_linear, subtract_background,
                               visibility, visibility_from_fit)
from ionfringe.interference import DephasingConfig, FitParams, PatternModel
from ionfringe.optics import OpticsConfig
from ionfringe.synthetic import default_free, experiment_like_scan, poisson_scan

THETA = math.radians(45.19)


def exact_scan(model, params, volts, t=5.0):
    rate = model.observed(volts, params)
    return MeasuredScan(volts, rate, np.sqrt(rate / t), n_ions=model.n_ions)


def test_fit_linear_exact_recovery():
    x = np.linspace(0, 1, 40)
    shape = 1 + np.cos(7 * x)
    rate = 10 + 3 * shape
    scan = MeasuredScan(np.linspace(5, 40, 40), rate, np.full(40, 0.5))
    lin = fit_linear(scan, shape)
    assert lin.i_incoh == pytest.approx(10, rel=1e-10)
    assert lin.kappa == pytest.approx(3, rel=1e-10)
    assert lin.chi2 == pytest.approx(0, abs=1e-18)


def test_fit_linear_poisson_recovery():
    rng = np.random.default_rng(2)
    u = np.linspace(5, 40, 100)
    shape = 2 + 2 * np.cos(u)
    counts = rng.poisson((10 + 3 * shape) * 5.0)
    scan = MeasuredScan(u, counts / 5.0, np.sqrt(np.maximum(counts, 1)) / 5.0)
    lin = fit_linear(scan, shape)
    # covariance of the weighted two-parameter fit
    w = scan.weights()
    design = np.column_stack([np.ones_like(shape), shape])
    cov = np.linalg.inv(design.T @ (w[:, None] * design))
    assert abs(lin.i_incoh - 10) < 3 * math.sqrt(cov[0, 0])
    assert abs(lin.kappa - 3) < 3 * math.sqrt(cov[1, 1])


def test_fit_linear_constant_shape_is_unidentifiable():
    scan = MeasuredScan(np.arange(5.0, 15.0), np.full(10, 4.0), np.ones(10))
    with pytest.raises(ValidationError, match="unidentifiable"):
        fit_linear(scan, np.ones(10))


def test_fit_linear_rejects_misaligned_shape():
    scan = MeasuredScan(np.arange(5.0, 15.0), np.full(10, 4.0), np.ones(10))
    with pytest.raises(ValidationError):
        fit_linear(scan, np.ones(9))


def test_fit_linear_matches_grid_search_oracle():
    rng = np.random.default_rng(8)
    u = np.linspace(5, 10, 12)
    shape = 1 + np.cos(2 * u)
    scan = MeasuredScan(u, 5 + 2 * shape + rng.normal(0, 0.3, 12).clip(-4, None), rng.uniform(0.2, 0.5, 12))
    lin = fit_linear(scan, shape)
    w = scan.weights()

    def chi2(a, b):
        return np.sum(w * (scan.rate[None, None, :] - a[:, :, None] - b[:, :, None] * shape) ** 2, axis=-1)

    # successive zoomed grids around the running best
    a0, b0, half = 5.0, 2.0, 2.0
    for _ in range(12):
        a, b = np.meshgrid(np.linspace(a0 - half, a0 + half, 81), np.linspace(b0 - half, b0 + half, 81))
        values = chi2(a, b)
        k = np.unravel_index(np.argmin(values), values.shape)
        a0, b0, half = a[k], b[k], half / 8
    assert lin.chi2 == pytest.approx(float(values[k]), rel=1e-8)


def test_fit_linear_nonnegative_boundary():
    u = np.linspace(5, 10, 20)
    shape = 1 + np.cos(u)
    # rates fall as the shape rises: the unconstrained kappa would be negative
    scan = MeasuredScan(u, 5 - shape + 2.5, np.ones(20))
    lin = fit_linear(scan, shape)
    assert lin.kappa >= 0 and lin.i_incoh >= 0


@pytest.fixture(scope="module")
def model20(trap):
    optics = OpticsConfig(theta=THETA, beam_sigma_z=60e-6)
    return PatternModel(trap, 20, optics, dephasing=DephasingConfig(0.66))


@pytest.fixture(scope="module")
def truth20():
    return FitParams(i_incoh=12.0, kappa=4.0, theta=math.radians(45.23), sigma_z=60e-6, delta_u=0.04)


def test_empty_free_set_equals_linear_fit(model20, truth20):
    volts = np.linspace(15, 40, 80)
    scan = poisson_scan(model20, truth20, volts, 5.0, seed=1)
    result = fit_full(scan, model20, free=(), initial=truth20)
    lin = fit_linear(scan, model20.normalized_intensity(volts, truth20.theta, truth20.sigma_z, truth20.delta_u))
    assert result.params.i_incoh == lin.i_incoh
    assert result.params.kappa == lin.kappa
    assert result.chi2 == lin.chi2
    assert result.dof == 78


@pytest.mark.parametrize("free", [s for r in range(4) for s in itertools.combinations(
    ("theta", "sigma_z", "delta_u"), r)])
def test_noiseless_round_trip(model20, truth20, free):
    volts = np.linspace(15, 40, 80)
    scan = exact_scan(model20, truth20, volts)
    # parameters held fixed start at their true values; free ones start off by a margin
    initial = replace(truth20, i_incoh=0.0, kappa=1.0,
                      theta=THETA if "theta" in free else truth20.theta,
                      sigma_z=80e-6 if "sigma_z" in free else truth20.sigma_z,
                      delta_u=0.0 if "delta_u" in free else truth20.delta_u)
    result = fit_full(scan, model20, free=free, initial=initial, seed=4)
    for name in ("i_incoh", "kappa", "theta", "sigma_z", "delta_u"):
        assert getattr(result.params, name) == pytest.approx(getattr(truth20, name), rel=1e-6), name


def test_two_ion_theta_recovery(trap):
    model = PatternModel(trap, 2, OpticsConfig(theta=THETA), dephasing=DephasingConfig(0.19))
    truth = FitParams(i_incoh=9.3, kappa=8.2, theta=THETA)
    scan = poisson_scan(model, truth, np.linspace(5, 40, 60), 5.0, seed=17)
    result = fit_full(scan, model, free=("theta",), initial=replace(truth, theta=math.radians(45.24)))
    assert abs(math.degrees(result.params.theta) - 45.19) < 0.1
    assert result.param_stderr["theta"] > 0
    assert result.reduced_chi2 < 2


def test_53_ion_beam_width_recovery():
    cfg = load_config("paper_defaults")
    scan, truth = experiment_like_scan(cfg, 53, seed=0)
    model = PatternModel(cfg.trap, 53, cfg.optics, dephasing=cfg.dephasing)
    result = fit_full(scan, model, free=default_free(53))
    assert truth.sigma_z == pytest.approx(115e-6)
    assert result.params.sigma_z == pytest.approx(115e-6, rel=0.15)


def test_chi2_nonincreasing_for_nested_models(model20, truth20):
    scan = poisson_scan(model20, truth20, np.linspace(15, 40, 80), 5.0, seed=3)
    initial = replace(truth20, theta=THETA, sigma_z=80e-6, delta_u=0.0)
    chi = [fit_full(scan, model20, free=free, initial=initial, seed=2).chi2
           for free in ((), ("theta",), ("theta", "sigma_z"), ("theta", "sigma_z", "delta_u"))]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(chi, chi[1:]))


def test_fit_full_validation(model20, truth20):
    scan = exact_scan(model20, truth20, np.linspace(15, 40, 4))
    with pytest.raises(ValidationError):
        fit_full(scan, model20, free=("gamma",))
    with pytest.raises(ValidationError):
        fit_full(scan, model20, free=("theta", "sigma_z"))
    wrong = PatternModel(model20.trap, 3)
    with pytest.raises(ValidationError):
        fit_full(scan, wrong)


def test_fit_full_reports_nonconvergence(model20, truth20, monkeypatch):
    import ionfringe.fitting as fitting

    scan = exact_scan(model20, truth20, np.linspace(15, 40, 40))
    monkeypatch.setattr(fitting, "_local_search", lambda problem, x0: (x0, math.inf, False))
    with pytest.raises(ConvergenceError):
        fit_full(scan, model20, free=("theta",))


def test_pinned_parameter_flagged(model20, truth20):
    scan = exact_scan(model20, truth20, np.linspace(15, 40, 60))
    bounds = FitBounds(delta_u=(-0.5, 0.01))
    result = fit_full(scan, model20, free=("delta_u",), initial=truth20, bounds=bounds)
    assert "delta_u" in result.pinned


def test_bootstrap_errors_close_to_curvature(trap):
    model = PatternModel(trap, 2, OpticsConfig(theta=THETA), dephasing=DephasingConfig(0.19))
    truth = FitParams(i_incoh=9.3, kappa=8.2, theta=THETA)
    scan = poisson_scan(model, truth, np.linspace(5, 40, 60), 5.0, seed=5)
    curvature = fit_full(scan, model, free=("theta",), initial=truth)
    boot = fit_full(scan, model, free=("theta",), initial=truth, bootstrap=40, seed=1)
    ratio = boot.param_stderr["theta"] / curvature.param_stderr["theta"]
    assert 0.6 < ratio < 1.6


def test_visibility_examples():
    assert visibility(100, 20) == pytest.approx(2 / 3)
    assert visibility(30, 10) == 0.5
    assert visibility(5, 5) == 0.0
    assert visibility(0, 0) == 0.0
    total = 42.1
    assert subtract_background(0.19, total, 9.3) == pytest.approx(0.34, abs=0.005)
    with pytest.raises(ValidationError):
        subtract_background(0.19, 10.0, 9.3)


@settings(max_examples=60)
@given(st.lists(st.floats(20, 1000), min_size=2, max_size=30), st.floats(0, 9.9))
def test_background_subtraction_algebra(pattern, background):
    p = np.asarray(pattern)
    v_raw = visibility(p.max(), p.min())
    direct = visibility(p.max() - background, p.min() - background)
    assert subtract_background(v_raw, p.max() + p.min(), background) == pytest.approx(direct, rel=1e-9, abs=1e-12)


def test_visibility_from_fit_two_ions(trap):
    model = PatternModel(trap, 2, OpticsConfig(theta=THETA), dephasing=DephasingConfig(0.19))
    truth = FitParams(i_incoh=0.0, kappa=10.0, theta=THETA)
    scan = exact_scan(model, truth, np.linspace(5, 40, 60))
    result = fit_full(scan, model, free=(), initial=truth)
    assert visibility_from_fit(result, model, (5, 40)) == pytest.approx(0.19, abs=1e-4)
    lifted = replace(result, params=replace(result.params, i_incoh=5.0))
    assert visibility_from_fit(lifted, model, (5, 40), background=5.0) == pytest.approx(0.19, abs=1e-4)


def test_measured_scan_validation():
    with pytest.raises(ValidationError):
        MeasuredScan([1.0, 2.0], [1.0, -1.0], [1.0, 1.0])
    with pytest.raises(ValidationError):
        MeasuredScan([1.0, 2.0], [1.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValidationError):
        MeasuredScan([1.0], [1.0, 2.0], [1.0, 1.0])
    scan = MeasuredScan([3.0, 1.0, 2.0], [30.0, 10.0, 20.0], [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(scan.u_tip, [1, 2, 3])
    np.testing.assert_array_equal(scan.rate, [10, 20, 30])
    with pytest.raises(ValidationError):
        scan.weights("cubic")
