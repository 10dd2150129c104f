import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ionfringe.chain import (AMU, TrapConfig, axial_frequency, calibrate_axial, chain_geometry,
                             chain_lengths, force_residual, length_scale, pair_spacing,
                             solve_positions)
from ionfringe.errors import ValidationError


def test_calibration_two_endpoints_match_closed_form():
    a, u0 = calibrate_axial([(4.0, 60e3), (900.0, 1044e3)])
    a_ref, u0_ref = oracles.two_point_sqrt_calibration((4.0, 60e3), (900.0, 1044e3))
    assert a == pytest.approx(a_ref, rel=1e-12)
    assert u0 == pytest.approx(u0_ref, rel=1e-12)
    assert a == pytest.approx(34.8e3, rel=2e-3)
    assert u0 == pytest.approx(1.03, abs=5e-3)
    # back-substitution
    assert a * math.sqrt(4.0 - u0) == pytest.approx(60e3, rel=1e-12)
    assert a * math.sqrt(900.0 - u0) == pytest.approx(1044e3, rel=1e-12)


def test_calibration_pure_sqrt_law():
    a, u0 = calibrate_axial([(1.0, 100e3), (4.0, 200e3)])
    assert a == pytest.approx(100e3, rel=1e-12)
    assert u0 == pytest.approx(0.0, abs=1e-9)


def test_calibration_least_squares_on_consistent_points():
    pts = [(u, 50e3 * math.sqrt(u - 0.7)) for u in (3.0, 10.0, 50.0, 400.0)]
    a, u0 = calibrate_axial(pts)
    assert a == pytest.approx(50e3, rel=1e-9)
    assert u0 == pytest.approx(0.7, abs=1e-7)


@pytest.mark.parametrize("points", [
    [(4.0, 60e3)],
    [],
    [(4.0, 60e3), (4.0, 70e3)],
    [(4.0, -60e3), (9.0, 70e3)],
    [(4.0, 100e3), (9.0, 50e3)],
])
def test_calibration_rejects_bad_input(points):
    with pytest.raises(ValidationError):
        calibrate_axial(points)


def test_calibration_offset_stays_below_voltages():
    # strongly curved data would pull the offset above the lowest voltage
    a, u0 = calibrate_axial([(4.0, 10e3), (5.0, 100e3), (6.0, 101e3), (7.0, 102e3)])
    assert a > 0
    assert u0 < 4.0


def test_axial_frequency_examples():
    cfg = TrapConfig(calib_a=34.8e3, calib_u0=1.03)
    assert axial_frequency(cfg, 4.0) == pytest.approx(60e3, rel=2e-3)
    assert axial_frequency(cfg, 5.3) == pytest.approx(71.9e3, rel=1e-3)
    assert axial_frequency(TrapConfig(calib_a=100e3, calib_u0=0.0), 0.25) == pytest.approx(50e3)
    with pytest.raises(ValidationError):
        axial_frequency(cfg, 1.03)


def test_axial_frequency_per_n_factor():
    cfg = TrapConfig(calib_a=100e3, calib_u0=0.0, axial_freq_factor={53: 1.1})
    assert axial_frequency(cfg, 4.0, 53) == pytest.approx(220e3)
    assert axial_frequency(cfg, 4.0, 20) == pytest.approx(200e3)


def test_length_scale_examples():
    cfg = TrapConfig()
    ref = oracles.length_scale(40.0, 1e6)
    assert length_scale(cfg, 1e6) == pytest.approx(ref, rel=1e-8)
    assert ref == pytest.approx(4.45e-6, rel=2e-3)
    assert length_scale(cfg, 8e6) == pytest.approx(length_scale(cfg, 1e6) / 4, rel=1e-12)
    assert length_scale(cfg, 71.9e3) == pytest.approx(25.7e-6, rel=2e-3)
    with pytest.raises(ValidationError):
        length_scale(cfg, 0.0)


def test_positions_analytic_small_chains():
    assert solve_positions(1) == pytest.approx([0.0])
    assert solve_positions(2) == pytest.approx([-(0.25 ** (1 / 3)), 0.25 ** (1 / 3)], abs=1e-12)
    c = 1.25 ** (1 / 3)
    np.testing.assert_allclose(solve_positions(3), [-c, 0.0, c], atol=1e-12)
    assert c == pytest.approx(1.077217, abs=1e-6)


def test_positions_match_energy_minimization_oracle():
    oracle = oracles.chain_energy_minimum(10, seed=3)
    u = solve_positions(10)
    assert np.max(np.abs(u - oracle)) / np.max(np.abs(u)) < 1e-8


@pytest.mark.parametrize("n", [2, 5, 20, 53, 100, 150, 200])
def test_positions_invariants(n):
    u = solve_positions(n)
    assert len(u) == n
    assert np.all(np.diff(u) > 0)
    assert np.max(np.abs(force_residual(u))) < 1e-10
    assert np.max(np.abs(u + u[::-1])) < 1e-10


def test_positions_reject_out_of_range():
    for n in (0, 201, 2.5):
        with pytest.raises(ValidationError):
            solve_positions(n)


def test_min_spacing_decreases_with_n():
    gaps = [np.min(np.diff(solve_positions(n))) for n in range(2, 60)]
    assert np.all(np.diff(gaps) < 0)


def test_chain_geometry_examples(trap):
    chain = chain_geometry(trap, 53, 5.3)
    assert chain.length == pytest.approx(367e-6, rel=0.25)
    np.testing.assert_allclose(chain.z_positions, chain.length_scale * chain.u_positions, rtol=0, atol=0)
    assert chain_geometry(trap, 1, 10.0).length == 0.0

    cfg = TrapConfig(calib_a=1e6, calib_u0=0.0)
    pair = chain_geometry(cfg, 2, 1.0)
    assert pair.length == pytest.approx(2 * 0.629961 * 4.4477e-6, rel=1e-4)
    assert pair.length == pytest.approx(5.60e-6, rel=2e-3)
    assert pair.spacing() == pytest.approx(pair.length)


def test_chain_length_decreases_with_voltage(trap):
    volts = np.linspace(5, 900, 50)
    lengths = [chain_geometry(trap, 10, v).length for v in volts]
    assert np.all(np.diff(lengths) < 0)
    assert np.all(np.diff(axial_frequency(trap, volts)) > 0)


def test_pair_spacing_selection():
    u = solve_positions(6)
    assert pair_spacing(u, "innermost") == pytest.approx(u[3] - u[2])
    assert pair_spacing(u, "outermost") == pytest.approx(u[1] - u[0])
    assert pair_spacing(u, "mean") == pytest.approx((u[-1] - u[0]) / 5)
    with pytest.raises(ValidationError):
        pair_spacing(u, "widest")


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 900.0), st.integers(2, 30))
def test_positions_scale_linearly_with_length(u_tip, n):
    cfg = TrapConfig(calib_a=34.8e3, calib_u0=1.03, ion_mass=40 * AMU)
    chain = chain_geometry(cfg, n, u_tip)
    ell = chain_lengths(cfg, n, [u_tip])[0]
    np.testing.assert_allclose(chain.z_positions, ell * solve_positions(n), rtol=1e-14)
