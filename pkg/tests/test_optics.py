import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ionfringe.errors import ValidationError
from ionfringe.optics import (OpticsConfig, beam_amplitude, beam_profile, detection_coupling,
                              relative_phase)


def test_relative_phase_examples():
    cfg = OpticsConfig(wavelength=397e-9, theta=math.radians(45))
    assert cfg.fringe_period == pytest.approx(1355.4e-9, rel=1e-4)
    assert relative_phase(cfg, cfg.fringe_period) == pytest.approx(2 * math.pi, rel=1e-14)
    assert relative_phase(cfg, 0.0) == 0.0
    perpendicular = OpticsConfig(wavelength=397e-9, theta=math.pi / 2)
    assert relative_phase(perpendicular, 397e-9) == pytest.approx(2 * math.pi, rel=1e-14)


@given(st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3))
def test_relative_phase_linear(z1, z2):
    cfg = OpticsConfig()
    assert relative_phase(cfg, z1 + z2) == pytest.approx(relative_phase(cfg, z1) + relative_phase(cfg, z2),
                                                         abs=1e-9)


def test_beam_amplitude_uniform_limit():
    cfg = OpticsConfig(beam_sigma_z=math.inf)
    z = np.linspace(-1e-3, 1e-3, 7)
    np.testing.assert_array_equal(beam_amplitude(cfg, z, a0=2.5), 2.5)


def test_beam_amplitude_efold_convention():
    sigma = 115e-6
    cfg = OpticsConfig(beam_sigma_z=sigma)
    peak = beam_amplitude(cfg, 0.0)
    assert peak == pytest.approx(1 / (math.sqrt(2 * math.pi) * sigma))
    assert beam_amplitude(cfg, sigma) / peak == pytest.approx(math.exp(-1))
    assert beam_profile(cfg, -sigma) == pytest.approx(beam_profile(cfg, sigma))


def test_beam_profile_standard_convention():
    cfg = OpticsConfig(beam_sigma_z=100e-6, gaussian_convention="standard")
    assert beam_profile(cfg, 100e-6) == pytest.approx(math.exp(-0.5))


@given(st.floats(1e-6, 1e-3), st.floats(0, 5))
def test_beam_profile_depends_on_ratio(sigma, ratio):
    cfg = OpticsConfig(beam_sigma_z=sigma)
    assert beam_profile(cfg, ratio * sigma) == pytest.approx(math.exp(-(ratio**2)), rel=1e-12, abs=1e-300)


def test_beam_profile_monotone():
    cfg = OpticsConfig(beam_sigma_z=50e-6)
    values = beam_profile(cfg, np.linspace(0, 300e-6, 100))
    assert np.all(np.diff(values) < 0)


def test_detection_coupling():
    flat = OpticsConfig()
    assert np.all(detection_coupling(flat, np.linspace(-1e-3, 1e-3, 5)) == 1.0)
    cfg = OpticsConfig(rayleigh_range=2.3e-3, detection_envelope="lorentzian")
    assert detection_coupling(cfg, 183.5e-6) == pytest.approx(0.9937, abs=1e-4)
    assert detection_coupling(cfg, 0.0) == 1.0
    assert detection_coupling(cfg, 2.3e-3) == pytest.approx(0.5)
    z = np.linspace(0, 183.5e-6, 50)
    values = detection_coupling(cfg, z)
    assert np.all(values >= 0.99)
    assert np.all(np.diff(values) < 0)
    np.testing.assert_array_equal(values, detection_coupling(cfg, -z))


@pytest.mark.parametrize("kwargs", [
    {"wavelength": 0.0}, {"theta": 0.0}, {"theta": math.pi}, {"beam_sigma_z": -1.0},
    {"rayleigh_range": 0.0}, {"gaussian_convention": "other"}, {"detection_envelope": "cosine"},
])
def test_optics_config_validation(kwargs):
    with pytest.raises(ValidationError):
        OpticsConfig(**kwargs)
