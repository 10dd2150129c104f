"""Scattering phase, excitation beam profile and axial detection coupling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

GAUSSIAN_CONVENTIONS = ("efold", "standard")
DETECTION_ENVELOPES = ("flat", "lorentzian")


@dataclass(frozen=True)
class OpticsConfig:
    """Geometry of excitation and detection. Angles in radians, lengths in meters."""

    wavelength: float = 397e-9
    theta: float = math.radians(45.19)
    beam_sigma_z: float = math.inf
    mode_waist: float = 17e-6
    rayleigh_range: float = 2.3e-3
    gaussian_convention: str = "efold"
    detection_envelope: str = "flat"

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValidationError("wavelength must be positive")
        if not 0 < self.theta < math.pi:
            raise ValidationError("theta must lie in (0, pi)")
        if not self.beam_sigma_z > 0:
            raise ValidationError("beam_sigma_z must be positive or infinite")
        if not self.rayleigh_range > 0:
            raise ValidationError("rayleigh_range must be positive")
        if self.gaussian_convention not in GAUSSIAN_CONVENTIONS:
            raise ValidationError(f"gaussian_convention must be one of {GAUSSIAN_CONVENTIONS}")
        if self.detection_envelope not in DETECTION_ENVELOPES:
            raise ValidationError(f"detection_envelope must be one of {DETECTION_ENVELOPES}")

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def angular_frequency(self) -> float:
        from scipy.constants import c

        return c * self.wavenumber

    @property
    def fringe_period(self) -> float:
        """Axial displacement that advances the scattering phase by 2 pi."""
        return self.wavelength / (1 - math.cos(self.theta))


def phase_per_meter(cfg: OpticsConfig, theta: float | None = None) -> float:
    theta = cfg.theta if theta is None else theta
    return (1 - math.cos(theta)) * 2 * math.pi / cfg.wavelength


def relative_phase(cfg: OpticsConfig, z, theta: float | None = None):
    """Scattering phase of an emitter at axial position ``z`` relative to the chain center."""
    return np.asarray(z, dtype=float) * phase_per_meter(cfg, theta)


def beam_profile(cfg: OpticsConfig, z, sigma_z: float | None = None):
    """Excitation amplitude relative to the beam center, ``A(z) / A(0)``."""
    sigma = cfg.beam_sigma_z if sigma_z is None else sigma_z
    z = np.asarray(z, dtype=float)
    if math.isinf(sigma):
        return np.ones_like(z)
    if cfg.gaussian_convention == "efold":
        return np.exp(-(z**2) / sigma**2)
    return np.exp(-(z**2) / (2 * sigma**2))


def beam_amplitude(cfg: OpticsConfig, z, a0: float = 1.0, sigma_z: float | None = None):
    """Excitation amplitude including the Gaussian normalization ``1 / (sqrt(2 pi) sigma)``.

    Infinite ``sigma_z`` (uniform illumination) returns ``a0`` unnormalized.
    """
    sigma = cfg.beam_sigma_z if sigma_z is None else sigma_z
    if math.isinf(sigma):
        return a0 * beam_profile(cfg, z, sigma)
    return a0 / (math.sqrt(2 * math.pi) * sigma) * beam_profile(cfg, z, sigma)


def detection_coupling(cfg: OpticsConfig, z, envelope: str | None = None):
    """Relative collection efficiency of the axial detection mode at ``z``, in [0, 1]."""
    envelope = cfg.detection_envelope if envelope is None else envelope
    z = np.asarray(z, dtype=float)
    if envelope == "flat":
        return np.ones_like(z)
    if envelope == "lorentzian":
        return 1.0 / (1.0 + (z / cfg.rayleigh_range) ** 2)
    raise ValidationError(f"unknown detection envelope {envelope!r}")
