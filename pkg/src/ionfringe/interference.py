"""Intensity patterns of light scattered by an ion chain as a function of tip voltage.

All intensities here are normalized to one unit per fully illuminated ion. The
observed count rate is ``i_incoh + kappa * normalized_intensity``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .chain import TrapConfig, chain_lengths, solve_positions
from .errors import ValidationError
from .optics import OpticsConfig, beam_profile, detection_coupling, relative_phase

PROFILE_KINDS = ("uniform", "subset_incoherent", "gaussian_edge", "gaussian_edge_inverted")
_CHUNK = 4096


@dataclass(frozen=True)
class CoherenceProfile:
    """Coherent fraction of the light scattered by each ion."""

    fractions: tuple[float, ...]
    kind: str = "uniform"

    def __post_init__(self):
        c = np.asarray(self.fractions, dtype=float)
        if c.ndim != 1 or len(c) == 0:
            raise ValidationError("coherence profile needs one fraction per ion")
        if np.any((c < 0) | (c > 1)):
            raise ValidationError("coherent fractions must lie in [0, 1]")
        if self.kind == "uniform" and np.ptp(c) != 0:
            raise ValidationError("uniform profile must have equal fractions")
        if self.kind not in PROFILE_KINDS:
            raise ValidationError(f"unknown profile kind {self.kind!r}")

    @property
    def n_ions(self) -> int:
        return len(self.fractions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.fractions, dtype=float)


def make_profile(kind: str, n: int, indices=()) -> CoherenceProfile:
    """Build a coherence profile for ``n`` ions.

    ``indices`` (1-based, counted from one chain end) selects the fully
    incoherent ions for ``subset_incoherent``. The Gaussian kinds depend only
    on relative positions, so they hold at every tip voltage.
    """
    if n < 1:
        raise ValidationError("profile needs at least one ion")
    if kind == "uniform":
        c = np.ones(n)
    elif kind == "subset_incoherent":
        idx = [int(i) for i in indices]
        if not idx or any(i < 1 or i > n for i in idx):
            raise ValidationError(f"incoherent ion indices must lie in 1..{n}, got {list(indices)}")
        c = np.ones(n)
        c[np.array(idx) - 1] = 0.0
    elif kind in ("gaussian_edge", "gaussian_edge_inverted"):
        u = solve_positions(n)
        edge = np.max(np.abs(u))
        r2 = (u / edge) ** 2 if edge > 0 else np.zeros(n)
        c = np.exp(-r2) if kind == "gaussian_edge" else np.exp(-(1.0 - r2))
    else:
        raise ValidationError(f"unknown profile kind {kind!r}")
    return CoherenceProfile(tuple(float(x) for x in c), kind)


@dataclass(frozen=True)
class DephasingConfig:
    """Contrast loss from inelastic scattering (a fixed factor) and thermal position jitter.

    ``mode_variances`` holds ``(axis, variance_m2)`` pairs with axis ``axial``
    (stretch-like) or ``radial`` (zig-zag-like) for the relative ion coordinate.
    """

    saturation_visibility_factor: float = 1.0
    mode_variances: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not 0 < self.saturation_visibility_factor <= 1:
            raise ValidationError("saturation_visibility_factor must lie in (0, 1]")
        for axis, var in self.mode_variances:
            if axis not in ("axial", "radial"):
                raise ValidationError(f"mode axis must be axial or radial, got {axis!r}")
            if var < 0:
                raise ValidationError("mode variances must be non-negative")


@dataclass(frozen=True)
class FitParams:
    i_incoh: float = 0.0
    kappa: float = 1.0
    theta: float = math.radians(45.19)
    sigma_z: float = math.inf
    delta_u: float = 0.0

    def __post_init__(self):
        if self.i_incoh < 0 or self.kappa < 0:
            raise ValidationError("i_incoh and kappa must be non-negative")
        if abs(self.delta_u) > 1.0:
            raise ValidationError("|delta_u| above 1 V is outside the sane range")


def coherent_intensity(phases, amplitudes) -> float:
    """``|sum_j A_j exp(i phi_j)|^2``."""
    phases = np.asarray(phases, dtype=float)
    amplitudes = np.asarray(amplitudes, dtype=float)
    if phases.shape != amplitudes.shape or phases.ndim != 1 or len(phases) == 0:
        raise ValidationError("phases and amplitudes must be equal-length non-empty lists")
    field_sum = np.sum(amplitudes * np.exp(1j * phases))
    return float(field_sum.real**2 + field_sum.imag**2)


def two_ion_visibility_factors(deph: DephasingConfig, optics: OpticsConfig,
                               theta: float | None = None) -> float:
    """Contrast factor: saturation factor times the Gaussian jitter (Debye-Waller) term.

    Axial jitter of the relative coordinate couples with ``k (1 - cos theta)``,
    radial jitter with ``k sin theta``.
    """
    theta = optics.theta if theta is None else theta
    k = optics.wavenumber
    k_eff2 = {"axial": (k * (1 - math.cos(theta))) ** 2, "radial": (k * math.sin(theta)) ** 2}
    exponent = sum(k_eff2[axis] * var for axis, var in deph.mode_variances)
    return deph.saturation_visibility_factor * math.exp(-exponent / 2)


def _default_workers() -> int:
    return max(1, int(os.environ.get("IONFRINGE_THREADS", "1")))


@dataclass(frozen=True)
class PatternModel:
    """Everything needed to turn tip voltages into a normalized intensity pattern."""

    trap: TrapConfig
    n_ions: int
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    profile: CoherenceProfile | None = None
    dephasing: DephasingConfig = field(default_factory=DephasingConfig)

    def __post_init__(self):
        if self.profile is None:
            object.__setattr__(self, "profile", make_profile("uniform", self.n_ions))
        if self.profile.n_ions != self.n_ions:
            raise ValidationError("coherence profile length differs from the ion number")

    def with_optics(self, **changes) -> "PatternModel":
        return replace(self, optics=replace(self.optics, **changes))

    def contrast(self, theta: float | None = None) -> float:
        return two_ion_visibility_factors(self.dephasing, self.optics, theta)

    def _block(self, ell, u, c, theta, sigma_z, contrast):
        z = ell[:, None] * u[None, :]
        amp = beam_profile(self.optics, z, sigma_z) * detection_coupling(self.optics, z)
        field_sum = np.sum(np.sqrt(c) * amp * np.exp(1j * relative_phase(self.optics, z, theta)), axis=1)
        auto_total = np.sum(amp**2, axis=1)
        auto_coh = np.sum(c * amp**2, axis=1)
        cross = field_sum.real**2 + field_sum.imag**2 - auto_coh
        return auto_total + contrast * cross

    def normalized_intensity(self, u_tip, theta: float | None = None, sigma_z: float | None = None,
                             delta_u: float = 0.0, workers: int | None = None) -> np.ndarray:
        """Scattered intensity per unit single-ion rate at each voltage (shifted by ``delta_u``)."""
        theta = self.optics.theta if theta is None else theta
        sigma_z = self.optics.beam_sigma_z if sigma_z is None else sigma_z
        u_tip = np.atleast_1d(np.asarray(u_tip, dtype=float))
        ell = chain_lengths(self.trap, self.n_ions, u_tip + delta_u)
        return self.normalized_from_lengths(ell, theta, sigma_z, workers)

    def normalized_from_lengths(self, ell, theta: float | None = None, sigma_z: float | None = None,
                                workers: int | None = None) -> np.ndarray:
        theta = self.optics.theta if theta is None else theta
        sigma_z = self.optics.beam_sigma_z if sigma_z is None else sigma_z
        ell = np.atleast_1d(np.asarray(ell, dtype=float))
        u = solve_positions(self.n_ions)
        c = self.profile.as_array()
        contrast = self.contrast(theta)
        chunks = [ell[i:i + _CHUNK] for i in range(0, len(ell), _CHUNK)]
        workers = _default_workers() if workers is None else workers
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda e: self._block(e, u, c, theta, sigma_z, contrast), chunks))
        else:
            parts = [self._block(e, u, c, theta, sigma_z, contrast) for e in chunks]
        return np.concatenate(parts) if parts else np.empty(0)

    def observed(self, u_tip, params: FitParams, workers: int | None = None) -> np.ndarray:
        shape = self.normalized_intensity(u_tip, params.theta, params.sigma_z, params.delta_u, workers)
        return params.i_incoh + params.kappa * shape


def observed_pattern(trap: TrapConfig, n_ions: int, optics: OpticsConfig, profile: CoherenceProfile,
                     deph: DephasingConfig, params: FitParams, u_grid) -> np.ndarray:
    """Observed count rate ``i_incoh + kappa * I_norm(U + delta_u)`` over ``u_grid``."""
    model = PatternModel(trap, n_ions, optics, profile, deph)
    return model.observed(u_grid, params)
