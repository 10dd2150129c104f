"""Axial trap calibration and equilibrium positions of a linear ion chain.

Positions are solved once in dimensionless units ``u`` (force balance
``u_m - sum_{p<m} (u_m - u_p)^-2 + sum_{p>m} (u_m - u_p)^-2 = 0``) and scaled to
meters with the length scale ``(q^2 / (4 pi eps0 M w_z^2))^(1/3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import constants, optimize

from .errors import ConvergenceError, ValidationError

AMU = constants.physical_constants["atomic mass constant"][0]
E_CHARGE = constants.e
EPS0 = constants.epsilon_0

FORCE_TOL = 1e-10
MAX_IONS = 200


@dataclass(frozen=True)
class TrapConfig:
    """Ion species and the voltage -> axial frequency calibration ``f = a sqrt(U - U0)``."""

    ion_mass: float = 40.0 * AMU
    ion_charge: float = E_CHARGE
    calib_a: float = 34.8e3
    calib_u0: float = 1.03
    radial_freq: float = 1.66e6
    # per-N multiplicative correction of the axial frequency, keyed by ion number
    axial_freq_factor: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ion_mass > 0:
            raise ValidationError("ion_mass must be positive")
        if not self.ion_charge > 0:
            raise ValidationError("ion_charge must be positive")
        if not self.calib_a > 0:
            raise ValidationError("calib_a must be positive")
        for n, factor in self.axial_freq_factor.items():
            if not factor > 0:
                raise ValidationError(f"axial frequency factor for N={n} must be positive")


@dataclass(frozen=True)
class IonChain:
    n_ions: int
    length_scale: float
    u_positions: np.ndarray
    z_positions: np.ndarray

    @property
    def length(self) -> float:
        return float(self.z_positions[-1] - self.z_positions[0])

    def spacing(self, pair: str = "innermost") -> float:
        """Distance between neighbouring ions; ``pair`` is innermost, outermost or mean."""
        if self.n_ions < 2:
            raise ValidationError("a single ion has no spacing")
        return self.length_scale * pair_spacing(self.u_positions, pair)


def pair_spacing(u: np.ndarray, pair: str = "innermost") -> float:
    gaps = np.diff(u)
    if pair == "innermost":
        return float(gaps[(len(gaps) - 1) // 2])
    if pair == "outermost":
        return float(gaps[0])
    if pair == "mean":
        return float(gaps.mean())
    raise ValidationError(f"unknown pair selection {pair!r}")


def calibrate_axial(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Fit ``f = a sqrt(U - U0)`` to ``(U_tip [V], f_z [Hz])`` pairs.

    Two points are solved exactly; more points by least squares on the
    frequency residuals. Returns ``(a, U0)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValidationError("axial calibration needs at least 2 (voltage, frequency) points")
    u, f = pts[:, 0], pts[:, 1]
    if len(np.unique(u)) != len(u):
        raise ValidationError("calibration voltages must be distinct")
    if np.any(f <= 0):
        raise ValidationError("calibration frequencies must be positive")

    # f^2 = a^2 U - a^2 U0 is linear in U: exact for 2 points, used as a start otherwise
    slope, intercept = np.polyfit(u, f**2, 1)
    if slope <= 0:
        raise ValidationError("calibration frequencies do not increase with voltage")
    a, u0 = np.sqrt(slope), -intercept / slope

    if len(pts) > 2:
        def resid(p):
            return p[0] * np.sqrt(np.clip(u - p[1], 0.0, None)) - f

        sol = optimize.least_squares(
            resid, [a, min(u0, u.min() - 1e-6)], x_scale=[a, max(abs(u0), 1.0)],
            xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        a, u0 = sol.x
    if u0 >= u.min():
        raise ValidationError(
            f"non-physical calibration: offset U0={u0:.6g} V is not below the lowest "
            f"calibration voltage {u.min():.6g} V"
        )
    return float(a), float(u0)


def axial_frequency(cfg: TrapConfig, u_tip, n_ions: int | None = None):
    """Axial COM frequency in Hz; vectorized over ``u_tip``."""
    u_tip = np.asarray(u_tip, dtype=float)
    if np.any(u_tip <= cfg.calib_u0):
        raise ValidationError(
            f"tip voltage must exceed the calibration offset {cfg.calib_u0:.6g} V"
        )
    f = cfg.calib_a * np.sqrt(u_tip - cfg.calib_u0)
    if n_ions is not None:
        f = f * cfg.axial_freq_factor.get(n_ions, 1.0)
    return f if f.ndim else float(f)


def length_scale(cfg: TrapConfig, f_z):
    f_z = np.asarray(f_z, dtype=float)
    if np.any(f_z <= 0):
        raise ValidationError("axial frequency must be positive")
    omega = 2 * np.pi * f_z
    ell = (cfg.ion_charge**2 / (4 * np.pi * EPS0 * cfg.ion_mass * omega**2)) ** (1 / 3)
    return ell if ell.ndim else float(ell)


def force_residual(u: np.ndarray) -> np.ndarray:
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return u - np.sum(np.sign(d) / d**2, axis=1)


def _jacobian(u: np.ndarray) -> np.ndarray:
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    jac = -2.0 / np.abs(d) ** 3
    np.fill_diagonal(jac, 1.0 + np.sum(2.0 / np.abs(d) ** 3, axis=1))
    return jac


def _initial_guess(n: int) -> np.ndarray:
    # uniform spacing over a span growing like n^(2/3), a little wider than the true chain
    half = 0.9 * n ** (2 / 3)
    return np.linspace(-half, half, n)


def _newton(u: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    """Damped Newton on the force balance; steps are halved until ordering holds and the residual drops."""
    res = force_residual(u)
    norm = np.max(np.abs(res))
    for _ in range(max_iter):
        if norm < 1e-13:
            break
        step = np.linalg.solve(_jacobian(u), -res)
        t = 1.0
        while t > 1e-10:
            trial = u + t * step
            if np.all(np.diff(trial) > 0):
                trial_res = force_residual(trial)
                trial_norm = np.max(np.abs(trial_res))
                if trial_norm < norm:
                    break
            t *= 0.5
        else:
            break
        u, res, norm = trial, trial_res, trial_norm
    return u, norm


def _energy_descent(n: int) -> np.ndarray:
    def energy(u):
        d = np.abs(u[:, None] - u[None, :])
        iu = np.triu_indices(n, 1)
        return 0.5 * np.sum(u**2) + np.sum(1.0 / d[iu])

    sol = optimize.minimize(energy, _initial_guess(n), jac=force_residual, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 10000})
    return np.sort(sol.x)


@lru_cache(maxsize=None)
def _solve_cached(n: int) -> tuple[float, ...]:
    if n == 1:
        return (0.0,)
    u, norm = _newton(_initial_guess(n), max_iter=200)
    if norm >= FORCE_TOL:
        u, norm = _newton(_energy_descent(n), max_iter=200)
    if norm >= FORCE_TOL:
        raise ConvergenceError(
            f"equilibrium solver did not converge for N={n}: max force residual {norm:.3e}"
        )
    # the equilibrium is mirror symmetric; impose it exactly
    u = 0.5 * (u - u[::-1])
    return tuple(u)


def solve_positions(n: int) -> np.ndarray:
    """Dimensionless equilibrium positions of ``n`` ions, sorted ascending."""
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= MAX_IONS):
        raise ValidationError(f"ion number must be an integer in [1, {MAX_IONS}], got {n!r}")
    return np.array(_solve_cached(int(n)))


def chain_geometry(cfg: TrapConfig, n: int, u_tip: float) -> IonChain:
    u = solve_positions(n)
    ell = length_scale(cfg, axial_frequency(cfg, u_tip, n))
    return IonChain(n_ions=n, length_scale=ell, u_positions=u, z_positions=ell * u)


def chain_lengths(cfg: TrapConfig, n: int, u_tip) -> np.ndarray:
    """Length scale for every voltage in ``u_tip``; positions are ``ell[:, None] * u``."""
    return np.atleast_1d(length_scale(cfg, axial_frequency(cfg, u_tip, n)))
