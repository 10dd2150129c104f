"""Derived analyses of interference patterns: visibility, peak width and peak intensity scaling."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .chain import EPS0, TrapConfig, chain_lengths, pair_spacing, solve_positions
from .errors import ValidationError
from .fitting import MeasuredScan, visibility
from .interference import PatternModel, _default_workers
from .optics import OpticsConfig, phase_per_meter

# half-width of the N-slit principal maximum at half height is 2 * 1.3916 / N in phase
NSLIT_FWHM = 5.566


@dataclass(frozen=True)
class VisibilityEstimate:
    n_ions: int
    v_extremal: float
    v_model: float
    method: str = "background-subtracted"

    def __post_init__(self):
        for v in (self.v_extremal, self.v_model):
            if not 0 <= v <= 1:
                raise ValidationError("visibilities must lie in [0, 1]")


@dataclass(frozen=True)
class MonteCarloConfig:
    sigma_p: float
    n_realizations: int = 100
    seed: int = 0
    spacing: float | None = None

    def __post_init__(self):
        if self.sigma_p < 0:
            raise ValidationError("sigma_p must be non-negative")
        if self.n_realizations < 1:
            raise ValidationError("n_realizations must be at least 1")


@dataclass(frozen=True)
class FwhmResult:
    u_peak: float
    peak: float
    width_v: float
    width_m: float
    width_rad: float
    width_normalized: float
    truncated: bool


@dataclass(frozen=True)
class MonteCarloResult:
    n_ions: int
    mean: float
    sd: float
    maxima: np.ndarray
    scan_means: np.ndarray


def voltages_for_lengths(trap: TrapConfig, n_ions: int, ell) -> np.ndarray:
    """Inverse of the calibrated voltage -> length-scale map."""
    ell = np.asarray(ell, dtype=float)
    omega = np.sqrt(trap.ion_charge**2 / (4 * np.pi * EPS0 * trap.ion_mass * ell**3))
    f = omega / (2 * np.pi) / trap.axial_freq_factor.get(n_ions, 1.0)
    return trap.calib_u0 + (f / trap.calib_a) ** 2


def dense_length_grid(model: PatternModel, u_lo: float, u_hi: float, oversample: int = 50,
                      theta: float | None = None, min_points: int = 200) -> np.ndarray:
    """Length-scale grid covering ``[u_lo, u_hi]`` with ``oversample`` points per narrowest fringe.

    Phases are linear in the length scale, so a uniform grid in it has a
    uniform phase pitch; the narrowest fringe follows the N-slit rule.
    """
    if not u_hi > u_lo:
        raise ValidationError("voltage range must be increasing")
    n = model.n_ions
    ell_hi, ell_lo = chain_lengths(model.trap, n, [u_lo, u_hi])
    u = solve_positions(n)
    phase_span = phase_per_meter(model.optics, theta) * (u[-1] - u[0]) * (ell_hi - ell_lo)
    fringe = NSLIT_FWHM / max(n, 2)
    points = max(min_points, int(math.ceil(oversample * phase_span / fringe)) + 1)
    return np.linspace(ell_lo, ell_hi, points)


def visibility_extremal(scan: MeasuredScan, subtract_background: bool = True) -> float:
    """Visibility from the largest and smallest measured rates."""
    if len(scan) < 2:
        raise ValidationError("visibility needs at least two scan points")
    rates = scan.rate - (scan.background_rate if subtract_background else 0.0)
    if np.any(rates < 0):
        warnings.warn("background-subtracted rates below zero were clamped to 0", stacklevel=2)
        rates = np.clip(rates, 0.0, None)
    return visibility(rates.max(), rates.min())


def _refine_max(func, grid: np.ndarray, values: np.ndarray, i: int) -> tuple[float, float]:
    """Golden-section refinement of a grid maximum at index ``i``."""
    if i == 0 or i == len(grid) - 1:
        return float(grid[i]), float(values[i])
    try:
        res = optimize.minimize_scalar(lambda x: -func(np.array([x]))[0], method="golden",
                                       bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                       options={"xtol": 1e-12})
    except ValueError:
        return float(grid[i]), float(values[i])
    if grid[i - 1] <= res.x <= grid[i + 1] and -res.fun >= values[i]:
        return float(res.x), float(-res.fun)
    return float(grid[i]), float(values[i])


def pattern_max(func, grid: np.ndarray, candidates: int = 8) -> tuple[float, float]:
    """Global maximum of ``func`` over ``grid``: the largest local maxima are refined."""
    values = func(grid)
    interior = np.flatnonzero((values[1:-1] >= values[:-2]) & (values[1:-1] >= values[2:])) + 1
    idx = np.concatenate([[0, len(grid) - 1], interior])
    idx = idx[np.argsort(-values[idx], kind="stable")][:candidates]
    best = max((_refine_max(func, grid, values, int(i)) for i in idx), key=lambda t: t[1])
    return best


def fwhm_from_samples(x, y, baseline: float = 0.0) -> tuple[float, float, bool]:
    """Full width at half maximum of the global peak of sampled ``y(x)``.

    Crossings are linearly interpolated. Returns ``(width, x_peak, truncated)``;
    a peak running into the sampled range is measured one-sided and doubled.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = baseline + (y[i] - baseline) / 2

    def crossing(step):
        j = i
        while 0 <= j + step < len(y) and y[j + step] > half:
            j += step
        k = j + step
        if not 0 <= k < len(y):
            return None
        return x[j] + (half - y[j]) * (x[k] - x[j]) / (y[k] - y[j])

    left, right = crossing(-1), crossing(+1)
    if left is None and right is None:
        return float(x[-1] - x[0]), float(x[i]), True
    if left is None:
        return 2 * float(right - x[i]), float(x[i]), True
    if right is None:
        return 2 * float(x[i] - left), float(x[i]), True
    return float(right - left), float(x[i]), False


def fwhm_of_max_peak(model: PatternModel, u_lo: float, u_hi: float, pair: str = "innermost",
                     oversample: int = 50, baseline: float = 0.0) -> FwhmResult:
    """Width of the highest interference peak of the normalized pattern within ``[u_lo, u_hi]``.

    The width is reported in tip voltage, in change of the reference ion-pair
    distance, in the corresponding scattering phase, and in that distance
    change relative to the pair distance at the peak.
    """
    n = model.n_ions
    if n < 2:
        raise ValidationError("a peak width needs at least two ions")
    func = model.normalized_from_lengths
    grid = dense_length_grid(model, u_lo, u_hi, oversample)
    values = func(grid)
    ell_peak, peak = pattern_max(func, grid)
    half = baseline + (peak - baseline) / 2

    i = int(np.argmin(np.abs(grid - ell_peak)))
    truncated = False
    edges = []
    for step in (-1, +1):
        j = i
        while 0 <= j + step < len(grid) and values[j + step] > half:
            j += step
        k = j + step
        if 0 <= k < len(grid):
            a, b = sorted((grid[j], grid[k]))
            try:
                edges.append(optimize.brentq(lambda e: func(np.array([e]))[0] - half, a, b, xtol=1e-16))
            except ValueError:
                edges.append(grid[j] + (half - values[j]) * (grid[k] - grid[j]) / (values[k] - values[j]))
        else:
            truncated = True
            edges.append(None)
    if edges[0] is None and edges[1] is None:
        raise ValidationError("peak spans the whole scanned range")
    if edges[0] is None:
        edges[0] = 2 * ell_peak - edges[1]
    if edges[1] is None:
        edges[1] = 2 * ell_peak - edges[0]

    u = solve_positions(n)
    gap = pair_spacing(u, pair)
    width_m = abs(edges[1] - edges[0]) * gap
    volts = voltages_for_lengths(model.trap, n, np.array(edges))
    return FwhmResult(
        u_peak=float(voltages_for_lengths(model.trap, n, ell_peak)),
        peak=float(peak),
        width_v=float(abs(volts[0] - volts[1])),
        width_m=float(width_m),
        width_rad=float(width_m * phase_per_meter(model.optics)),
        width_normalized=float(width_m / (ell_peak * gap)),
        truncated=truncated,
    )


def peak_intensity_scaling(trap: TrapConfig, optics: OpticsConfig, n_list, u_lo: float = 5.0,
                           u_hi: float = 900.0, profile_kind: str = "uniform",
                           oversample: int = 50, workers: int | None = None) -> list[dict]:
    """Highest normalized intensity reachable in ``[u_lo, u_hi]`` for each ion number.

    Each row also carries the fully incoherent (``N``) and coherent
    equidistant (``N^2``) bounds.
    """
    from .interference import make_profile

    def one(n):
        model = PatternModel(trap, n, optics, make_profile(profile_kind, n))
        grid = dense_length_grid(model, u_lo, u_hi, oversample)
        ell, peak = pattern_max(lambda e: model.normalized_from_lengths(e, workers=1), grid)
        return {"n_ions": n, "max_intensity": peak, "incoherent": float(n), "coherent": float(n * n),
                "u_peak_V": float(voltages_for_lengths(trap, n, ell))}

    n_list = [int(n) for n in n_list]
    workers = _default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, n_list))
    return [one(n) for n in n_list]


def jittered_equidistant_mc(cfg: MonteCarloConfig, n: int, optics: OpticsConfig,
                            trap: TrapConfig, u_lo: float = 5.0, u_hi: float = 900.0,
                            oversample: int = 50, workers: int | None = None) -> MonteCarloResult:
    """Maximum intensity of equidistant emitters with fixed Gaussian position errors.

    The spacing is scanned over the range the harmonic chain of the same
    length sweeps between ``u_hi`` and ``u_lo`` (or, with ``cfg.spacing``, from
    that spacing upward by the same ratio). Each realization draws its offsets
    from its own Philox stream spawned from ``cfg.seed``.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    k = phase_per_meter(optics)
    ell_hi, ell_lo = chain_lengths(trap, n, [u_lo, u_hi])
    if n == 1:
        ones = np.ones(cfg.n_realizations)
        return MonteCarloResult(1, 1.0, 0.0, ones, ones)
    u = solve_positions(n)
    s_lo = cfg.spacing if cfg.spacing is not None else ell_lo * (u[-1] - u[0]) / (n - 1)
    s_hi = s_lo * ell_hi / ell_lo
    j = np.arange(n) - (n - 1) / 2
    if n % 2 == 0:
        # half-integer offsets: shift the origin so every phase step is a multiple of 2 pi per period
        j = j + 0.5
    # the pattern repeats when the spacing grows by one fringe period, so one period suffices
    s_hi = min(s_hi, s_lo + optics.fringe_period)
    phase_span = k * (n - 1) * (s_hi - s_lo)
    points = max(200, int(math.ceil(oversample * phase_span / (NSLIT_FWHM / n))) + 1)
    grid = np.linspace(s_lo, s_hi, points)

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_realizations)

    def realization(child):
        g = np.random.Generator(np.random.Philox(child))
        offsets = g.normal(0.0, cfg.sigma_p, n) if cfg.sigma_p > 0 else np.zeros(n)

        def intensity(s):
            z = np.asarray(s)[:, None] * j[None, :] + offsets[None, :]
            f = np.exp(1j * k * z).sum(axis=1)
            return f.real**2 + f.imag**2

        values = intensity(grid)
        _, peak = pattern_max(intensity, grid)
        return peak, math.fsum(values) / len(values)

    workers = _default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(realization, children))
    else:
        runs = [realization(c) for c in children]
    maxima = np.array([r[0] for r in runs])
    scan_means = np.array([r[1] for r in runs])
    mean = math.fsum(maxima) / len(maxima)
    sd = math.sqrt(math.fsum((maxima - mean) ** 2) / (len(maxima) - 1)) if len(maxima) > 1 else 0.0
    return MonteCarloResult(n, mean, sd, maxima, scan_means)
