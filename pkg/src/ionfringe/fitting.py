"""Fitting the interference model to measured tip-voltage scans.

The model is linear in the offset ``i_incoh`` and scale ``kappa``; those are
eliminated in closed form for every trial of the nonlinear parameters
(angle ``theta``, beam width ``sigma_z``, voltage offset ``delta_u``), which
are searched with a multi-start Nelder-Mead simplex.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .errors import ConvergenceError, ValidationError
from .interference import FitParams, PatternModel, _default_workers

NONLINEAR = ("theta", "sigma_z", "delta_u")
WEIGHTS = ("inverse-variance", "uniform")


@dataclass(frozen=True)
class MeasuredScan:
    u_tip: np.ndarray
    rate: np.ndarray
    stderr: np.ndarray
    n_ions: int = 1
    integration_s: float = 0.0
    background_rate: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u_tip, dtype=float)
        r = np.asarray(self.rate, dtype=float)
        s = np.asarray(self.stderr, dtype=float)
        if not (u.shape == r.shape == s.shape) or u.ndim != 1:
            raise ValidationError("scan columns must be equal-length 1-D arrays")
        if np.any(~np.isfinite(u)) or np.any(~np.isfinite(r)) or np.any(~np.isfinite(s)):
            raise ValidationError("scan contains non-finite values")
        if np.any(r < 0):
            raise ValidationError("count rates must be non-negative")
        if np.any(s <= 0):
            raise ValidationError("standard errors must be positive")
        if self.n_ions < 1:
            raise ValidationError("n_ions must be at least 1")
        order = np.argsort(u, kind="stable")
        object.__setattr__(self, "u_tip", u[order])
        object.__setattr__(self, "rate", r[order])
        object.__setattr__(self, "stderr", s[order])

    def __len__(self):
        return len(self.u_tip)

    def weights(self, kind: str = "inverse-variance") -> np.ndarray:
        if kind == "inverse-variance":
            return 1.0 / self.stderr**2
        if kind == "uniform":
            return np.ones_like(self.rate)
        raise ValidationError(f"weights must be one of {WEIGHTS}")


class LinearFit(NamedTuple):
    i_incoh: float
    kappa: float
    chi2: float
    residuals: np.ndarray


def _solve_linear(y, w, shape):
    sw, sx, sy = w.sum(), (w * shape).sum(), (w * y).sum()
    sxx, sxy = (w * shape * shape).sum(), (w * shape * y).sum()
    det = sw * sxx - sx * sx
    if not det > 1e-12 * sw * sxx:
        raise ValidationError("pattern shape is constant on the scan grid: kappa is unidentifiable")
    kappa = (sw * sxy - sx * sy) / det
    offset = (sy - kappa * sx) / sw
    if offset >= 0 and kappa >= 0:
        return offset, kappa
    # non-negativity: best of the two edge solutions
    candidates = [(0.0, max(sxy / sxx, 0.0)), (max(sy / sw, 0.0), 0.0)]
    return min(candidates, key=lambda p: float(np.sum(w * (y - p[0] - p[1] * shape) ** 2)))


def fit_linear(scan: MeasuredScan, shape, weights: str = "inverse-variance") -> LinearFit:
    """Weighted least squares for ``rate = i_incoh + kappa * shape`` with both terms non-negative."""
    shape = np.asarray(shape, dtype=float)
    if shape.shape != scan.rate.shape:
        raise ValidationError("shape and scan must share the voltage grid")
    w = scan.weights(weights)
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValidationError("degenerate fit weights")
    offset, kappa = _solve_linear(scan.rate, w, shape)
    resid = scan.rate - offset - kappa * shape
    return LinearFit(float(offset), float(kappa), float(np.sum(w * resid**2)), resid)


@dataclass
class FitResult:
    params: FitParams
    param_stderr: dict
    chi2: float
    dof: int
    residuals: np.ndarray
    free: tuple[str, ...] = ()
    pinned: tuple[str, ...] = ()
    converged: bool = True
    starts: int = 0

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof


@dataclass(frozen=True)
class FitBounds:
    theta_window: float = math.radians(2.0)
    sigma_z: tuple[float, float] = (10e-6, 10e-3)
    delta_u: tuple[float, float] = (-0.5, 0.5)


@dataclass
class _Problem:
    """Maps the free nonlinear parameters to a scaled vector (degrees, log10 m, volts)."""

    scan: MeasuredScan
    model: PatternModel
    free: tuple[str, ...]
    base: FitParams
    bounds: FitBounds
    weights: str
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self):
        lo, hi = [], []
        for name in self.free:
            if name == "theta":
                centre = math.degrees(self.base.theta)
                width = math.degrees(self.bounds.theta_window)
                lo.append(centre - width)
                hi.append(centre + width)
            elif name == "sigma_z":
                lo.append(math.log10(self.bounds.sigma_z[0]))
                hi.append(math.log10(self.bounds.sigma_z[1]))
            else:
                lo.append(self.bounds.delta_u[0])
                hi.append(self.bounds.delta_u[1])
        self.lower, self.upper = np.array(lo), np.array(hi)

    def params_from(self, x) -> FitParams:
        changes = {}
        for name, value in zip(self.free, x):
            if name == "theta":
                changes["theta"] = math.radians(value)
            elif name == "sigma_z":
                changes["sigma_z"] = 10.0**value
            else:
                changes["delta_u"] = float(value)
        return replace(self.base, **changes)

    def scaled(self, params: FitParams) -> np.ndarray:
        out = []
        for name in self.free:
            if name == "theta":
                out.append(math.degrees(params.theta))
            elif name == "sigma_z":
                out.append(math.log10(params.sigma_z))
            else:
                out.append(params.delta_u)
        return np.array(out)

    def shape(self, params: FitParams) -> np.ndarray:
        return self.model.normalized_intensity(
            self.scan.u_tip, params.theta, params.sigma_z, params.delta_u, workers=1)

    def linear(self, x) -> LinearFit:
        x = np.clip(x, self.lower, self.upper)
        return fit_linear(self.scan, self.shape(self.params_from(x)), self.weights)

    def chi2(self, x) -> float:
        return self.linear(x).chi2

    def weighted_residuals(self, x) -> np.ndarray:
        lin = self.linear(x)
        return np.sqrt(self.scan.weights(self.weights)) * lin.residuals

    def full_params(self, x) -> FitParams:
        lin = self.linear(x)
        return replace(self.params_from(np.clip(x, self.lower, self.upper)),
                       i_incoh=lin.i_incoh, kappa=lin.kappa)


def _coarse_starts(problem: _Problem, n_starts: int, rng: np.random.Generator) -> list[np.ndarray]:
    axes = []
    for name, lo, hi in zip(problem.free, problem.lower, problem.upper):
        if name == "theta":
            k = 33  # 0.125 deg pitch over +-2 deg: finer than one fringe of alias
        elif name == "sigma_z":
            k = 9
        else:
            k = 11
        axes.append(np.linspace(lo, hi, k))
    grid = np.array(list(itertools.product(*axes)))
    chi = np.array([problem.chi2(x) for x in grid])
    order = np.argsort(chi, kind="stable")
    starts = [grid[i] for i in order[:n_starts]]
    pitch = (problem.upper - problem.lower) / np.array([len(a) - 1 for a in axes])
    # per-start jitter within a quarter grid cell, drawn from independent child streams
    children = rng.bit_generator.seed_seq.spawn(len(starts))
    out = []
    for x, child in zip(starts, children):
        g = np.random.Generator(np.random.Philox(child))
        out.append(np.clip(x + g.uniform(-0.25, 0.25, len(x)) * pitch, problem.lower, problem.upper))
    return out


def _local_search(problem: _Problem, x0: np.ndarray):
    scale = problem.upper - problem.lower
    lo, hi = problem.lower, problem.upper

    def obj(y):
        return problem.chi2(lo + y * scale)

    y0 = (x0 - lo) / scale
    res = optimize.minimize(obj, y0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * len(y0),
                            options={"xatol": 1e-10, "fatol": 1e-13, "maxfev": 4000,
                                     "adaptive": len(y0) > 2})
    y = np.clip(res.x, 0.0, 1.0)
    # Gauss-Newton polish of the projected residuals; the simplex stalls near 1e-8
    try:
        pol = optimize.least_squares(lambda v: problem.weighted_residuals(lo + v * scale), y,
                                     bounds=(0.0, 1.0), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                     max_nfev=200, diff_step=1e-9)
        if problem.chi2(lo + pol.x * scale) <= problem.chi2(lo + y * scale):
            y = pol.x
    except ValueError:
        pass
    x = lo + y * scale
    return x, problem.chi2(x), bool(res.success or res.status in (1, 2))


def _stderr(problem: _Problem, x: np.ndarray, params: FitParams) -> dict:
    """Standard errors from the Gauss-Newton curvature ``J^T J`` of chi2 at the optimum."""
    names = ["i_incoh", "kappa", *problem.free]
    w = np.sqrt(problem.scan.weights(problem.weights))

    def resid(p):
        # offset and scale may step below zero here, so they bypass FitParams validation
        return w * (problem.scan.rate - p[0] - p[1] * problem.shape(problem.params_from(p[2:])))

    p0 = np.concatenate([[params.i_incoh, params.kappa], x])
    steps = np.maximum(np.abs(p0), 1.0) * 1e-6
    jac = np.empty((len(problem.scan), len(p0)))
    for k in range(len(p0)):
        dp = np.zeros_like(p0)
        dp[k] = steps[k]
        jac[:, k] = (resid(p0 + dp) - resid(p0 - dp)) / (2 * steps[k])
    # resid = w*(y - model), so d resid / dp = -w * d model / dp; the sign cancels in J^T J
    cov = np.linalg.pinv(jac.T @ jac)
    if problem.weights == "uniform":
        dof = len(problem.scan) - len(p0)
        cov = cov * float(np.sum(resid(p0) ** 2)) / max(dof, 1)
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    out = {}
    for name, value, e in zip(names, p0, err):
        if name == "theta":
            out[name] = math.radians(e)
        elif name == "sigma_z":
            out[name] = math.log(10) * 10.0**value * e
        else:
            out[name] = float(e)
    return out


def fit_full(scan: MeasuredScan, model: PatternModel, free=(), initial: FitParams | None = None,
             bounds: FitBounds | None = None, weights: str = "inverse-variance", n_starts: int = 6,
             seed: int = 0, workers: int | None = None, bootstrap: int = 0) -> FitResult:
    """Fit ``(i_incoh, kappa)`` plus the chosen subset of ``theta``, ``sigma_z``, ``delta_u``.

    ``initial`` supplies fixed values for the parameters not in ``free`` and
    the centre of the angle window (defaults: the model's optics and
    ``delta_u = 0``). Raises ``ConvergenceError`` when no local search
    converges.
    """
    unknown = set(free) - set(NONLINEAR)
    if unknown:
        raise ValidationError(f"unknown free parameters {sorted(unknown)}")
    free = tuple(name for name in NONLINEAR if name in set(free))
    if model.n_ions != scan.n_ions:
        raise ValidationError(f"model has {model.n_ions} ions but the scan has {scan.n_ions}")
    bounds = bounds or FitBounds()
    base = initial or FitParams(theta=model.optics.theta, sigma_z=model.optics.beam_sigma_z)
    dof = len(scan) - 2 - len(free)
    if dof <= 0:
        raise ValidationError(f"{len(scan)} points cannot constrain {2 + len(free)} parameters")
    if "sigma_z" in free and math.isinf(base.sigma_z):
        base = replace(base, sigma_z=math.sqrt(bounds.sigma_z[0] * bounds.sigma_z[1]))

    problem = _Problem(scan, model, free, base, bounds, weights)
    if not free:
        lin = problem.linear(np.empty(0))
        params = replace(base, i_incoh=lin.i_incoh, kappa=lin.kappa)
        return FitResult(params, _stderr(problem, np.empty(0), params), lin.chi2, dof,
                         lin.residuals, free, (), True, 0)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    starts = _coarse_starts(problem, max(n_starts, 5), rng)
    workers = _default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda x0: _local_search(problem, x0), starts))
    else:
        runs = [_local_search(problem, x0) for x0 in starts]

    x_init = problem.scaled(base)

    def rank(run):
        x, chi, _ = run
        du = abs(x[free.index("delta_u")]) if "delta_u" in free else 0.0
        ds = abs(x[free.index("sigma_z")] - x_init[free.index("sigma_z")]) if "sigma_z" in free else 0.0
        return (float(f"{chi:.9e}"), du, ds)

    best_x, best_chi, _ = min(runs, key=rank)
    converged = any(ok for _, _, ok in runs) and np.isfinite(best_chi)
    if not converged:
        raise ConvergenceError(f"no local search converged; best chi2 {best_chi:.6g}")

    params = problem.full_params(best_x)
    span = problem.upper - problem.lower
    pinned = tuple(name for name, x, lo, hi, s in zip(free, best_x, problem.lower, problem.upper, span)
                   if min(x - lo, hi - x) < 1e-6 * s)
    lin = problem.linear(best_x)
    stderr = _stderr(problem, best_x, params)
    if bootstrap > 0:
        stderr = _bootstrap(problem, params, best_x, bootstrap, seed)
    return FitResult(params, stderr, lin.chi2, dof, lin.residuals, free, pinned, True, len(starts))


def _bootstrap(problem: _Problem, params: FitParams, x_best: np.ndarray, n: int, seed: int) -> dict:
    """Parametric bootstrap: refit Gaussian-resampled data from the best-fit model."""
    scan = problem.scan
    model_rate = params.i_incoh + params.kappa * problem.shape(params)
    children = np.random.SeedSequence(seed).spawn(n)
    samples = []
    for child in children:
        g = np.random.Generator(np.random.Philox(child))
        rate = np.clip(model_rate + g.normal(0.0, scan.stderr), 0.0, None)
        sub = replace(problem, scan=replace(scan, rate=rate))
        x, _, _ = _local_search(sub, x_best)
        p = sub.full_params(x)
        samples.append([p.i_incoh, p.kappa, *[getattr(p, name) for name in problem.free]])
    sd = np.std(np.array(samples), axis=0, ddof=1)
    return dict(zip(["i_incoh", "kappa", *problem.free], map(float, sd)))


def visibility(i_max: float, i_min: float) -> float:
    total = i_max + i_min
    if total <= 0:
        return 0.0
    return float((i_max - i_min) / total)


def subtract_background(v: float, total: float, background: float) -> float:
    """Visibility after removing a constant ``background`` from both extremes summing to ``total``."""
    if total - 2 * background <= 0:
        raise ValidationError("background exceeds the pattern level")
    return v * total / (total - 2 * background)


def visibility_from_fit(result: FitResult, model: PatternModel, u_range: tuple[float, float],
                        background: float = 0.0, oversample: int = 50) -> float:
    """Visibility of the fitted pattern over the scanned range, minus a constant background."""
    from .analysis import dense_length_grid, voltages_for_lengths

    p = result.params
    lo, hi = u_range[0] + p.delta_u, u_range[1] + p.delta_u
    ell = dense_length_grid(model, lo, hi, oversample, theta=p.theta)
    u = voltages_for_lengths(model.trap, model.n_ions, ell) - p.delta_u
    u = np.clip(u, u_range[0], u_range[1])
    pattern = model.observed(u, p) - background
    if np.any(pattern < 0):
        raise ValidationError("background exceeds the fitted pattern")
    return visibility(pattern.max(), pattern.min())
