"""Poisson-noise synthetic tip-voltage scans with count levels like the experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analysis import dense_length_grid
from .config import RunConfig
from .errors import ValidationError
from .fitting import MeasuredScan
from .interference import FitParams, PatternModel


@dataclass(frozen=True)
class ScanSetup:
    u_lo: float
    u_hi: float
    points: int
    visibility: float  # after background subtraction, over the scanned window
    signal_cps: float  # mean background-free count rate
    beam_sigma_um: float = math.inf


# ion number -> scan window and levels; 28+ ions see the finite excitation beam
SCAN_SETUPS = {
    2: ScanSetup(5.0, 40.0, 60, 0.40, 30.0),
    3: ScanSetup(5.0, 40.0, 60, 0.45, 45.0),
    4: ScanSetup(5.0, 30.0, 60, 0.48, 60.0),
    10: ScanSetup(15.0, 40.0, 100, 0.44, 150.0),
    20: ScanSetup(15.0, 40.0, 120, 0.40, 300.0),
    53: ScanSetup(5.3, 9.0, 120, 0.38, 600.0, beam_sigma_um=115.0),
}
INTEGRATION_S = 20.0


def poisson_scan(model: PatternModel, params: FitParams, u_grid, integration_s: float,
                 seed: int, background: float = 0.0) -> MeasuredScan:
    """Counts drawn as Poisson(rate * t); stderr is sqrt(counts) / t (at least one count)."""
    u_grid = np.asarray(u_grid, dtype=float)
    rate = background + model.observed(u_grid, params)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    counts = rng.poisson(rate * integration_s)
    return MeasuredScan(u_grid, counts / integration_s,
                        np.sqrt(np.maximum(counts, 1)) / integration_s,
                        n_ions=model.n_ions, integration_s=integration_s, background_rate=background)


def levels_for_visibility(model: PatternModel, setup: ScanSetup, theta: float, sigma_z: float):
    """Offset and scale giving the requested visibility and mean rate over the window."""
    ell = dense_length_grid(model, setup.u_lo, setup.u_hi, theta=theta)
    dense = model.normalized_from_lengths(ell, theta, sigma_z)
    grid = np.linspace(setup.u_lo, setup.u_hi, setup.points)
    mean_shape = model.normalized_intensity(grid, theta, sigma_z).mean()
    hi, lo = dense.max(), dense.min()
    extra = ((hi - lo) / setup.visibility - (hi + lo)) / 2
    if extra < 0:
        raise ValidationError(f"visibility {setup.visibility} exceeds the pattern's own contrast")
    kappa = setup.signal_cps / (mean_shape + extra)
    return kappa * extra, kappa


def experiment_like_scan(cfg: RunConfig, n_ions: int, seed: int = 0) -> tuple[MeasuredScan, FitParams]:
    """Synthetic scan for one of the ion numbers in ``SCAN_SETUPS`` and its ground truth."""
    if n_ions not in SCAN_SETUPS:
        raise ValidationError(f"no scan setup for {n_ions} ions; choose from {sorted(SCAN_SETUPS)}")
    setup = SCAN_SETUPS[n_ions]
    optics = replace(cfg.optics, beam_sigma_z=setup.beam_sigma_um * 1e-6)
    model = PatternModel(cfg.trap, n_ions, optics, dephasing=cfg.dephasing)
    theta = cfg.optics.theta
    offset, kappa = levels_for_visibility(model, setup, theta, optics.beam_sigma_z)
    truth = FitParams(i_incoh=offset, kappa=kappa, theta=theta, sigma_z=optics.beam_sigma_z)
    grid = np.linspace(setup.u_lo, setup.u_hi, setup.points)
    scan = poisson_scan(model, truth, grid, INTEGRATION_S, seed + n_ions,
                        background=cfg.analysis.background_rate)
    # the background is part of the fitted incoherent offset
    return scan, replace(truth, i_incoh=offset + cfg.analysis.background_rate)


def default_free(n_ions: int) -> tuple[str, ...]:
    """Nonlinear parameters fitted by default: the beam width only matters for long strings."""
    return ("sigma_z",) if n_ions >= 28 else ()
