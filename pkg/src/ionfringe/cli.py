"""Command line entry point: ``ionfringe <subcommand>``.

Exit status: 0 success, 2 input or validation error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, io
from .chain import chain_geometry
from .config import RunConfig, load_config
from .errors import ConvergenceError, IonFringeError, ValidationError
from .fitting import FitParams, fit_full, visibility_from_fit
from .interference import PatternModel, make_profile
from .synthetic import SCAN_SETUPS, default_free, experiment_like_scan

log = logging.getLogger("ionfringe")

PROFILE_RE = re.compile(r"^(uniform|gauss-edge|gauss-edge-inverted|incoherent-subset=([\d,]+))$")


def parse_profile(text: str, n: int):
    m = PROFILE_RE.match(text)
    if not m:
        raise ValidationError(
            f"bad --profile {text!r}: use uniform, incoherent-subset=1,20, gauss-edge or gauss-edge-inverted")
    if m.group(2):
        return make_profile("subset_incoherent", n, [int(i) for i in m.group(2).split(",") if i])
    kind = {"uniform": "uniform", "gauss-edge": "gaussian_edge",
            "gauss-edge-inverted": "gaussian_edge_inverted"}[m.group(1)]
    return make_profile(kind, n)


def parse_sigma_p(text: str, wavelength: float) -> float:
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*(lambda)?\s*", text)
    if not m:
        raise ValidationError(f"bad --sigma-p {text!r}: use e.g. 0.5lambda, 2lambda or meters")
    try:
        value = float(m.group(1))
    except ValueError:
        raise ValidationError(f"bad --sigma-p {text!r}")
    return value * wavelength if m.group(2) else value


def parse_ions(text: str) -> list[int]:
    """``"2-10"`` or ``"2,3,4,10"`` (ranges inclusive)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ValidationError(f"bad ion list {text!r}")
    if not out or min(out) < 1:
        raise ValidationError(f"bad ion list {text!r}")
    return out


def parse_free(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _model(cfg: RunConfig, n: int, args, sigma_um=None) -> PatternModel:
    optics = cfg.optics
    if getattr(args, "theta_deg", None) is not None:
        optics = replace(optics, theta=math.radians(args.theta_deg))
    if sigma_um is not None:
        optics = replace(optics, beam_sigma_z=sigma_um * 1e-6)
    profile = parse_profile(getattr(args, "profile", "uniform"), n)
    return PatternModel(cfg.trap, n, optics, profile, cfg.dephasing)


class Output:
    """Routes named CSV/figure outputs to ``--out`` or, for a single CSV, to stdout."""

    def __init__(self, out: str | None):
        self.dir = Path(out) if out else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name, records, columns, comments=()):
        io.emit_csv(records, self.dir / name if self.dir else None, columns, comments)

    def figure(self, name):
        if self.dir is None:
            raise ValidationError("figures need --out")
        return self.dir / name


# -- subcommands ---------------------------------------------------------------

def cmd_positions(cfg, args, out):
    chain = chain_geometry(cfg.trap, args.ions, args.u_tip)
    rows = [{"index": i + 1, "u_dimensionless": u, "z_m": z}
            for i, (u, z) in enumerate(zip(chain.u_positions, chain.z_positions))]
    out.csv("positions.csv", rows, ["index", "u_dimensionless", "z_m"])


def _voltage_grid(model, u_lo, u_hi, points, oversample):
    if points:
        return np.linspace(u_lo, u_hi, points)
    ell = analysis.dense_length_grid(model, u_lo, u_hi, oversample)
    return np.clip(analysis.voltages_for_lengths(model.trap, model.n_ions, ell[::-1]), u_lo, u_hi)


def cmd_simulate(cfg, args, out):
    model = _model(cfg, args.ions, args, args.sigma_z_um)
    u_lo = cfg.analysis.u_min if args.u_min is None else args.u_min
    u_hi = cfg.analysis.u_max if args.u_max is None else args.u_max
    grid = _voltage_grid(model, u_lo, u_hi, args.points, cfg.analysis.oversample)
    params = FitParams(i_incoh=args.i_incoh, kappa=args.kappa, theta=model.optics.theta,
                       sigma_z=model.optics.beam_sigma_z, delta_u=args.delta_u)
    intensity = model.observed(grid, params)
    out.csv("simulate.csv", [{"u_tip_V": u, "intensity": i} for u, i in zip(grid, intensity)],
            ["u_tip_V", "intensity"])
    if args.plot:
        from .plotting import plot_pattern

        plot_pattern(grid, {f"N={args.ions}": intensity}, out.figure("simulate.png"))


def _fit_scan(cfg, scan, args, n):
    free = parse_free(args.free) if args.free is not None else default_free(n)
    sigma_um = args.sigma_z_um
    if "sigma_z" in free and sigma_um is None and math.isinf(cfg.optics.beam_sigma_z):
        sigma_um = 300.0
    model = _model(cfg, n, args, sigma_um)
    result = fit_full(scan, model, free, bounds=cfg.fit.bounds, weights=args.weights or cfg.fit.weights,
                      n_starts=cfg.fit.starts, seed=args.seed, bootstrap=args.bootstrap)
    if result.pinned:
        log.warning("parameters pinned at a bound: %s", ", ".join(result.pinned))
    return model, result


def cmd_fit(cfg, args, out):
    scan = io.load_scan(args.data)
    n = args.ions or scan.n_ions
    if args.ions:
        scan = replace(scan, n_ions=args.ions)
    model, result = _fit_scan(cfg, scan, args, n)
    p, e = result.params, result.param_stderr
    u_range = (float(scan.u_tip.min()), float(scan.u_tip.max()))
    v_raw = visibility_from_fit(result, model, u_range)
    try:
        v_bg = visibility_from_fit(result, model, u_range, background=scan.background_rate)
    except ValidationError:
        v_bg = float("nan")
    rows = [
        {"parameter": "i_incoh_cps", "value": p.i_incoh, "stderr": e.get("i_incoh")},
        {"parameter": "kappa_cps", "value": p.kappa, "stderr": e.get("kappa")},
        {"parameter": "theta_deg", "value": math.degrees(p.theta),
         "stderr": math.degrees(e["theta"]) if "theta" in e else None},
        {"parameter": "sigma_z_m", "value": p.sigma_z, "stderr": e.get("sigma_z")},
        {"parameter": "delta_u_V", "value": p.delta_u, "stderr": e.get("delta_u")},
        {"parameter": "chi2", "value": result.chi2, "stderr": None},
        {"parameter": "dof", "value": result.dof, "stderr": None},
        {"parameter": "visibility_raw", "value": v_raw, "stderr": None},
        {"parameter": "visibility_background_subtracted", "value": v_bg, "stderr": None},
    ]
    out.csv("fit_result.csv", rows, ["parameter", "value", "stderr"])
    if out.dir is not None:
        model_rate = model.observed(scan.u_tip, p)
        out.csv("fit_residuals.csv",
                [{"u_tip_V": u, "rate_cps": r, "model_cps": m, "residual_cps": r - m, "stderr_cps": s}
                 for u, r, m, s in zip(scan.u_tip, scan.rate, model_rate, scan.stderr)],
                ["u_tip_V", "rate_cps", "model_cps", "residual_cps", "stderr_cps"])
    if args.plot:
        from .plotting import plot_pattern

        dense = _voltage_grid(model, *u_range, None, cfg.analysis.oversample)
        plot_pattern(dense, {"fit": model.observed(dense, p)}, out.figure("fit.png"), scan=scan,
                     ylabel="count rate (1/s)")


def _visibility_rows(cfg, scans, args):
    rows = []
    for scan in scans:
        model, result = _fit_scan(cfg, scan, args, scan.n_ions)
        u_range = (float(scan.u_tip.min()), float(scan.u_tip.max()))
        rows.append({
            "n_ions": scan.n_ions,
            "v_extremal": analysis.visibility_extremal(scan),
            "v_model": visibility_from_fit(result, model, u_range, background=scan.background_rate),
        })
    return rows


def cmd_analyze(cfg, args, out):
    a = cfg.analysis
    if args.mode == "visibility":
        if not args.data:
            raise ValidationError("analyze --mode visibility needs --data scan.csv [...]")
        rows = _visibility_rows(cfg, [io.load_scan(p) for p in args.data], args)
        out.csv("visibility.csv", rows, ["n_ions", "v_extremal", "v_model"])
        if args.plot:
            from .plotting import plot_visibility

            plot_visibility([r["n_ions"] for r in rows], [r["v_extremal"] for r in rows],
                            [r["v_model"] for r in rows], out.figure("visibility.png"))
    elif args.mode == "fwhm":
        ions = parse_ions(args.ions or "2-10")
        rows = []
        for n in ions:
            r = analysis.fwhm_of_max_peak(_model(cfg, n, args), a.u_min, a.u_max, a.pair, a.oversample)
            rows.append({"n_ions": n, "u_peak_V": r.u_peak, "peak_intensity": r.peak, "width_V": r.width_v,
                         "width_m": r.width_m, "width_rad": r.width_rad,
                         "width_normalized": r.width_normalized, "truncated": r.truncated})
        out.csv("fwhm.csv", rows, list(rows[0]))
        if args.plot:
            from .plotting import plot_series

            plot_series(ions, {"harmonic chain": [r["width_m"] * 1e6 for r in rows]},
                        out.figure("fwhm.png"), "ion number", "FWHM (um of pair distance)")
    else:
        ions = parse_ions(args.ions or "2-20")
        kinds = {"uniform": "uniform", "gauss-edge": "gaussian_edge",
                 "gauss-edge-inverted": "gaussian_edge_inverted"}
        if args.profile not in kinds:
            raise ValidationError("scaling supports the uniform and gauss-edge profiles only")
        profile = kinds[args.profile]
        rows = analysis.peak_intensity_scaling(cfg.trap, cfg.optics, ions, a.u_min, a.u_max,
                                               profile, a.oversample)
        rows = [{"n_ions": r["n_ions"], "max_intensity": r["max_intensity"], "incoherent": r["incoherent"],
                 "coherent_equidistant": r["coherent"], "u_peak_V": r["u_peak_V"]} for r in rows]
        out.csv("scaling.csv", rows, list(rows[0]))
        if args.plot:
            from .plotting import plot_series

            plot_series(ions, {"harmonic": [r["max_intensity"] for r in rows],
                               "incoherent": ions, "coherent equidistant": [n * n for n in ions]},
                        out.figure("scaling.png"), "ion number", "max intensity", sqrt_y=True,
                        styles={"incoherent": "r--", "coherent equidistant": "k--"})


def _montecarlo_rows(cfg, ions, sigma_p, realizations, seed):
    a = cfg.analysis
    rows = []
    for n in ions:
        mc = analysis.jittered_equidistant_mc(
            analysis.MonteCarloConfig(sigma_p, realizations, seed), n, cfg.optics, cfg.trap,
            a.u_min, a.u_max, a.oversample)
        rows.append({"n_ions": n, "sigma_p_m": sigma_p, "mean_max_intensity": mc.mean,
                     "sd_max_intensity": mc.sd, "mean_intensity": float(np.mean(mc.scan_means))})
    return rows


def cmd_montecarlo(cfg, args, out):
    sigma_p = parse_sigma_p(args.sigma_p, cfg.optics.wavelength)
    ions = parse_ions(args.ions or "2-20")
    realizations = args.realizations or cfg.analysis.realizations
    rows = _montecarlo_rows(cfg, ions, sigma_p, realizations, args.seed)
    out.csv("montecarlo.csv", rows, list(rows[0]))
    if args.plot:
        from .plotting import plot_series

        plot_series(ions, {"jittered equidistant": [r["mean_max_intensity"] for r in rows]},
                    out.figure("montecarlo.png"), "ion number", "mean max intensity", sqrt_y=True)


def cmd_repro(cfg, args, out):
    """Regenerate every figure-data CSV and its figure from ``cfg``."""
    from . import plotting

    if out.dir is None:
        out = Output("repro_out")
    a = cfg.analysis
    scan_dir = out.dir / "scans"
    scan_dir.mkdir(exist_ok=True)
    args.profile, args.theta_deg, args.sigma_z_um, args.weights, args.bootstrap = "uniform", None, None, None, 0

    scans = {}
    for n in SCAN_SETUPS:
        scan, _ = experiment_like_scan(cfg, n, args.seed)
        io.write_scan(scan, scan_dir / f"scan_{n:02d}.csv")
        scans[n] = scan

    vis_rows = []
    for n, scan in scans.items():
        args.free = None
        model, result = _fit_scan(cfg, scan, args, n)
        u_range = (float(scan.u_tip.min()), float(scan.u_tip.max()))
        dense = _voltage_grid(model, *u_range, None, a.oversample)
        fitted = model.observed(dense, result.params)
        out.csv(f"scan_fit_{n:02d}.csv", [{"u_tip_V": u, "rate_cps": r} for u, r in zip(dense, fitted)],
                ["u_tip_V", "rate_cps"])
        plotting.plot_pattern(dense, {"fit": fitted}, out.figure(f"scan_fit_{n:02d}.png"), scan=scan,
                              title=f"{n} ions", ylabel="count rate (1/s)")
        vis_rows.append({"n_ions": n, "v_extremal": analysis.visibility_extremal(scan),
                         "v_model": visibility_from_fit(result, model, u_range, scan.background_rate)})
    out.csv("visibility_vs_ions.csv", vis_rows, ["n_ions", "v_extremal", "v_model"])
    plotting.plot_visibility([r["n_ions"] for r in vis_rows], [r["v_extremal"] for r in vis_rows],
                             [r["v_model"] for r in vis_rows], out.figure("visibility_vs_ions.png"))

    # coherence-profile comparisons on the 20-ion scan: best linear rescaling of each profile
    scan = scans[20]
    dense = np.linspace(scan.u_tip.min(), scan.u_tip.max(), 2000)
    for tag, profiles in (("profile_subsets", {"uniform": "uniform", "outer_incoherent": "incoherent-subset=1,20",
                                     "inner_incoherent": "incoherent-subset=10,11"}),
                          ("profile_gaussian", {"uniform": "uniform", "gauss_edge": "gauss-edge",
                                     "gauss_edge_inverted": "gauss-edge-inverted"})):
        curves, summary = {}, []
        for label, spec in profiles.items():
            args.profile, args.free = spec, ""
            model, result = _fit_scan(cfg, scan, args, 20)
            curves[label] = model.observed(dense, result.params)
            summary.append({"profile": label, "chi2": result.chi2, "dof": result.dof,
                            "i_incoh_cps": result.params.i_incoh, "kappa_cps": result.params.kappa})
        out.csv(f"{tag}_patterns.csv",
                [{"u_tip_V": u, **{f"{k}_cps": curves[k][i] for k in curves}} for i, u in enumerate(dense)],
                ["u_tip_V", *[f"{k}_cps" for k in curves]])
        out.csv(f"{tag}_chi2.csv", summary, ["profile", "chi2", "dof", "i_incoh_cps", "kappa_cps"])
        plotting.plot_pattern(dense, curves, out.figure(f"{tag}.png"), scan=scan,
                              ylabel="count rate (1/s)")
    args.profile = "uniform"

    fwhm_ions = list(range(2, 11))
    rows = []
    for n in fwhm_ions:
        r = analysis.fwhm_of_max_peak(_model(cfg, n, args), a.u_min, a.u_max, a.pair, a.oversample)
        rows.append({"n_ions": n, "u_peak_V": r.u_peak, "width_V": r.width_v, "width_m": r.width_m,
                     "width_rad": r.width_rad, "width_normalized": r.width_normalized,
                     "truncated": r.truncated})
    out.csv("fwhm_vs_ions.csv", rows, list(rows[0]))
    plotting.plot_series(fwhm_ions, {"harmonic chain": [r["width_m"] * 1e6 for r in rows]},
                         out.figure("fwhm_vs_ions.png"), "ion number", "FWHM (um of pair distance)")

    ions = list(range(2, 21))
    scaling = analysis.peak_intensity_scaling(cfg.trap, cfg.optics, ions, a.u_min, a.u_max,
                                              oversample=a.oversample)
    mc = {label: _montecarlo_rows(cfg, ions, f * cfg.optics.wavelength, a.realizations, args.seed)
          for label, f in (("half_lambda", 0.5), ("two_lambda", 2.0))}
    rows = []
    for i, n in enumerate(ions):
        rows.append({"n_ions": n, "harmonic_max": scaling[i]["max_intensity"], "incoherent": float(n),
                     "coherent_equidistant": float(n * n),
                     "jitter_half_lambda_mean": mc["half_lambda"][i]["mean_max_intensity"],
                     "jitter_half_lambda_sd": mc["half_lambda"][i]["sd_max_intensity"],
                     "jitter_two_lambda_mean": mc["two_lambda"][i]["mean_max_intensity"],
                     "jitter_two_lambda_sd": mc["two_lambda"][i]["sd_max_intensity"]})
    out.csv("peak_scaling.csv", rows, list(rows[0]))
    plotting.plot_series(
        ions, {"harmonic": [r["harmonic_max"] for r in rows], "incoherent": ions,
               "coherent equidistant": [n * n for n in ions],
               "jitter lambda/2": [r["jitter_half_lambda_mean"] for r in rows],
               "jitter 2 lambda": [r["jitter_two_lambda_mean"] for r in rows]},
        out.figure("peak_scaling.png"), "ion number", "max intensity per unit scatterer", sqrt_y=True,
        styles={"incoherent": "r--", "coherent equidistant": "k--", "jitter lambda/2": "^",
                "jitter 2 lambda": "v"})


# -- parser --------------------------------------------------------------------

def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default,
                        help="TOML config path, or 'paper_defaults' for the shipped experiment defaults")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0)
    parser.add_argument("--out", default=default, help="output directory (default: stdout for one CSV)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionfringe", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_options(p, suppress=True)
        p.set_defaults(func=func)
        return p

    def pattern_options(p):
        p.add_argument("--profile", default="uniform",
                       help="uniform | incoherent-subset=1,20 | gauss-edge | gauss-edge-inverted")
        p.add_argument("--theta-deg", type=float, default=None)
        p.add_argument("--sigma-z-um", type=float, default=None, help="excitation beam width")

    p = add("positions", cmd_positions, "equilibrium ion positions")
    p.add_argument("--ions", type=int, required=True)
    p.add_argument("--u-tip", type=float, required=True, help="tip voltage (V)")

    p = add("simulate", cmd_simulate, "interference pattern over tip voltage")
    p.add_argument("--ions", type=int, required=True)
    pattern_options(p)
    p.add_argument("--u-min", type=float, default=None)
    p.add_argument("--u-max", type=float, default=None)
    p.add_argument("--points", type=int, default=None, help="uniform grid (default: fringe-resolving)")
    p.add_argument("--i-incoh", type=float, default=0.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--delta-u", type=float, default=0.0)
    p.add_argument("--plot", action="store_true")

    def fit_options(p):
        pattern_options(p)
        p.add_argument("--free", default=None, help="comma list from theta,sigma_z,delta_u")
        p.add_argument("--weights", choices=("inverse-variance", "uniform"), default=None)
        p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for errors")
        p.add_argument("--plot", action="store_true")

    p = add("fit", cmd_fit, "fit the model to a measured scan")
    p.add_argument("--data", required=True)
    p.add_argument("--ions", type=int, default=None)
    fit_options(p)

    p = add("analyze", cmd_analyze, "visibility, peak width or peak intensity analyses")
    p.add_argument("--mode", choices=("visibility", "fwhm", "scaling"), required=True)
    p.add_argument("--data", nargs="+", default=None)
    p.add_argument("--ions", default=None, help="ion list, e.g. 2-10 or 2,3,10")
    fit_options(p)

    p = add("montecarlo", cmd_montecarlo, "jittered equidistant emitters")
    p.add_argument("--sigma-p", required=True, help="0.5lambda, 2lambda or meters")
    p.add_argument("--realizations", type=int, default=None)
    p.add_argument("--ions", default=None)
    p.add_argument("--plot", action="store_true")

    add("repro", cmd_repro, "regenerate all figure data and figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(cfg, args, Output(args.out))
    except ConvergenceError as exc:
        log.error("%s", exc)
        return 3
    except IonFringeError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
