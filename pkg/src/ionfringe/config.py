"""Run configuration from TOML. Units are part of every key name."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .chain import AMU, E_CHARGE, TrapConfig, calibrate_axial
from .errors import ValidationError
from .fitting import FitBounds, WEIGHTS
from .interference import DephasingConfig
from .optics import OpticsConfig

PAPER_DEFAULTS = "paper_defaults.toml"

_SCHEMA = {
    "trap": {
        "ion_mass_u": 40.0,
        "ion_charge_e": 1.0,
        "calibration_points_V_Hz": [[4.0, 60e3], [900.0, 1044e3]],
        "radial_freq_Hz": 1.66e6,
        "axial_freq_factor_by_n": {},
    },
    "optics": {
        "wavelength_nm": 397.0,
        "theta_deg": 45.19,
        "beam_sigma_um": math.inf,
        "mode_waist_um": 17.0,
        "rayleigh_mm": 2.3,
        "gaussian_convention": "efold",
        "detection_envelope": "flat",
    },
    "dephasing": {
        "saturation_visibility_factor": 1.0,
        "axial_variance_nm2": 0.0,
        "radial_variance_nm2": 0.0,
    },
    "analysis": {
        "u_min_V": 5.0,
        "u_max_V": 900.0,
        "oversample": 50,
        "seed": 0,
        "background_cps": 9.3,
        "realizations": 100,
        "pair": "innermost",
    },
    "fit": {
        "theta_window_deg": 2.0,
        "sigma_bounds_um": [10.0, 10000.0],
        "delta_u_bounds_V": [-0.5, 0.5],
        "starts": 6,
        "weights": "inverse-variance",
    },
}


@dataclass(frozen=True)
class AnalysisDefaults:
    u_min: float = 5.0
    u_max: float = 900.0
    oversample: int = 50
    seed: int = 0
    background_rate: float = 9.3
    realizations: int = 100
    pair: str = "innermost"


@dataclass(frozen=True)
class FitDefaults:
    bounds: FitBounds = field(default_factory=FitBounds)
    starts: int = 6
    weights: str = "inverse-variance"


@dataclass(frozen=True)
class RunConfig:
    trap: TrapConfig
    optics: OpticsConfig
    dephasing: DephasingConfig
    analysis: AnalysisDefaults
    fit: FitDefaults
    calibration_points: tuple = ()


def _number(section, key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"[{section}] {key} must be a number, got {value!r}")
    return float(value)


def _pair(section, key, value):
    if not (isinstance(value, list) and len(value) == 2):
        raise ValidationError(f"[{section}] {key} must be a two-element list")
    return tuple(_number(section, key, v) for v in value)


def _merge(raw: dict) -> dict:
    merged = {}
    for section, keys in raw.items():
        if section not in _SCHEMA:
            raise ValidationError(f"unknown config section [{section}]")
        if not isinstance(keys, dict):
            raise ValidationError(f"[{section}] must be a table")
        for key in keys:
            if key not in _SCHEMA[section]:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
    for section, defaults in _SCHEMA.items():
        merged[section] = {**defaults, **raw.get(section, {})}
    return merged


def build_config(raw: dict) -> RunConfig:
    cfg = _merge(raw)
    t, o, d, a, f = (cfg[s] for s in ("trap", "optics", "dephasing", "analysis", "fit"))

    points = t["calibration_points_V_Hz"]
    if not isinstance(points, list) or not all(isinstance(p, list) for p in points):
        raise ValidationError("[trap] calibration_points_V_Hz must be a list of [volts, hertz] pairs")
    points = [_pair("trap", "calibration_points_V_Hz", p) for p in points]
    calib_a, calib_u0 = calibrate_axial(points)
    factors = {}
    for n, factor in t["axial_freq_factor_by_n"].items():
        try:
            factors[int(n)] = _number("trap", f"axial_freq_factor_by_n.{n}", factor)
        except ValueError:
            raise ValidationError(f"[trap] axial_freq_factor_by_n key {n!r} is not an ion number")
    trap = TrapConfig(
        ion_mass=_number("trap", "ion_mass_u", t["ion_mass_u"]) * AMU,
        ion_charge=_number("trap", "ion_charge_e", t["ion_charge_e"]) * E_CHARGE,
        calib_a=calib_a, calib_u0=calib_u0,
        radial_freq=_number("trap", "radial_freq_Hz", t["radial_freq_Hz"]),
        axial_freq_factor=factors,
    )

    theta_deg = _number("optics", "theta_deg", o["theta_deg"])
    if not 0 < theta_deg < 180:
        raise ValidationError(f"[optics] theta_deg must lie in (0, 180), got {theta_deg}")
    try:
        optics = OpticsConfig(
            wavelength=_number("optics", "wavelength_nm", o["wavelength_nm"]) * 1e-9,
            theta=math.radians(theta_deg),
            beam_sigma_z=_number("optics", "beam_sigma_um", o["beam_sigma_um"]) * 1e-6,
            mode_waist=_number("optics", "mode_waist_um", o["mode_waist_um"]) * 1e-6,
            rayleigh_range=_number("optics", "rayleigh_mm", o["rayleigh_mm"]) * 1e-3,
            gaussian_convention=o["gaussian_convention"],
            detection_envelope=o["detection_envelope"],
        )
    except ValidationError as exc:
        raise ValidationError(f"[optics] {exc}") from exc

    variances = []
    for axis in ("axial", "radial"):
        var = _number("dephasing", f"{axis}_variance_nm2", d[f"{axis}_variance_nm2"]) * 1e-18
        if var:
            variances.append((axis, var))
    try:
        dephasing = DephasingConfig(
            _number("dephasing", "saturation_visibility_factor", d["saturation_visibility_factor"]),
            tuple(variances))
    except ValidationError as exc:
        raise ValidationError(f"[dephasing] {exc}") from exc

    analysis = AnalysisDefaults(
        u_min=_number("analysis", "u_min_V", a["u_min_V"]),
        u_max=_number("analysis", "u_max_V", a["u_max_V"]),
        oversample=int(a["oversample"]), seed=int(a["seed"]),
        background_rate=_number("analysis", "background_cps", a["background_cps"]),
        realizations=int(a["realizations"]), pair=str(a["pair"]),
    )
    if not analysis.u_min < analysis.u_max or analysis.u_min <= calib_u0:
        raise ValidationError("[analysis] need calibration offset < u_min_V < u_max_V")
    if analysis.pair not in ("innermost", "outermost", "mean"):
        raise ValidationError("[analysis] pair must be innermost, outermost or mean")
    if analysis.oversample < 2 or analysis.realizations < 1:
        raise ValidationError("[analysis] oversample must be >= 2 and realizations >= 1")

    sig = _pair("fit", "sigma_bounds_um", f["sigma_bounds_um"])
    du = _pair("fit", "delta_u_bounds_V", f["delta_u_bounds_V"])
    if not (0 < sig[0] < sig[1]) or not du[0] < du[1]:
        raise ValidationError("[fit] bounds must be increasing (sigma bounds positive)")
    if f["weights"] not in WEIGHTS:
        raise ValidationError(f"[fit] weights must be one of {WEIGHTS}")
    fit = FitDefaults(
        FitBounds(math.radians(_number("fit", "theta_window_deg", f["theta_window_deg"])),
                  (sig[0] * 1e-6, sig[1] * 1e-6), du),
        int(f["starts"]), f["weights"],
    )
    return RunConfig(trap, optics, dephasing, analysis, fit, tuple(points))


def load_config(path=None) -> RunConfig:
    """Load and validate a TOML config; ``None`` gives the built-in defaults."""
    if path is None:
        return build_config({})
    if str(path) == "paper_defaults":
        text = resources.files("ionfringe").joinpath("data", PAPER_DEFAULTS).read_text()
        source = PAPER_DEFAULTS
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        source = str(path)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{source}: parse error: {exc}") from exc
    try:
        return build_config(raw)
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from exc
