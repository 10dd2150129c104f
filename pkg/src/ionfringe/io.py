"""CSV ingestion and deterministic CSV emission."""

from __future__ import annotations

import csv
import io
import math
import sys
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .fitting import MeasuredScan

SCAN_COLUMNS = ("u_tip_V", "rate_cps", "stderr_cps")
_META_KEYS = {"ions": ("n_ions", int), "background_cps": ("background_rate", float),
              "integration_s": ("integration_s", float)}


def format_value(value) -> str:
    """17 significant digits in scientific notation for floats; integers and text verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.16e}"
    if value is None:
        return ""
    return str(value)


def render_csv(records: Sequence[Mapping], columns: Sequence[str] | None = None,
               comments: Iterable[str] = ()) -> str:
    if columns is None:
        if not records:
            raise ValidationError("an empty record list needs explicit columns")
        columns = list(records[0].keys())
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for i, rec in enumerate(records):
        if set(rec.keys()) != set(columns):
            raise ValidationError(f"record {i} has columns {sorted(rec)} instead of {list(columns)}")
        buf.write(",".join(format_value(rec[c]) for c in columns) + "\n")
    return buf.getvalue()


def emit_csv(records: Sequence[Mapping], path=None, columns: Sequence[str] | None = None,
             comments: Iterable[str] = ()) -> None:
    """Write homogeneous records with a header row; ``path=None`` writes to stdout."""
    text = render_csv(records, columns, comments)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def write_scan(scan: MeasuredScan, path) -> None:
    rows = [{"u_tip_V": u, "rate_cps": r, "stderr_cps": s}
            for u, r, s in zip(scan.u_tip, scan.rate, scan.stderr)]
    comments = [f"ions={scan.n_ions}", f"background_cps={format_value(scan.background_rate)}",
                f"integration_s={format_value(scan.integration_s)}"]
    emit_csv(rows, path, SCAN_COLUMNS, comments)


def load_scan(path) -> MeasuredScan:
    """Read a scan CSV (``u_tip_V,rate_cps,stderr_cps``) with optional ``# key=value`` metadata."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc

    meta = {}
    body = []
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].strip().partition("=")
            key = key.strip()
            if sep and key in _META_KEYS:
                name, cast = _META_KEYS[key]
                try:
                    meta[name] = cast(value.strip())
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}")
            continue
        body.append((lineno, line))
    if not body:
        raise ValidationError(f"{path}: no header row")

    header_line, header = body[0]
    columns = [c.strip() for c in next(csv.reader([header]))]
    missing = [c for c in SCAN_COLUMNS if c not in columns]
    if missing:
        raise ValidationError(f"{path}:{header_line}: missing column(s) {', '.join(missing)}")
    idx = [columns.index(c) for c in SCAN_COLUMNS]

    rows = []
    for lineno, line in body[1:]:
        fields = next(csv.reader([line]))
        try:
            rows.append([float(fields[i]) for i in idx])
        except (ValueError, IndexError):
            raise ValidationError(f"{path}:{lineno}: unparsable row {line!r}")
        if rows[-1][2] <= 0:
            raise ValidationError(f"{path}:{lineno}: stderr_cps must be positive")
    data = np.array(rows, dtype=float).reshape(-1, 3)
    return MeasuredScan(data[:, 0], data[:, 1], data[:, 2], **meta)
