"""History CSV, curve CSV and result JSON formats."""

import json
import math
from pathlib import Path

from .errors import HistoryFormatError
from .model import ModelParams, make_kernel, map_asset_to_default
from .simulation import DefaultHistory, simulate_panel

SCHEMA_VERSION = 1
HEADER = ("year", "n", "k")


def _parse_int(text, field, line):
    try:
        return int(text.strip())
    except ValueError:
        raise HistoryFormatError(f"{field} is not an integer ({text.strip()!r}) at line {line}", line) from None


def parse_history_text(text):
    """Parse ``year,n,k`` CSV text into a :class:`DefaultHistory`.

    Line numbers in errors count the header as line 1. Rows are sorted by
    year; duplicates, gaps, negative values and k > n are rejected.
    """
    lines = text.splitlines()
    if not lines or tuple(c.strip() for c in lines[0].lstrip("﻿").split(",")) != HEADER:
        raise HistoryFormatError("header must be 'year,n,k' at line 1", 1)
    rows = []
    seen = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != 3:
            raise HistoryFormatError(f"expected 3 fields, got {len(cells)} at line {lineno}", lineno)
        year = _parse_int(cells[0], "year", lineno)
        n = _parse_int(cells[1], "n", lineno)
        k = _parse_int(cells[2], "k", lineno)
        if n < 0 or k < 0:
            raise HistoryFormatError(f"negative value at line {lineno}", lineno)
        if n == 0:
            raise HistoryFormatError(f"cohort size n must be positive at line {lineno}", lineno)
        if k > n:
            raise HistoryFormatError(f"k exceeds n at line {lineno}", lineno)
        if year in seen:
            raise HistoryFormatError(f"duplicate year {year} at line {lineno} (first at line {seen[year]})", lineno)
        seen[year] = lineno
        rows.append((year, n, k))
    if not rows:
        raise HistoryFormatError("history has no data rows", len(lines))
    rows.sort()
    for (y0, _, _), (y1, _, _) in zip(rows, rows[1:]):
        if y1 != y0 + 1:
            missing = ", ".join(str(y) for y in range(y0 + 1, min(y1, y0 + 6)))
            more = "" if y1 - y0 <= 6 else ", ..."
            raise HistoryFormatError(f"years are not contiguous: missing {missing}{more} (at line {seen[y1]})",
                                     seen[y1])
    return DefaultHistory.from_rows(rows)


def parse_history_csv(path):
    return parse_history_text(Path(path).read_text(encoding="utf-8"))


def format_history(history):
    lines = [",".join(HEADER)] + [f"{y},{n},{k}" for y, n, k in history.rows]
    return "\n".join(lines) + "\n"


def write_history_csv(history, path):
    Path(path).write_text(format_history(history), encoding="ascii", newline="\n")


def format_number(x):
    """12 significant digits, C-locale; integers stay integers."""
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def format_curve(header, rows):
    out = [",".join(header)]
    out.extend(",".join(format_number(v) for v in row) for row in rows)
    return "\n".join(out) + "\n"


def dump_json(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def fit_record(result, seed, n_paths):
    """JSON-ready dict of a fit result."""
    rec = {
        "family": result.family,
        "p_hat": float(result.params_hat.p),
        "rho_A_hat": float(result.params_hat.rho_A),
        "rho_D_hat": float(result.rho_D_hat),
        "kernel_param_hat": float(result.kernel_param_hat),
        "log_posterior": _finite_or_none(result.log_posterior),
        "converged": bool(result.converged),
        "non_identifiable": bool(result.non_identifiable),
    }
    if result.waic is not None:
        rec["waic"] = float(result.waic)
    if result.wbic is not None:
        rec["wbic"] = float(result.wbic)
    rec.update({"seed": int(seed), "n_paths": int(n_paths), "schema_version": SCHEMA_VERSION})
    return rec


def read_fit_json(path):
    """Fit records from a file written by the ``fit`` command (always a list)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return data if isinstance(data, list) else [data]


def truth_record(params, T, n, seed):
    return {
        "family": params.kernel.family,
        "p": float(params.p),
        "rho_A": float(params.rho_A),
        "rho_D": float(map_asset_to_default(params.p, params.rho_A)),
        "kernel_param": float(params.kernel.param),
        "T": int(T),
        "n": int(n),
        "seed": int(seed),
        "schema_version": SCHEMA_VERSION,
    }


def sidecar_path(out_path):
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".truth.json")


def generate_synthetic(params, T, n, seed, out_path, start_year=1):
    """Simulate a history, write it as CSV and the true parameters as a sidecar JSON.

    Returns (history, sidecar path).
    """
    history = simulate_panel(params, [int(n)] * int(T), seed, start_year=start_year)
    write_history_csv(history, out_path)
    side = sidecar_path(out_path)
    side.write_text(dump_json(truth_record(params, T, n, seed)), encoding="ascii", newline="\n")
    return history, side


def read_truth(path):
    """ModelParams and metadata back from a sidecar JSON."""
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    params = ModelParams(rec["p"], rec["rho_A"], make_kernel(rec["family"], rec["kernel_param"]))
    return params, rec
