"""Plain CSV/JSON persistence for surfaces, parameter schedules and calibration results.

Floats are written with ``repr`` (shortest round-trip form), so rereading a
file reproduces every value bit for bit. Non-finite floats become ``null``
in JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from volcal.calibrator import CalibrationResult, VolSurface
from volcal.charfn import MarketContext, ParamSchedule
from volcal.implied import QUOTE_TYPES, Quote
from volcal.models import get_model

SURFACE_HEADER = ("maturity_years", "quote_type", "moneyness", "vol")


class InputError(ValueError):
    """Malformed input file; the message carries the file and line number."""


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return repr(float(x))


def read_surface_csv(path, context: MarketContext) -> VolSurface:
    """Parse a quote file with header ``maturity_years,quote_type,moneyness,vol``."""
    name = str(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{name}:1: empty file")
    header = tuple(c.strip() for c in rows[0])
    missing = [c for c in SURFACE_HEADER if c not in header]
    if missing:
        raise InputError(f"{name}:1: missing column(s) {', '.join(missing)}; expected {','.join(SURFACE_HEADER)}")
    col = {c: header.index(c) for c in SURFACE_HEADER}
    quotes = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{name}:{lineno}: expected {len(header)} fields, got {len(row)}")
        qt = row[col["quote_type"]].strip()
        if qt not in QUOTE_TYPES:
            raise InputError(f"{name}:{lineno}: quote_type must be one of {QUOTE_TYPES}, got {qt!r}")
        try:
            t = float(row[col["maturity_years"]])
            vol = float(row[col["vol"]])
            m = row[col["moneyness"]].strip()
            moneyness = float(m) if m else math.nan
            if qt != "atm" and not math.isfinite(moneyness):
                raise ValueError(f"moneyness required for {qt}")
            quotes.append(Quote(t, qt, moneyness, vol))
        except ValueError as exc:
            raise InputError(f"{name}:{lineno}: {exc}") from None
    if not quotes:
        raise InputError(f"{name}:2: no quotes")
    try:
        return VolSurface.from_quotes(context, quotes)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from None


def surface_csv_text(quotes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SURFACE_HEADER)
    for q in quotes:
        m = "" if q.quote_type == "atm" else _fmt(q.moneyness)
        w.writerow([_fmt(q.maturity), q.quote_type, m, _fmt(q.vol)])
    return buf.getvalue()


def write_surface_csv(path, quotes) -> None:
    atomic_write(path, surface_csv_text(quotes))


def _clean(obj):
    """Recursively turn numpy scalars/arrays into JSON-ready values; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj))


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from None


def schedule_to_dict(model_name: str, schedule: ParamSchedule) -> dict:
    model = get_model(model_name)
    return {
        "model": model.name,
        "breakpoints": list(schedule.breakpoints),
        "segments": [model.values(s) for s in schedule.segments],
    }


def schedule_from_dict(d: dict) -> tuple[str, ParamSchedule]:
    """``(model_name, schedule)`` from ``{"model", "breakpoints", "segments"}``."""
    try:
        model = get_model(d.get("model", "heston"))
        segs = []
        for k, s in enumerate(d["segments"]):
            unknown = set(s) - set(model.param_names)
            missing = [n for n in model.param_names if n not in s]
            if model.has_v0 and k > 0 and missing == ["v0"]:
                s = {**s, "v0": d["segments"][0]["v0"]}
                missing = []
            if unknown or missing:
                raise ValueError(f"segment {k}: unknown {sorted(unknown)}, missing {missing}")
            segs.append(model.segment({n: float(s[n]) for n in model.param_names}))
        return model.name, ParamSchedule(tuple(float(b) for b in d.get("breakpoints", ())), tuple(segs))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed parameter schedule: {exc!r}") from None


def market_to_dict(ctx: MarketContext) -> dict:
    return {"spot": ctx.spot, "rate": ctx.rate}


def market_from_dict(d: dict) -> MarketContext:
    return MarketContext(float(d["spot"]), float(d.get("rate", 0.0)))


def result_to_dict(result: CalibrationResult) -> dict:
    out = schedule_to_dict(result.model, result.schedule) if result.schedule is not None else {"model": result.model}
    out["per_slice_objective"] = list(result.per_slice_objective)
    out["total_objective"] = result.total_objective
    out["fitted_vols"] = [list(v) for v in result.fitted_vols]
    out["residuals"] = [list(r) for r in result.residuals]
    out["parameter_jumps"] = result.parameter_jumps() if result.schedule is not None else []
    out["optimizer_diagnostics"] = [
        {k: v for k, v in d.items() if k != "trace"} for d in result.optimizer_diagnostics
    ]
    return out


def _floats(values):
    return np.array([math.nan if v is None else float(v) for v in values])


def result_from_dict(d: dict) -> CalibrationResult:
    name, sched = schedule_from_dict(d)
    return CalibrationResult(
        name,
        sched,
        [math.inf if v is None else float(v) for v in d.get("per_slice_objective", [])],
        [_floats(v) for v in d.get("fitted_vols", [])],
        [_floats(v) for v in d.get("residuals", [])],
        list(d.get("optimizer_diagnostics", [])),
    )
