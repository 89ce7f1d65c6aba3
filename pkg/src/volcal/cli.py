"""``volcal`` command line: calibrate a surface, price from parameters, generate synthetic surfaces."""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from volcal import io
from volcal.calibrator import (
    CalibrationError,
    CalibrationResult,
    ObjectiveSpec,
    bootstrap_calibrate,
    calibrate_constant,
    model_prices,
    surface_from_deltas,
)
from volcal.charfn import CharFnDomainError, MarketContext, ParamSchedule, ParameterError
from volcal.implied import Quote, atm_forward_strike, delta_to_strike, implied_vol_bisection
from volcal.models import get_model
from volcal.optimizer import GaConfig, PsConfig, write_trace_csv
from volcal.pricer import PricerConfig, call_price_quadrature, carr_madan_fft, interpolate_price, put_from_call

log = logging.getLogger("volcal")

EXIT_OK, EXIT_INPUT, EXIT_CALIBRATION = 0, 2, 3


@dataclass(frozen=True)
class RunConfig:
    model: str = "heston"
    piecewise: bool = True
    pricer: PricerConfig = PricerConfig()
    ga: GaConfig = GaConfig()
    ps: PsConfig = PsConfig()
    bounds: dict = field(default_factory=dict)
    objective: ObjectiveSpec = ObjectiveSpec()
    seed: int = 0
    warm_start_path: str | None = None
    # the surface file carries no spot or rate, so they live here
    market: MarketContext = MarketContext(100.0, 0.0)

    def __post_init__(self):
        model = get_model(self.model)
        for name, pair in self.bounds.items():
            if name not in model.param_names:
                raise ValueError(f"bound for unknown {self.model} parameter {name!r}")
            if len(pair) != 2 or not float(pair[0]) < float(pair[1]):
                raise ValueError(f"bound for {name} must be [lower, upper] with lower < upper, got {pair}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        nested = {"pricer": PricerConfig, "ga": GaConfig, "ps": PsConfig, "objective": ObjectiveSpec, "market": MarketContext}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            if key in nested:
                kw[key] = _build(nested[key], value or {}, key)
            elif key == "bounds":
                kw[key] = {k: tuple(float(x) for x in v) for k, v in (value or {}).items()}
            else:
                kw[key] = value
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        if d["objective"]["weights"] is not None:
            d["objective"]["weights"] = [list(w) for w in d["objective"]["weights"]]
        return d


def _build(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")
    d = dict(d)
    if cls is GaConfig and d.get("fitness_limit", 0.0) is None:
        d["fitness_limit"] = -math.inf
    if cls is ObjectiveSpec and d.get("weights") is not None:
        d["weights"] = tuple(tuple(float(x) for x in w) for w in d["weights"])
    return cls(**d)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.from_dict(io.read_json(path))
    except (TypeError, ValueError) as exc:
        raise io.InputError(f"{path}: {exc}") from None


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get("VOLCAL_THREADS", "")
        try:
            n = int(env) if env.strip() else 1
        except ValueError:
            raise io.InputError(f"VOLCAL_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise io.InputError(f"thread count must be >= 1, got {n}")
    return n


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _load_params(path):
    """``(model_name, schedule, market)`` from a params file or a previous result.json."""
    d = io.read_json(path)
    try:
        name, sched = io.schedule_from_dict(d)
        market = d.get("market") or (d.get("config") or {}).get("market")
        if market is None:
            raise ValueError("no 'market' section (spot, rate)")
        return name, sched, io.market_from_dict(market)
    except (ValueError, KeyError, TypeError, ParameterError) as exc:
        raise io.InputError(f"{path}: {exc}") from None


def write_reports(out: Path, surface, result, config: RunConfig, error: str | None = None) -> None:
    """result.json plus residual, smile, parameter-path, jump and trace CSVs."""
    out.mkdir(parents=True, exist_ok=True)
    payload = {"config": config.to_dict(), "market": io.market_to_dict(surface.context)}
    payload.update(io.result_to_dict(result))
    if error is not None:
        payload["error"] = error
    io.write_json(out / "result.json", payload)

    rows = []
    for k, sl in enumerate(surface.slices[: len(result.fitted_vols)]):
        for q, fit, res in zip(sl.quotes, result.fitted_vols[k], result.residuals[k]):
            qt, m = q.origin if q.origin else (q.quote_type, q.moneyness)
            rows.append([q.maturity, qt, m, q.strike, q.vol, fit, res, int(not np.isfinite(fit))])
    io.atomic_write(
        out / "residuals.csv",
        _csv_text(["maturity_years", "quote_type", "moneyness", "strike", "vol_given", "vol_fitted", "residual", "flagged"], rows),
    )
    for k, sl in enumerate(surface.slices[: len(result.fitted_vols)]):
        fwd = atm_forward_strike(surface.context, sl.maturity)
        smile = [[q.strike, math.log(q.strike / fwd), q.vol, fit] for q, fit in zip(sl.quotes, result.fitted_vols[k])]
        io.atomic_write(out / f"smile_{k:02d}.csv", _csv_text(["strike", "log_moneyness", "vol_given", "vol_fitted"], smile))

    if result.schedule is not None:
        model = get_model(result.model)
        edges = (0.0,) + result.schedule.breakpoints
        ends = result.schedule.breakpoints + (surface.maturities[-1],)
        prows = [[k, a, b, *model.values(s).values()] for k, (s, a, b) in enumerate(zip(result.schedule.segments, edges, ends))]
        io.atomic_write(out / "parameters.csv", _csv_text(["segment", "start", "end", *model.param_names], prows))
        jumps = result.parameter_jumps()
        jrows = [[j["from_segment"], j["to_segment"], *(j[n] for n in model.param_names)] for j in jumps]
        io.atomic_write(out / "parameter_jumps.csv", _csv_text(["from_segment", "to_segment", *model.param_names], jrows))

    for k, d in enumerate(result.optimizer_diagnostics):
        buf = _io.StringIO()
        write_trace_csv(d.get("trace", []), buf)
        io.atomic_write(out / f"trace_{k:02d}.csv", buf.getvalue())


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    workers = resolve_threads(args.threads)
    surface = io.read_surface_csv(args.surface, config.market)
    warm = None
    if config.warm_start_path:
        warm = io.result_from_dict(io.read_json(config.warm_start_path))
        if warm.model != config.model:
            raise io.InputError(f"warm start model {warm.model!r} does not match config model {config.model!r}")
    ga = replace(config.ga, seed=config.seed)
    run = bootstrap_calibrate if config.piecewise else calibrate_constant
    out = Path(args.out)
    try:
        result = run(
            surface, config.objective, ga, config.ps, config.bounds, warm,
            model=config.model, pricer_cfg=config.pricer, workers=workers,
        )
    except CalibrationError as exc:
        log.error("%s", exc)
        partial = exc.partial or CalibrationResult(config.model, None, [], [], [], [])
        write_reports(out, surface_from_deltas(surface), partial, config, error=str(exc))
        return EXIT_CALIBRATION
    write_reports(out, surface_from_deltas(surface), result, config)
    print(f"total objective {result.total_objective!r} over {len(surface.slices)} maturities; wrote {out}")
    return EXIT_OK


def _floats(text: str) -> list[float]:
    if text is None or not text.strip():
        return []
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise io.InputError(f"expected a comma-separated list of numbers, got {text!r}") from None


def price_table(name, sched, ctx, t, strikes, quadrature=False, pricer_cfg=PricerConfig()):
    """Rows ``(strike, call, put, call_vol, put_vol)``; puts come from the calls by parity."""
    strikes = np.asarray(strikes, dtype=float)
    if strikes.size == 0:
        return []
    model = get_model(name)
    cf = model.cf(sched, ctx, t)
    if quadrature:
        calls = np.array([call_price_quadrature(cf, float(k), ctx, t) for k in strikes])
    else:
        if not model.moment_finite(sched, t, pricer_cfg.alpha + 1.0):
            raise io.InputError(f"moment of order {pricer_cfg.alpha + 1.0} is infinite at T={t}; the FFT pricer cannot damp it, use --quadrature")
        calls = interpolate_price(carr_madan_fft(cf, pricer_cfg, ctx, t, strikes), strikes)
    puts = put_from_call(calls, strikes, ctx, t)
    cv = implied_vol_bisection(calls, ctx, strikes, t, "call", errors="nan")
    pv = implied_vol_bisection(puts, ctx, strikes, t, "put", errors="nan")
    return [list(r) for r in zip(strikes, calls, puts, cv, pv)]


def cmd_price(args) -> int:
    name, sched, ctx = _load_params(args.params)
    if not args.maturity > 0:
        raise io.InputError(f"maturity must be > 0, got {args.maturity}")
    rows = price_table(name, sched, ctx, args.maturity, _floats(args.strikes), args.quadrature)
    text = _csv_text(["strike", "call", "put", "call_vol", "put_vol"], rows)
    if args.out:
        io.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _model_vols(model, sched, ctx, t, strikes, pricer_cfg):
    prices, put_side = model_prices(model, sched, ctx, t, strikes, pricer_cfg)
    sides = np.where(put_side, "put", "call")
    return implied_vol_bisection(prices, ctx, strikes, t, sides)


def _delta_strike(model, sched, ctx, t, delta, pricer_cfg):
    """Strike whose call delta at the model's own implied vol equals ``delta``."""
    fwd = atm_forward_strike(ctx, t)

    def gap(x):
        k = fwd * math.exp(x)
        vol = float(_model_vols(model, sched, ctx, t, np.array([k]), pricer_cfg)[0])
        return x - math.log(delta_to_strike(delta, vol, ctx, t) / fwd)

    width = 0.5 * math.sqrt(t)
    for _ in range(6):
        try:
            lo, hi = gap(-width), gap(width)
        except ValueError:
            lo = hi = math.nan
        if lo < 0 < hi:
            return fwd * math.exp(brentq(gap, -width, width, xtol=1e-14, rtol=1e-15))
        width *= 0.6 if not (math.isfinite(lo) and math.isfinite(hi)) else 1.8
    raise ValueError(f"could not bracket the strike for delta {delta} at T={t}")


def generate_surface(name, sched, ctx, maturities, *, strikes=(), std_moneyness=(), deltas=(), atm=False, pricer_cfg=PricerConfig()):
    """Quotes priced from ``sched``: strike, sqrt(T)-scaled log-forward-moneyness, delta or ATM grids."""
    model = get_model(name)
    quotes = []
    for t in maturities:
        if not t > 0:
            raise ValueError(f"maturity must be > 0, got {t}")
        sub = sched
        n_seg = sum(1 for b in sched.breakpoints if b < t) + 1
        if n_seg < len(sched.segments):
            sub = ParamSchedule(sched.breakpoints[: n_seg - 1], sched.segments[:n_seg])
        fwd = atm_forward_strike(ctx, t)
        ks = [float(k) for k in strikes] + [fwd * math.exp(z * math.sqrt(t)) for z in std_moneyness]
        if ks:
            vols = _model_vols(model, sub, ctx, t, np.array(ks), pricer_cfg)
            quotes += [Quote(t, "strike", k, float(v)) for k, v in zip(ks, vols)]
        for d in deltas:
            k = _delta_strike(model, sub, ctx, t, d, pricer_cfg)
            v = float(_model_vols(model, sub, ctx, t, np.array([k]), pricer_cfg)[0])
            quotes.append(Quote(t, "delta_call", float(d), v))
        if atm:
            v = float(_model_vols(model, sub, ctx, t, np.array([fwd]), pricer_cfg)[0])
            quotes.append(Quote(t, "atm", math.nan, v))
    return quotes


def cmd_surface(args) -> int:
    name, sched, ctx = _load_params(args.params)
    mats = _floats(args.maturities)
    if not mats:
        raise io.InputError("--maturities must list at least one maturity")
    deltas = _floats(args.deltas)
    if any(not 0 < d < 1 for d in deltas):
        raise io.InputError(f"deltas must lie in (0, 1), got {deltas}")
    quotes = generate_surface(
        name, sched, ctx, mats,
        strikes=_floats(args.strikes), std_moneyness=_floats(args.std_moneyness), deltas=deltas, atm=args.atm,
    )
    if not quotes:
        raise io.InputError("empty grid: give --strikes, --std-moneyness, --deltas or --atm")
    io.write_surface_csv(args.out, quotes)
    print(f"wrote {len(quotes)} quotes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volcal", description="Piecewise-constant stochastic-volatility calibration.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="bootstrap-calibrate a model to a quote file")
    c.add_argument("surface", help="CSV with maturity_years,quote_type,moneyness,vol")
    c.add_argument("--config", help="RunConfig JSON; defaults used when omitted")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--seed", type=int)
    c.add_argument("--threads", type=int, help="worker threads (default: $VOLCAL_THREADS or 1)")
    c.set_defaults(func=cmd_calibrate)

    pr = sub.add_parser("price", help="price European options from a parameter file")
    pr.add_argument("params", help="JSON with model, market, breakpoints, segments (result.json works)")
    pr.add_argument("--strikes", default="", help="comma-separated strikes")
    pr.add_argument("--maturity", type=float, required=True)
    pr.add_argument("--quadrature", action="store_true", help="use the quadrature reference pricer")
    pr.add_argument("--out", help="CSV path (default: stdout)")
    pr.set_defaults(func=cmd_price)

    s = sub.add_parser("surface", help="generate a synthetic quote file from a parameter file")
    s.add_argument("params")
    s.add_argument("--maturities", required=True, help="comma-separated maturities in years")
    grid = s.add_argument_group("grid (combine freely)")
    grid.add_argument("--strikes", default="", help="absolute strikes")
    grid.add_argument("--std-moneyness", default="", help="z values, strike = F exp(z sqrt(T)); write --std-moneyness=-1,0,1 when the list starts negative")
    grid.add_argument("--deltas", default="", help="call spot deltas in (0, 1)")
    grid.add_argument("--atm", action="store_true", help="add a forward-ATM quote per maturity")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_surface)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (io.InputError, ValueError, OSError, KeyError, CharFnDomainError) as exc:
        print(f"volcal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
