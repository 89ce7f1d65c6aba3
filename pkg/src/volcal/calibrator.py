"""Maturity-by-maturity (bootstrap) calibration of piecewise-constant parameters.

Slice ``k`` frees only the parameters of segment ``k`` (the interval ending at
the ``k``-th maturity); earlier segments stay at their fitted values and seed
the initial GA population.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from volcal.charfn import CharFnDomainError, MarketContext, ParamSchedule, ParameterError
from volcal.implied import (
    Quote,
    atm_forward_strike,
    bs_price,
    bs_vega,
    delta_to_strike,
    implied_vol_bisection,
)
from volcal.models import Model, get_model
from volcal.optimizer import GaConfig, OptResult, PsConfig, SearchSpace, hybrid_optimize
from volcal.pricer import GridError, PricerConfig, carr_madan_fft, interpolate_price, put_from_call

log = logging.getLogger(__name__)

TARGETS = ("vols", "prices")
WEIGHTINGS = ("none", "vega_squared", "custom")


class CalibrationError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Slice:
    maturity: float
    quotes: tuple[Quote, ...]

    def strikes(self) -> np.ndarray:
        return np.array([q.strike for q in self.quotes])

    def vols(self) -> np.ndarray:
        return np.array([q.vol for q in self.quotes])


@dataclass(frozen=True)
class VolSurface:
    context: MarketContext
    slices: tuple[Slice, ...]

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        if not self.slices:
            raise ValueError("surface has no maturities")
        prev = 0.0
        for s in self.slices:
            if not s.quotes:
                raise ValueError(f"empty slice at maturity {s.maturity}")
            if not s.maturity > prev:
                raise ValueError("maturities must be strictly increasing")
            if any(q.maturity != s.maturity for q in s.quotes):
                raise ValueError(f"quote maturity mismatch in slice {s.maturity}")
            prev = s.maturity

    @property
    def maturities(self) -> tuple[float, ...]:
        return tuple(s.maturity for s in self.slices)

    @property
    def quoting(self) -> str:
        return "strike" if all(q.quote_type == "strike" for s in self.slices for q in s.quotes) else "delta"

    @classmethod
    def from_quotes(cls, context: MarketContext, quotes: Sequence[Quote]) -> "VolSurface":
        by_t: dict[float, list[Quote]] = {}
        for q in quotes:
            by_t.setdefault(q.maturity, []).append(q)
        return cls(context, tuple(Slice(t, tuple(by_t[t])) for t in sorted(by_t)))


@dataclass(frozen=True)
class ObjectiveSpec:
    target: str = "vols"
    weighting: str = "none"
    # per-slice tuples of weights, only for weighting == "custom"
    weights: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.weighting == "custom":
            if self.weights is None:
                raise ValueError("custom weighting needs weights")
            if any(w <= 0 for ws in self.weights for w in ws):
                raise ValueError("custom weights must be positive")


@dataclass(frozen=True)
class SliceFit:
    value: float
    fitted_vols: np.ndarray
    residuals: np.ndarray
    flagged: np.ndarray


@dataclass
class CalibrationResult:
    model: str
    schedule: ParamSchedule
    per_slice_objective: list[float]
    fitted_vols: list[np.ndarray]
    residuals: list[np.ndarray]
    optimizer_diagnostics: list[dict] = field(default_factory=list)

    @property
    def total_objective(self) -> float:
        return float(sum(self.per_slice_objective))

    def parameter_jumps(self) -> list[dict]:
        return parameter_jumps(get_model(self.model), self.schedule)


def surface_from_deltas(raw: VolSurface) -> VolSurface:
    """Strike-quoted copy: deltas via ``delta_to_strike`` at the quote's own vol, ATM at the forward."""
    ctx = raw.context
    slices = []
    for s in raw.slices:
        quotes = []
        for q in s.quotes:
            if q.quote_type == "strike":
                quotes.append(q)
                continue
            if q.quote_type == "atm":
                k = atm_forward_strike(ctx, q.maturity)
            else:
                try:
                    k = delta_to_strike(q.moneyness, q.vol, ctx, q.maturity)
                except ValueError as exc:
                    raise ValueError(f"quote (T={q.maturity}, delta={q.moneyness}): {exc}") from exc
            quotes.append(Quote(q.maturity, "strike", float(k), q.vol, (q.quote_type, q.moneyness)))
        slices.append(Slice(s.maturity, tuple(quotes)))
    return VolSurface(ctx, tuple(slices))


def _quote_weights(sl: Slice, spec: ObjectiveSpec, ctx, index):
    if spec.weighting == "none":
        return np.ones(len(sl.quotes))
    if spec.weighting == "vega_squared":
        return bs_vega(ctx, sl.strikes(), sl.maturity, sl.vols()) ** 2
    w = np.asarray(spec.weights[index], dtype=float)
    if len(w) != len(sl.quotes):
        raise ValueError(f"slice {index}: {len(w)} weights for {len(sl.quotes)} quotes")
    return w


def model_prices(model: Model, schedule, ctx: MarketContext, t: float, strikes, pricer_cfg: PricerConfig):
    """Out-of-the-money model prices and their sides (call above the forward, put below)."""
    if not model.moment_finite(schedule, t, pricer_cfg.alpha + 1.0):
        raise CharFnDomainError(f"moment of order {pricer_cfg.alpha + 1.0} is infinite at T={t}; FFT damping invalid", t=t)
    grid = carr_madan_fft(model.cf(schedule, ctx, t), pricer_cfg, ctx, t)
    calls = interpolate_price(grid, strikes)
    put_side = strikes < atm_forward_strike(ctx, t)
    prices = np.where(put_side, put_from_call(calls, strikes, ctx, t), calls)
    return prices, put_side


def evaluate_slice(schedule, sl: Slice, spec: ObjectiveSpec, pricer_cfg: PricerConfig, model: Model, ctx, index=0) -> SliceFit:
    """Objective and per-quote fit for one maturity.

    Quotes whose model price cannot be inverted are flagged and charged
    ``10 * r_max^2`` (times their weight), with ``r_max`` the larger of the
    biggest genuine residual and the biggest quoted vol.
    """
    strikes, given = sl.strikes(), sl.vols()
    t = sl.maturity
    weights = _quote_weights(sl, spec, ctx, index)
    try:
        prices, put_side = model_prices(model, schedule, ctx, t, strikes, pricer_cfg)
        sides = np.where(put_side, "put", "call")
        fitted = implied_vol_bisection(prices, ctx, strikes, t, sides, errors="nan")
    except (CharFnDomainError, GridError, FloatingPointError):
        prices = np.full(len(strikes), np.nan)
        fitted = np.full(len(strikes), np.nan)
    flagged = ~np.isfinite(fitted)
    residuals = given - fitted
    if spec.target == "vols":
        err = residuals
        scale = given.max()
    else:
        sides = np.where(strikes < atm_forward_strike(ctx, t), "put", "call")
        market = bs_price(ctx, strikes, t, given, sides)
        err = market - prices
        scale = market.max()
    good = ~flagged & np.isfinite(err)
    r_max = max(float(np.abs(err[good]).max()) if good.any() else 0.0, float(scale))
    sq = np.where(good, err * err, 10.0 * r_max**2)
    value = float(np.sum(weights * sq))
    return SliceFit(value, fitted, residuals, flagged)


def objective_mse(schedule, sl: Slice, spec: ObjectiveSpec, pricer_cfg: PricerConfig, model: Model, ctx, index=0) -> float:
    """Weighted sum of squared vol (or price) errors over the quotes of one slice."""
    return evaluate_slice(schedule, sl, spec, pricer_cfg, model, ctx, index).value


@dataclass
class _SliceProblem:
    """Maps a free-parameter vector of segment ``index`` to a full schedule."""

    model: Model
    index: int
    prior: tuple
    breakpoints: tuple[float, ...]
    names: tuple[str, ...]
    fixed: dict
    alpha: float

    def values(self, x) -> dict:
        v = dict(self.fixed)
        v.update(zip(self.names, (float(a) for a in x)))
        return v

    def feasible(self, x) -> bool:
        return self.model.feasible_values(self.values(x), self.alpha)

    def schedule(self, x) -> ParamSchedule:
        return ParamSchedule(self.breakpoints, self.prior + (self.model.segment(self.values(x)),))

    def vector(self, seg) -> np.ndarray:
        v = self.model.values(seg)
        return np.array([v[n] for n in self.names])


def _space(model: Model, names, bounds: dict, feasible) -> SearchSpace:
    lo = np.array([bounds.get(n, model.default_bounds[n])[0] for n in names], dtype=float)
    hi = np.array([bounds.get(n, model.default_bounds[n])[1] for n in names], dtype=float)
    return SearchSpace(lo, hi, feasible, tuple(names))


def calibrate_slice(
    slice_index: int,
    surface: VolSurface,
    prior: ParamSchedule | Sequence | None,
    spec: ObjectiveSpec,
    ga_cfg: GaConfig,
    ps_cfg: PsConfig,
    bounds: dict | None = None,
    *,
    model: Model | str = "heston",
    pricer_cfg: PricerConfig = PricerConfig(),
    warm_segment=None,
    workers: int = 1,
):
    """Fit segment ``slice_index`` with all earlier segments held fixed.

    Returns ``(segment, OptResult)``.
    """
    model = get_model(model) if isinstance(model, str) else model
    bounds = bounds or {}
    prior_segs = tuple(prior.segments if isinstance(prior, ParamSchedule) else (prior or ()))[:slice_index]
    if len(prior_segs) != slice_index:
        raise ValueError(f"slice {slice_index} needs {slice_index} fitted earlier segments")
    names = model.free_names(slice_index)
    fixed = {}
    if slice_index > 0 and model.has_v0:
        fixed["v0"] = model.values(prior_segs[0])["v0"]
    problem = _SliceProblem(
        model, slice_index, prior_segs, surface.maturities[:slice_index], names, fixed, pricer_cfg.alpha
    )
    space = _space(model, names, bounds, problem.feasible)
    sl = surface.slices[slice_index]
    ctx = surface.context

    def objective(x):
        try:
            sched = problem.schedule(x)
        except ParameterError:
            return math.inf
        return objective_mse(sched, sl, spec, pricer_cfg, model, ctx, slice_index)

    injected = []
    if warm_segment is not None:
        injected.append(problem.vector(warm_segment))
    injected.extend(problem.vector(s) for s in reversed(prior_segs))
    injected = [x for x in injected if space.contains(x)]
    cfg = replace(ga_cfg, seed=ga_cfg.seed + 7919 * slice_index)
    res = hybrid_optimize(objective, space, cfg, ps_cfg, injected, workers=workers)
    seg = model.segment(problem.values(res.best_point))
    log.info("slice %d (T=%g): objective %.3e after %d generations", slice_index, sl.maturity, res.best_value, res.generations)
    return seg, res


def _diagnostics(res: OptResult) -> dict:
    return {
        "best_value": res.best_value,
        "ga_best_value": res.details.get("ga_best_value"),
        "generations": res.generations,
        "evaluations": res.evaluations,
        "ga_termination": res.details.get("ga_termination"),
        "termination_reason": res.termination_reason.value,
        "ps_iterations": res.details.get("ps_iterations"),
        "trace": res.trace,
    }


def bootstrap_calibrate(
    surface: VolSurface,
    spec: ObjectiveSpec,
    ga_cfg: GaConfig,
    ps_cfg: PsConfig,
    bounds: dict | None = None,
    warm: CalibrationResult | None = None,
    *,
    model: Model | str = "heston",
    pricer_cfg: PricerConfig = PricerConfig(),
    workers: int = 1,
) -> CalibrationResult:
    """Calibrate slice by slice, starting with the first maturity.

    ``warm`` (a previous result on the same maturities) adds its segment for
    each slice to that slice's initial population.
    """
    model = get_model(model) if isinstance(model, str) else model
    if surface.quoting != "strike":
        surface = surface_from_deltas(surface)
    segments: list = []
    objectives, fitted, residuals, diags = [], [], [], []
    for k, sl in enumerate(surface.slices):
        warm_seg = None
        if warm is not None and k < len(warm.schedule.segments):
            warm_seg = warm.schedule.segments[k]
        try:
            seg, res = calibrate_slice(
                k, surface, segments, spec, ga_cfg, ps_cfg, bounds,
                model=model, pricer_cfg=pricer_cfg, warm_segment=warm_seg, workers=workers,
            )
        except Exception as exc:
            partial = _result(model, surface, segments, objectives, fitted, residuals, diags)
            raise CalibrationError(f"slice {k} (T={sl.maturity}) failed: {exc}", partial) from exc
        segments.append(seg)
        sched = ParamSchedule(surface.maturities[:k], tuple(segments))
        fit = evaluate_slice(sched, sl, spec, pricer_cfg, model, surface.context, k)
        objectives.append(fit.value)
        fitted.append(fit.fitted_vols)
        residuals.append(fit.residuals)
        diags.append(_diagnostics(res))
    return _result(model, surface, segments, objectives, fitted, residuals, diags)


def _result(model, surface, segments, objectives, fitted, residuals, diags):
    if segments:
        schedule = ParamSchedule(surface.maturities[: len(segments) - 1], tuple(segments))
    else:
        schedule = None
    return CalibrationResult(model.name, schedule, objectives, fitted, residuals, diags)


def calibrate_constant(
    surface: VolSurface,
    spec: ObjectiveSpec,
    ga_cfg: GaConfig,
    ps_cfg: PsConfig,
    bounds: dict | None = None,
    warm: CalibrationResult | None = None,
    *,
    model: Model | str = "heston",
    pricer_cfg: PricerConfig = PricerConfig(),
    workers: int = 1,
) -> CalibrationResult:
    """One time-independent parameter set fitted to all slices at once."""
    model = get_model(model) if isinstance(model, str) else model
    if surface.quoting != "strike":
        surface = surface_from_deltas(surface)
    names = model.param_names
    try:
        space = _space(model, names, bounds or {}, lambda x: model.feasible_values(dict(zip(names, x)), pricer_cfg.alpha))
    except Exception as exc:
        raise CalibrationError(f"constant fit failed: {exc}") from exc
    ctx = surface.context

    def schedule(x):
        return ParamSchedule.constant(model.segment(dict(zip(names, (float(a) for a in x)))))

    def objective(x):
        try:
            sched = schedule(x)
        except ParameterError:
            return math.inf
        return sum(objective_mse(sched, sl, spec, pricer_cfg, model, ctx, k) for k, sl in enumerate(surface.slices))

    injected = []
    if warm is not None:
        v = model.values(warm.schedule.segments[0])
        x = np.array([v[n] for n in names])
        if space.contains(x):
            injected.append(x)
    try:
        res = hybrid_optimize(objective, space, ga_cfg, ps_cfg, injected, workers=workers)
    except Exception as exc:
        raise CalibrationError(f"constant fit failed: {exc}") from exc
    sched = schedule(res.best_point)
    fits = [evaluate_slice(sched, sl, spec, pricer_cfg, model, ctx, k) for k, sl in enumerate(surface.slices)]
    return CalibrationResult(
        model.name, sched, [f.value for f in fits], [f.fitted_vols for f in fits],
        [f.residuals for f in fits], [_diagnostics(res)],
    )


def model_surface(result: CalibrationResult, surface: VolSurface, spec: ObjectiveSpec = ObjectiveSpec(), pricer_cfg: PricerConfig = PricerConfig()):
    """Recompute fitted vols and residuals (given minus fitted) for every quote."""
    model = get_model(result.model)
    if surface.quoting != "strike":
        surface = surface_from_deltas(surface)
    fitted, residuals = [], []
    for k, sl in enumerate(surface.slices):
        if result.schedule is None or len(result.schedule.segments) <= k and len(result.schedule.breakpoints) > 0:
            break
        fit = evaluate_slice(_truncated(result.schedule, k), sl, spec, pricer_cfg, model, surface.context, k)
        fitted.append(fit.fitted_vols)
        residuals.append(fit.residuals)
    return fitted, residuals


def _truncated(schedule: ParamSchedule, k: int) -> ParamSchedule:
    if not schedule.breakpoints:
        return schedule
    return ParamSchedule(schedule.breakpoints[:k], schedule.segments[: k + 1])


def parameter_jumps(model: Model, schedule: ParamSchedule) -> list[dict]:
    """Differences of each parameter between consecutive segments."""
    vals = [model.values(s) for s in schedule.segments]
    return [
        {"from_segment": k, "to_segment": k + 1, **{n: b[n] - a[n] for n in a}}
        for k, (a, b) in enumerate(zip(vals, vals[1:]))
    ]
