"""Hybrid global/local optimizer for box-bounded problems with a nonlinear feasible set.

A genetic algorithm locates the basin, then a pattern search with complete
polling refines the GA's best point. Every operator keeps its output inside
the bounds and the feasibility predicate, so the objective is never
evaluated at an infeasible point and no penalty terms are involved.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class InfeasibleSpaceError(ValueError):
    pass


class Termination(str, enum.Enum):
    MAX_GENERATIONS = "max_generations"
    STALL = "stall"
    TIME = "time_budget"
    FITNESS_LIMIT = "fitness_limit"
    MESH = "mesh_tolerance"
    MAX_ITERATIONS = "max_iterations"
    MAX_EVALUATIONS = "max_evaluations"


@dataclass(frozen=True, eq=False)
class SearchSpace:
    lower: np.ndarray
    upper: np.ndarray
    feasible: Callable[[np.ndarray], bool] | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if self.names and len(self.names) != len(lower):
            raise ValueError("names must match the dimension")
        if self.feasible is not None:
            rng = np.random.default_rng(0)
            for _ in range(100_000):
                if self.feasible(rng.uniform(lower, upper)):
                    break
            else:
                raise InfeasibleSpaceError("no feasible point found in 1e5 uniform draws")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def in_bounds(self, x) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains(self, x) -> bool:
        return self.in_bounds(x) and (self.feasible is None or bool(self.feasible(x)))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    elite_count: int = 2
    crossover_fraction: float = 0.8
    max_generations: int = 100
    max_stall_generations: int = 50
    # stop when best fitness improved by at most this much per generation over the stall window
    fitness_tolerance: float = 1e-12
    time_budget: float | None = None
    seed: int = 0
    fitness_limit: float = -math.inf
    extrapolation_probability: float = 0.25
    extrapolation_distance: float = 0.1
    mutation_scale: float = 0.1
    mutation_growth: float = 2.0
    mutation_shrink: float = 0.5

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must satisfy 0 <= elite_count < population_size")
        if not 0 <= self.crossover_fraction <= 1:
            raise ValueError("crossover_fraction must lie in [0, 1]")
        if self.max_generations < 0 or self.max_stall_generations < 1:
            raise ValueError("generation limits must be positive")


@dataclass(frozen=True)
class PsConfig:
    initial_mesh: float = 0.05
    mesh_contraction: float = 0.5
    mesh_expansion: float = 2.0
    mesh_tolerance: float = 1e-6
    max_iterations: int = 2000
    max_evaluations: int | None = None
    complete_polling: bool = True

    def __post_init__(self):
        if not 0 < self.mesh_contraction < 1:
            raise ValueError("mesh_contraction must lie in (0, 1)")
        if not self.mesh_expansion >= 1:
            raise ValueError("mesh_expansion must be >= 1")
        if not (self.initial_mesh > 0 and self.mesh_tolerance > 0):
            raise ValueError("mesh sizes must be positive")
        if not self.complete_polling:
            raise ValueError("only complete polling is supported")


@dataclass(frozen=True)
class TraceRow:
    generation: int
    best: float
    mean: float
    evaluations: int


@dataclass
class OptResult:
    best_point: np.ndarray
    best_value: float
    evaluations: int
    generations: int
    trace: list[TraceRow]
    termination_reason: Termination
    details: dict = field(default_factory=dict)


@dataclass
class MutationState:
    """Step scale as a fraction of the box diagonal (normalized coordinates)."""

    scale: float = 0.1
    growth: float = 2.0
    shrink: float = 0.5
    min_scale: float = 1e-6
    max_scale: float = 1.0

    def update(self, improved: bool) -> None:
        self.scale *= self.growth if improved else self.shrink
        self.scale = min(max(self.scale, self.min_scale), self.max_scale)


class _Evaluator:
    """Counts, memoizes and (optionally) parallelizes objective calls in input order."""

    def __init__(self, objective, space: SearchSpace, workers: int = 1):
        self.objective = objective
        self.space = space
        self.count = 0
        self.cache: dict[bytes, float] = {}
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        keys = [p.tobytes() for p in points]
        todo = {}
        for key, p in zip(keys, points):
            if key not in self.cache and key not in todo:
                if not self.space.contains(p):
                    raise AssertionError(f"objective evaluated at infeasible point {p}")
                todo[key] = p
        if todo:
            pts = list(todo.values())
            vals = list(self.pool.map(self.objective, pts)) if self.pool else [self.objective(p) for p in pts]
            for key, v in zip(todo, vals):
                v = float(v)
                self.cache[key] = v if math.isfinite(v) else math.inf
            self.count += len(pts)
        return np.array([self.cache[k] for k in keys])

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def init_population(space: SearchSpace, cfg: GaConfig, injected: Sequence = (), rng=None) -> np.ndarray:
    """Injected points first, then uniform draws rejected until feasible."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    pop = []
    for x in injected:
        x = np.asarray(x, dtype=float)
        if x.shape != (space.dim,) or not space.contains(x):
            warnings.warn(f"dropping infeasible injected point {x}", stacklevel=2)
            continue
        if len(pop) < cfg.population_size:
            pop.append(x.copy())
    rejections = 0
    limit = 10_000 * cfg.population_size
    while len(pop) < cfg.population_size:
        x = rng.uniform(space.lower, space.upper)
        if space.contains(x):
            pop.append(x)
        else:
            rejections += 1
            if rejections > limit:
                raise InfeasibleSpaceError(f"feasibility sampling exhausted after {limit} rejections")
    return np.array(pop)


def crossover_linear(
    parent_a,
    parent_b,
    rng,
    space: SearchSpace,
    *,
    extrapolation_probability=0.25,
    extrapolation_distance=0.1,
    max_tries=10,
    lam=None,
):
    """Child on the line through two parents; ``parent_a`` must be the fitter one.

    Usually a convex combination; occasionally a short step beyond
    ``parent_a`` away from ``parent_b``. On a convex feasible set (the Feller
    region intersected with a box) interpolated children are always feasible.
    """
    a = np.asarray(parent_a, dtype=float)
    b = np.asarray(parent_b, dtype=float)
    if lam is not None:
        # fixed weight, no extrapolation or retries: exposes the raw convex combination
        return lam * a + (1.0 - lam) * b
    if rng.random() < extrapolation_probability:
        child = np.clip(a + extrapolation_distance * (a - b), space.lower, space.upper)
        if space.contains(child):
            return child
    for _ in range(max_tries):
        lam = rng.random()
        child = np.clip(lam * a + (1.0 - lam) * b, space.lower, space.upper)
        if space.contains(child):
            return child
    return a.copy()


def mutate_adaptive(parent, space: SearchSpace, state: MutationState, rng, max_halvings=50):
    """Random direction of length ``state.scale`` (box-diagonal units), halved until feasible."""
    x = np.asarray(parent, dtype=float)
    direction = rng.standard_normal(space.dim)
    norm = np.linalg.norm(direction)
    if norm == 0:
        return x.copy()
    step = direction / norm * state.scale * math.sqrt(space.dim) * space.width
    for _ in range(max_halvings):
        child = x + step
        if space.contains(child):
            return child
        step = 0.5 * step
    return x.copy()


def _tournament(ranks, rng):
    i, j = rng.integers(len(ranks), size=2)
    return i if ranks[i] <= ranks[j] else j


def ga_step(population, fitnesses, cfg: GaConfig, space: SearchSpace, rng, state: MutationState | None = None):
    """Next generation: elites (sorted), then crossover children, then mutants."""
    state = state or MutationState(cfg.mutation_scale, cfg.mutation_growth, cfg.mutation_shrink)
    population = np.asarray(population)
    fitnesses = np.asarray(fitnesses)
    order = np.argsort(fitnesses, kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(len(order))
    size = len(population)
    n_cross = int(round(cfg.crossover_fraction * (size - cfg.elite_count)))
    n_mut = size - cfg.elite_count - n_cross
    children = [population[i].copy() for i in order[: cfg.elite_count]]
    for _ in range(n_cross):
        i, j = _tournament(ranks, rng), _tournament(ranks, rng)
        if ranks[j] < ranks[i]:
            i, j = j, i
        children.append(
            crossover_linear(
                population[i],
                population[j],
                rng,
                space,
                extrapolation_probability=cfg.extrapolation_probability,
                extrapolation_distance=cfg.extrapolation_distance,
            )
        )
    for _ in range(n_mut):
        children.append(mutate_adaptive(population[_tournament(ranks, rng)], space, state, rng))
    return np.array(children)


def _mean_finite(values):
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if len(finite) else math.inf


def ga_run(objective, space: SearchSpace, cfg: GaConfig, injected: Sequence = (), workers: int = 1, _evaluator=None) -> OptResult:
    evaluate = _evaluator or _Evaluator(objective, space, workers)
    rng = np.random.default_rng(cfg.seed)
    state = MutationState(cfg.mutation_scale, cfg.mutation_growth, cfg.mutation_shrink)
    started = time.monotonic()
    try:
        pop = init_population(space, cfg, injected, rng)
        fit = evaluate(pop)
        best_hist = [float(fit.min())]
        trace = [TraceRow(0, best_hist[0], _mean_finite(fit), evaluate.count)]
        gen = 0
        while True:
            s = cfg.max_stall_generations
            if best_hist[-1] <= cfg.fitness_limit:
                reason = Termination.FITNESS_LIMIT
                break
            if gen >= cfg.max_generations:
                reason = Termination.MAX_GENERATIONS
                break
            if gen >= s and (best_hist[-1 - s] - best_hist[-1]) / s <= cfg.fitness_tolerance:
                reason = Termination.STALL
                break
            if cfg.time_budget is not None and time.monotonic() - started > cfg.time_budget:
                reason = Termination.TIME
                break
            elite_fit = np.sort(fit, kind="stable")[: cfg.elite_count]
            pop = ga_step(pop, fit, cfg, space, rng, state)
            fit = np.concatenate([elite_fit, evaluate(pop[cfg.elite_count :])])
            gen += 1
            best = float(fit.min())
            state.update(best < best_hist[-1])
            best_hist.append(min(best, best_hist[-1]))
            trace.append(TraceRow(gen, best_hist[-1], _mean_finite(fit), evaluate.count))
        k = int(np.argmin(fit))
    finally:
        if _evaluator is None:
            evaluate.close()
    log.debug("GA stopped after %d generations (%s), best %.3e", gen, reason.value, fit[k])
    return OptResult(pop[k].copy(), float(fit[k]), evaluate.count, gen, trace, reason)


def pattern_search(objective, start, space: SearchSpace, cfg: PsConfig, workers: int = 1, start_value=None, _evaluator=None) -> OptResult:
    """Coordinate pattern search (poll set ``+-e_i``) with complete polling.

    Mesh sizes are fractions of each coordinate's box width. Infeasible poll
    points are skipped without being evaluated.
    """
    evaluate = _evaluator or _Evaluator(objective, space, workers)
    x = np.asarray(start, dtype=float).copy()
    if not space.contains(x):
        raise ValueError("pattern search must start from a feasible point")
    try:
        fx = float(evaluate(x)[0]) if start_value is None else float(start_value)
        mesh = cfg.initial_mesh
        evals0 = evaluate.count
        trace = [TraceRow(0, fx, fx, evaluate.count)]
        it = 0
        reason = Termination.MESH
        basis = np.eye(space.dim) * space.width
        while mesh >= cfg.mesh_tolerance:
            if it >= cfg.max_iterations:
                reason = Termination.MAX_ITERATIONS
                break
            if cfg.max_evaluations is not None and evaluate.count - evals0 >= cfg.max_evaluations:
                reason = Termination.MAX_EVALUATIONS
                break
            polls = np.concatenate([x + mesh * basis, x - mesh * basis])
            polls = np.array([p for p in polls if space.contains(p)])
            it += 1
            if len(polls):
                vals = evaluate(polls)
                k = int(np.argmin(vals))
                if vals[k] < fx:
                    x, fx = polls[k].copy(), float(vals[k])
                    mesh = min(mesh * cfg.mesh_expansion, 1.0)
                    trace.append(TraceRow(it, fx, float(np.mean(vals)), evaluate.count))
                    continue
            mesh *= cfg.mesh_contraction
            trace.append(TraceRow(it, fx, fx, evaluate.count))
    finally:
        if _evaluator is None:
            evaluate.close()
    return OptResult(x, fx, evaluate.count, it, trace, reason, {"mesh": mesh})


def hybrid_optimize(objective, space: SearchSpace, ga_cfg: GaConfig, ps_cfg: PsConfig, injected: Sequence = (), workers: int = 1) -> OptResult:
    """GA for the basin, then pattern search from the GA optimum; never worse than the GA stage."""
    evaluate = _Evaluator(objective, space, workers)
    try:
        ga = ga_run(objective, space, ga_cfg, injected, _evaluator=evaluate)
        ps = pattern_search(objective, ga.best_point, space, ps_cfg, start_value=ga.best_value, _evaluator=evaluate)
    finally:
        evaluate.close()
    return OptResult(
        ps.best_point,
        ps.best_value,
        evaluate.count,
        ga.generations,
        ga.trace,
        ps.termination_reason,
        {
            "ga_best_value": ga.best_value,
            "ga_termination": ga.termination_reason.value,
            "ps_iterations": ps.generations,
            "ps_trace": ps.trace,
        },
    )


def write_trace_csv(trace: Sequence[TraceRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["generation", "best", "mean", "evaluations"])
    for row in trace:
        w.writerow([row.generation, repr(row.best), repr(row.mean), row.evaluations])
