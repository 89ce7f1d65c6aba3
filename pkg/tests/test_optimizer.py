import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volcal.models import get_model
from volcal.optimizer import (
    GaConfig,
    InfeasibleSpaceError,
    MutationState,
    PsConfig,
    SearchSpace,
    Termination,
    crossover_linear,
    ga_run,
    ga_step,
    hybrid_optimize,
    init_population,
    mutate_adaptive,
    pattern_search,
    write_trace_csv,
)

HESTON = get_model("heston")
LO = np.array([b[0] for b in HESTON.default_bounds.values()])
HI = np.array([b[1] for b in HESTON.default_bounds.values()])


def feller(x):
    return HESTON.feasible_values(dict(zip(HESTON.param_names, x)))


FELLER = SearchSpace(LO, HI, feller, HESTON.param_names)


def sphere(x):
    return float(np.sum((np.asarray(x) - 0.3) ** 2))


BOX = SearchSpace(-np.ones(3), np.ones(3))


def feasible_point(rng):
    while True:
        x = rng.uniform(LO, HI)
        if feller(x):
            return x


def test_space_validation():
    with pytest.raises(ValueError):
        SearchSpace(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(InfeasibleSpaceError):
        SearchSpace(np.zeros(2), np.ones(2), lambda x: False)
    assert FELLER.dim == 5 and FELLER.contains(np.array([2.0, 0.04, 0.3, -0.5, 0.04]))
    assert not FELLER.contains(np.array([0.2, 0.01, 2.0, -0.5, 0.04]))


def test_config_validation():
    with pytest.raises(ValueError):
        GaConfig(population_size=1)
    with pytest.raises(ValueError):
        GaConfig(elite_count=50)
    with pytest.raises(ValueError):
        PsConfig(mesh_contraction=1.0)
    with pytest.raises(ValueError):
        PsConfig(complete_polling=False)


def test_init_population_injects_then_samples():
    good = np.array([2.0, 0.04, 0.3, -0.5, 0.04])
    bad = np.array([0.2, 0.01, 2.0, -0.5, 0.04])
    cfg = GaConfig(population_size=20, seed=4)
    with pytest.warns(UserWarning):
        pop = init_population(FELLER, cfg, [good, bad])
    assert pop.shape == (20, 5)
    assert np.array_equal(pop[0], good)
    assert all(FELLER.contains(x) for x in pop)
    assert np.array_equal(init_population(FELLER, cfg, [good]), init_population(FELLER, cfg, [good]))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.0, 1.0))
def test_convex_children_are_feller_feasible(seed, lam):
    rng = np.random.default_rng(seed)
    a, b = feasible_point(rng), feasible_point(rng)
    assert FELLER.contains(crossover_linear(a, b, rng, FELLER, lam=lam))
    assert FELLER.contains(crossover_linear(a, b, rng, FELLER))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-6, 1.0))
def test_mutants_are_feasible(seed, scale):
    rng = np.random.default_rng(seed)
    x = feasible_point(rng)
    assert FELLER.contains(mutate_adaptive(x, FELLER, MutationState(scale), rng))


def test_extrapolation_moves_away_from_weaker_parent():
    rng = np.random.default_rng(0)
    a, b = np.array([0.2, 0.2, 0.2]), np.array([0.0, 0.0, 0.0])
    child = crossover_linear(a, b, rng, BOX, extrapolation_probability=1.0, extrapolation_distance=0.5)
    assert np.allclose(child, [0.3, 0.3, 0.3])


def test_mutation_state_adapts_within_limits():
    s = MutationState(0.1)
    s.update(True)
    assert s.scale == pytest.approx(0.2)
    for _ in range(60):
        s.update(False)
    assert s.scale == s.min_scale
    for _ in range(60):
        s.update(True)
    assert s.scale == s.max_scale


def test_ga_step_keeps_elites_and_size():
    rng = np.random.default_rng(1)
    cfg = GaConfig(population_size=10, elite_count=3)
    pop = rng.uniform(-1, 1, (10, 3))
    fit = np.array([sphere(x) for x in pop])
    nxt = ga_step(pop, fit, cfg, BOX, rng)
    assert nxt.shape == pop.shape
    assert np.array_equal(nxt[:3], pop[np.argsort(fit)[:3]])


def test_ga_trace_is_monotone_and_converges():
    res = ga_run(sphere, BOX, GaConfig(population_size=30, max_generations=80, seed=3))
    best = [r.best for r in res.trace]
    assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
    assert res.best_value < 1e-3
    assert res.termination_reason in (Termination.MAX_GENERATIONS, Termination.STALL)


def test_ga_termination_reasons():
    r = ga_run(lambda x: 1.0, BOX, GaConfig(population_size=10, max_generations=100, max_stall_generations=5))
    assert r.termination_reason is Termination.STALL and r.generations == 5
    r = ga_run(sphere, BOX, GaConfig(population_size=10, fitness_limit=10.0))
    assert r.termination_reason is Termination.FITNESS_LIMIT and r.generations == 0
    r = ga_run(sphere, BOX, GaConfig(population_size=10, max_generations=3, max_stall_generations=50))
    assert r.termination_reason is Termination.MAX_GENERATIONS and r.generations == 3


def test_objective_never_sees_infeasible_points():
    seen = []

    def obj(x):
        seen.append(x.copy())
        return sphere(x[:3])

    hybrid_optimize(obj, FELLER, GaConfig(population_size=12, max_generations=10), PsConfig(max_iterations=50))
    assert all(FELLER.contains(x) for x in seen)


def test_pattern_search_refines_quadratic():
    res = pattern_search(sphere, np.array([0.9, -0.9, 0.0]), BOX, PsConfig(mesh_tolerance=1e-8))
    assert res.best_value < 1e-12
    assert res.termination_reason is Termination.MESH
    vals = [r.best for r in res.trace]
    assert all(b1 <= b0 for b0, b1 in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        pattern_search(sphere, np.array([2.0, 0.0, 0.0]), BOX, PsConfig())


def test_pattern_search_budget_limits():
    r = pattern_search(sphere, np.zeros(3) + 0.9, BOX, PsConfig(max_iterations=3, mesh_tolerance=1e-12))
    assert r.termination_reason is Termination.MAX_ITERATIONS and r.generations == 3
    r = pattern_search(sphere, np.zeros(3) + 0.9, BOX, PsConfig(max_evaluations=12, mesh_tolerance=1e-12))
    assert r.termination_reason is Termination.MAX_EVALUATIONS


def rastrigin(x):
    x = np.asarray(x)
    return float(10 * len(x) + np.sum(x * x - 10 * np.cos(2 * math.pi * x)))


def test_hybrid_not_worse_than_ga_and_deterministic_across_workers():
    space = SearchSpace(-5.12 * np.ones(3), 5.12 * np.ones(3))
    cfg = GaConfig(population_size=20, max_generations=30, seed=9)
    a = hybrid_optimize(rastrigin, space, cfg, PsConfig())
    b = hybrid_optimize(rastrigin, space, cfg, PsConfig(), workers=4)
    assert a.best_value <= a.details["ga_best_value"]
    assert np.array_equal(a.best_point, b.best_point) and a.evaluations == b.evaluations


def test_non_finite_objective_values_rank_last():
    res = ga_run(lambda x: math.nan if x[0] > 0 else sphere(x), BOX, GaConfig(population_size=20, max_generations=20))
    assert math.isfinite(res.best_value) and res.best_point[0] <= 0


def test_trace_csv():
    res = ga_run(sphere, BOX, GaConfig(population_size=10, max_generations=2))
    buf = io.StringIO()
    write_trace_csv(res.trace, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "generation,best,mean,evaluations"
    assert len(lines) == 4
    assert float(lines[-1].split(",")[1]) == res.trace[-1].best
