import math

import numpy as np
import pytest

from volcal.calibrator import (
    CalibrationError,
    ObjectiveSpec,
    Slice,
    VolSurface,
    bootstrap_calibrate,
    calibrate_constant,
    calibrate_slice,
    evaluate_slice,
    model_prices,
    model_surface,
    objective_mse,
    parameter_jumps,
    surface_from_deltas,
)
from volcal.charfn import HestonParams, MarketContext, ParamSchedule, VGParams
from volcal.implied import Quote, bs_delta, bs_vega, implied_vol_bisection
from volcal.models import get_model
from volcal.optimizer import GaConfig, PsConfig
from volcal.pricer import PricerConfig

CTX = MarketContext(100.0, 0.01)
HESTON = get_model("heston")
TRUE = HestonParams(2.0, 0.04, 0.35, -0.6, 0.05)
BOUNDS = {"kappa": (0.5, 5.0), "theta": (0.01, 0.2), "sigma": (0.1, 1.0), "rho": (-0.95, 0.0), "v0": (0.01, 0.2)}
FAST_GA = GaConfig(population_size=16, max_generations=25, max_stall_generations=6, fitness_tolerance=1e-9, seed=2)
FAST_PS = PsConfig(mesh_tolerance=1e-6, max_iterations=150)


def synthetic_slice(sched, t, zs=(-1.5, -0.75, 0.0, 0.75, 1.5), model=HESTON):
    fwd = CTX.forward(t)
    ks = fwd * np.exp(np.asarray(zs) * 0.22 * math.sqrt(t))
    prices, put = model_prices(model, sched, CTX, t, ks, PricerConfig())
    vols = implied_vol_bisection(prices, CTX, ks, t, np.where(put, "put", "call"))
    return Slice(t, tuple(Quote(t, "strike", float(k), float(v)) for k, v in zip(ks, vols)))


@pytest.fixture(scope="module")
def one_slice_surface():
    return VolSurface(CTX, (synthetic_slice(ParamSchedule.constant(TRUE), 0.5),))


def test_surface_validation():
    q = Quote(0.5, "strike", 100.0, 0.2)
    with pytest.raises(ValueError):
        VolSurface(CTX, ())
    with pytest.raises(ValueError):
        VolSurface(CTX, (Slice(1.0, (Quote(1.0, "strike", 100.0, 0.2),)), Slice(0.5, (q,))))
    with pytest.raises(ValueError):
        VolSurface(CTX, (Slice(1.0, (q,)),))
    s = VolSurface.from_quotes(CTX, [Quote(1.0, "atm", math.nan, 0.2), q])
    assert s.maturities == (0.5, 1.0) and s.quoting == "delta"


def test_objective_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec(target="prob")
    with pytest.raises(ValueError):
        ObjectiveSpec(weighting="custom")
    with pytest.raises(ValueError):
        ObjectiveSpec(weighting="custom", weights=((1.0, -1.0),))


def test_delta_conversion_roundtrip():
    raw = VolSurface(
        CTX,
        (Slice(0.5, (Quote(0.5, "delta_call", 0.25, 0.19), Quote(0.5, "atm", math.nan, 0.2), Quote(0.5, "delta_call", 0.5, 0.21))),),
    )
    conv = surface_from_deltas(raw)
    assert conv.quoting == "strike"
    q25, atm, q50 = conv.slices[0].quotes
    assert bs_delta(CTX, q25.strike, 0.5, 0.19) == pytest.approx(0.25, abs=1e-12)
    assert atm.strike == pytest.approx(CTX.forward(0.5), rel=1e-14)
    assert q50.strike == pytest.approx(100 * math.exp((0.01 + 0.5 * 0.21**2) * 0.5), rel=1e-13)
    assert q25.origin == ("delta_call", 0.25)
    assert surface_from_deltas(conv) == conv


def test_objective_zero_at_truth_and_arithmetic(one_slice_surface):
    sl = one_slice_surface.slices[0]
    sched = ParamSchedule.constant(TRUE)
    assert objective_mse(sched, sl, ObjectiveSpec(), PricerConfig(), HESTON, CTX) < 1e-9
    bumped = Slice(sl.maturity, (Quote(sl.maturity, "strike", sl.quotes[2].strike, sl.quotes[2].vol + 0.01),))
    assert objective_mse(sched, bumped, ObjectiveSpec(), PricerConfig(), HESTON, CTX) == pytest.approx(1e-4, rel=1e-5)


def test_vega_weighting_against_direct_sums(one_slice_surface):
    sl = one_slice_surface.slices[0]
    other = ParamSchedule.constant(HestonParams(1.0, 0.06, 0.3, -0.3, 0.04))
    fit = evaluate_slice(other, sl, ObjectiveSpec(), PricerConfig(), HESTON, CTX)
    plain = np.sum((sl.vols() - fit.fitted_vols) ** 2)
    w = bs_vega(CTX, sl.strikes(), sl.maturity, sl.vols()) ** 2
    vega = objective_mse(other, sl, ObjectiveSpec(weighting="vega_squared"), PricerConfig(), HESTON, CTX)
    assert fit.value == pytest.approx(plain, rel=1e-12)
    assert vega == pytest.approx(np.sum(w * (sl.vols() - fit.fitted_vols) ** 2), rel=1e-12)
    custom = ObjectiveSpec(weighting="custom", weights=((1, 2, 3, 4, 5),))
    direct = np.sum(np.arange(1, 6) * (sl.vols() - fit.fitted_vols) ** 2)
    assert objective_mse(other, sl, custom, PricerConfig(), HESTON, CTX) == pytest.approx(direct, rel=1e-12)
    price = objective_mse(other, sl, ObjectiveSpec(target="prices"), PricerConfig(), HESTON, CTX)
    assert price > 0


def test_uninvertible_quotes_are_penalized():
    t = 0.5
    sl = Slice(t, (Quote(t, "strike", 100.0, 0.2), Quote(t, "strike", 1e5, 0.3)))
    fit = evaluate_slice(ParamSchedule.constant(TRUE), sl, ObjectiveSpec(), PricerConfig(), HESTON, CTX)
    assert fit.flagged.tolist() == [False, True]
    genuine = (0.2 - fit.fitted_vols[0]) ** 2
    r_max = max(abs(0.2 - fit.fitted_vols[0]), 0.3)
    assert fit.value == pytest.approx(genuine + 10 * r_max**2, rel=1e-12)


@pytest.fixture(scope="module")
def first_fit(one_slice_surface):
    return calibrate_slice(0, one_slice_surface, None, ObjectiveSpec(), FAST_GA, FAST_PS, BOUNDS)


def test_calibrate_first_slice(first_fit):
    seg, res = first_fit
    assert res.best_value <= 1e-6
    assert res.best_value <= res.details["ga_best_value"]
    assert isinstance(seg, HestonParams)


def test_injected_truth_is_never_beaten_by_worse(one_slice_surface):
    sl = one_slice_surface.slices[0]
    at_truth = objective_mse(ParamSchedule.constant(TRUE), sl, ObjectiveSpec(), PricerConfig(), HESTON, CTX)
    ga = GaConfig(population_size=8, max_generations=2, max_stall_generations=2)
    _, res = calibrate_slice(0, one_slice_surface, None, ObjectiveSpec(), ga, PsConfig(max_iterations=5), BOUNDS, warm_segment=TRUE)
    assert res.best_value <= at_truth


def test_single_quote_slice_terminates():
    t = 0.5
    s = VolSurface(CTX, (Slice(t, (Quote(t, "strike", 100.0, 0.2),)),))
    ga = GaConfig(population_size=8, max_generations=5, max_stall_generations=3)
    seg, res = calibrate_slice(0, s, None, ObjectiveSpec(), ga, PsConfig(max_iterations=20), BOUNDS)
    assert res.best_value < 1e-4


@pytest.fixture(scope="module")
def two_slice():
    later = HestonParams(1.2, 0.07, 0.5, -0.4, TRUE.v0)
    sched = ParamSchedule((0.25,), (TRUE, later))
    s0 = synthetic_slice(ParamSchedule.constant(TRUE), 0.25)
    s1 = synthetic_slice(sched, 0.75)
    surface = VolSurface(CTX, (s0, s1))
    return surface, bootstrap_calibrate(surface, ObjectiveSpec(), FAST_GA, FAST_PS, BOUNDS)


def test_bootstrap_structure_and_locality(two_slice):
    surface, res = two_slice
    assert res.schedule.breakpoints == (0.25,)
    assert len(res.per_slice_objective) == 2 and [len(v) for v in res.fitted_vols] == [5, 5]
    # v0 is frozen after the first slice
    assert res.schedule.segments[1].v0 == res.schedule.segments[0].v0
    # re-fitting slice 1 leaves segment 0 untouched
    prior = ParamSchedule((), (res.schedule.segments[0],))
    before = res.schedule.segments[0]
    calibrate_slice(1, surface, prior.segments, ObjectiveSpec(), FAST_GA, FAST_PS, BOUNDS)
    assert prior.segments[0] == before
    assert len(res.optimizer_diagnostics) == 2 and "trace" in res.optimizer_diagnostics[0]


def test_single_maturity_bootstrap_equals_slice_fit(one_slice_surface, first_fit):
    seg, res = first_fit
    boot = bootstrap_calibrate(one_slice_surface, ObjectiveSpec(), FAST_GA, FAST_PS, BOUNDS)
    assert boot.schedule.segments[0] == seg
    assert boot.per_slice_objective[0] == pytest.approx(res.best_value, rel=1e-12)


def test_model_surface_reproduces_stored_residuals(two_slice):
    surface, res = two_slice
    fitted, resid = model_surface(res, surface)
    for a, b in zip(resid, res.residuals):
        assert np.max(np.abs(a - b)) <= 1e-12
    for k, sl in enumerate(surface.slices):
        assert np.allclose(sl.vols() - fitted[k], resid[k], atol=1e-15)


def test_parameter_jumps(two_slice):
    _, res = two_slice
    jumps = res.parameter_jumps()
    a, b = res.schedule.segments
    assert jumps[0]["kappa"] == pytest.approx(b.kappa - a.kappa)
    assert jumps[0]["v0"] == 0.0


def test_failures_keep_partial_results(two_slice):
    surface, _ = two_slice
    bad = {**BOUNDS, "kappa": (0.5, 0.6), "theta": (0.01, 0.02), "sigma": (0.9, 1.0)}
    with pytest.raises(CalibrationError) as info:
        bootstrap_calibrate(surface, ObjectiveSpec(), FAST_GA, FAST_PS, bad)
    assert info.value.partial is not None


def test_constant_fit_and_vg_model():
    vg = VGParams(0.2, 0.3, -0.15)
    s = VolSurface(CTX, (synthetic_slice(ParamSchedule.constant(vg), 0.5, model=get_model("vg")),))
    res = calibrate_constant(s, ObjectiveSpec(), FAST_GA, FAST_PS, model="vg")
    assert res.schedule.breakpoints == () and res.model == "vg"
    assert res.total_objective < 1e-5
    assert parameter_jumps(get_model("vg"), res.schedule) == []
