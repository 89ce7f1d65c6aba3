"""Model registry: parameter layouts, default bounds and characteristic-function factories."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

from volcal.charfn import (
    BatesParams,
    HestonParams,
    JumpParams,
    ParamSchedule,
    VGParams,
    bates_cf_piecewise,
    heston_cf_piecewise,
    heston_moment_finite,
    split_bates,
    vg_cf_piecewise,
)

HESTON_BOUNDS = {
    "kappa": (0.1, 20.0),
    "theta": (1e-4, 1.0),
    "sigma": (0.01, 3.0),
    "rho": (-0.99, 0.99),
    "v0": (1e-4, 1.0),
}
JUMP_BOUNDS = {"lambda": (0.0, 5.0), "mu_j": (-0.5, 0.5), "sigma_j": (0.0, 0.5)}
VG_BOUNDS = {"sigma": (0.01, 1.0), "nu": (0.01, 1.0), "drift": (-1.0, 1.0)}


@dataclass(frozen=True)
class Model:
    name: str
    param_names: tuple[str, ...]
    default_bounds: dict

    @property
    def has_v0(self) -> bool:
        return "v0" in self.param_names

    def free_names(self, slice_index: int) -> tuple[str, ...]:
        # v0 is an initial condition: free at the first slice only
        if slice_index > 0 and self.has_v0:
            return tuple(n for n in self.param_names if n != "v0")
        return self.param_names

    def segment(self, values: dict):
        if self.name == "heston":
            return HestonParams(*(values[n] for n in self.param_names))
        if self.name == "bates":
            h = HestonParams(*(values[n] for n in HESTON_BOUNDS))
            return BatesParams(h, JumpParams(values["lambda"], values["mu_j"], values["sigma_j"]))
        return VGParams(values["sigma"], values["nu"], values["drift"])

    def values(self, seg) -> dict:
        if self.name == "heston":
            return {n: float(getattr(seg, n)) for n in self.param_names}
        if self.name == "bates":
            out = {n: float(getattr(seg.heston, n)) for n in HESTON_BOUNDS}
            out.update(_jump_values(seg.jumps))
            return out
        return {"sigma": seg.sigma, "nu": seg.nu, "drift": seg.drift}

    def feasible_values(self, v: dict, alpha: float = 0.75) -> bool:
        """Strict Feller condition (Heston, Bates) or finite ``alpha + 1`` moment (VG)."""
        if self.name in ("heston", "bates"):
            return 2.0 * v["kappa"] * v["theta"] - v["sigma"] ** 2 > 0
        base = lambda a: 1.0 - v["drift"] * v["nu"] * a - 0.5 * v["sigma"] ** 2 * v["nu"] * a * a
        return v["sigma"] > 0 and v["nu"] > 0 and base(1.0) > 0 and base(alpha + 1.0) > 0

    def moment_finite(self, schedule: ParamSchedule, t: float, omega: float) -> bool:
        """Whether ``E[X_t^omega]`` is finite; lognormal jumps add no restriction."""
        if self.name == "heston":
            return heston_moment_finite(schedule, t, omega)
        if self.name == "bates":
            return heston_moment_finite(split_bates(schedule)[0], t, omega)
        return all(
            1.0 - p.drift * p.nu * omega - 0.5 * p.sigma**2 * p.nu * omega * omega > 0 for p, _, _ in schedule.intervals(t)
        )

    def cf(self, schedule: ParamSchedule, ctx, t: float, truncate: bool = True):
        if self.name == "heston":
            return partial(heston_cf_piecewise, schedule, ctx, t, truncate=truncate)
        if self.name == "bates":
            sh, sj = split_bates(schedule)
            return partial(bates_cf_piecewise, sh, sj, ctx, t, truncate=truncate)
        return partial(vg_cf_piecewise, schedule, ctx, t, truncate=truncate)


def _jump_values(j: JumpParams) -> dict:
    return {"lambda": float(j.lam), "mu_j": float(j.mu_j), "sigma_j": float(j.sigma_j)}


MODELS = {
    "heston": Model("heston", tuple(HESTON_BOUNDS), HESTON_BOUNDS),
    "bates": Model("bates", tuple(HESTON_BOUNDS) + tuple(JUMP_BOUNDS), {**HESTON_BOUNDS, **JUMP_BOUNDS}),
    "vg": Model("vg", tuple(VG_BOUNDS), VG_BOUNDS),
}


def get_model(name: str) -> Model:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODELS)}") from None
