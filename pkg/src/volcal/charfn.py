"""Characteristic functions of the log-price.

All functions are vectorized over ``u`` (scalar or ndarray, real or complex)
and return ``E[exp(i u ln X_t)]`` with the same shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Generic, Sequence, TypeVar

import numpy as np

# exponents with a larger real part are treated as overflow
MAX_EXPONENT = 700.0


class ParameterError(ValueError):
    """A parameter set violates its model invariants."""


class CharFnDomainError(ArithmeticError):
    """Characteristic function cannot be evaluated at the requested point."""

    def __init__(self, message, u=None, t=None):
        super().__init__(message)
        self.u = u
        self.t = t


@dataclass(frozen=True)
class MarketContext:
    spot: float
    rate: float = 0.0

    def __post_init__(self):
        if not (self.spot > 0 and math.isfinite(self.spot)):
            raise ParameterError(f"spot must be positive, got {self.spot}")
        if not math.isfinite(self.rate):
            raise ParameterError(f"rate must be finite, got {self.rate}")

    def forward(self, t):
        return self.spot * math.exp(self.rate * t)


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    sigma: float
    rho: float
    v0: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be > 0, got {self.kappa}")
        if not self.theta > 0:
            raise ParameterError(f"theta must be > 0, got {self.theta}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not -1 < self.rho < 1:
            raise ParameterError(f"rho must lie in (-1, 1), got {self.rho}")
        if not self.v0 >= 0:
            raise ParameterError(f"v0 must be >= 0, got {self.v0}")

    def feller_satisfied(self) -> bool:
        return 2.0 * self.kappa * self.theta > self.sigma**2


@dataclass(frozen=True)
class JumpParams:
    lam: float
    mu_j: float
    sigma_j: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"jump intensity must be >= 0, got {self.lam}")
        if not self.mu_j > -1:
            raise ParameterError(f"mu_j must be > -1, got {self.mu_j}")
        if not self.sigma_j >= 0:
            raise ParameterError(f"sigma_j must be >= 0, got {self.sigma_j}")


@dataclass(frozen=True)
class BatesParams:
    """Diffusion and jump parameters of one Bates segment."""

    heston: HestonParams
    jumps: JumpParams


@dataclass(frozen=True)
class VGParams:
    sigma: float
    nu: float
    drift: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.nu > 0:
            raise ParameterError(f"nu must be > 0, got {self.nu}")
        if not self.moment_base(1.0) > 0:
            raise ParameterError(
                "1 - drift*nu - sigma^2*nu/2 must be > 0 for a real drift correction"
            )

    def moment_base(self, a: float) -> float:
        """``1 - drift*nu*a - sigma^2*nu*a^2/2``; positive iff ``E[X_t^a]`` is finite."""
        return 1.0 - self.drift * self.nu * a - 0.5 * self.sigma**2 * self.nu * a * a

    @property
    def omega(self) -> float:
        return math.log(self.moment_base(1.0)) / self.nu


P = TypeVar("P")


@dataclass(frozen=True)
class ParamSchedule(Generic[P]):
    """Piecewise-constant parameters.

    Segment ``k`` applies on ``[t_k, t_{k+1}]`` with ``t_0 = 0``; the last
    segment extends to any maturity.
    """

    breakpoints: tuple[float, ...]
    segments: tuple[P, ...]

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "segments", tuple(self.segments))
        if len(self.segments) != len(self.breakpoints) + 1:
            raise ParameterError(
                f"{len(self.segments)} segments for {len(self.breakpoints)} breakpoints"
            )
        prev = 0.0
        for b in self.breakpoints:
            if not b > prev:
                raise ParameterError(f"breakpoints must be strictly increasing and > 0: {self.breakpoints}")
            prev = b
        first = self.segments[0]
        if isinstance(first, (HestonParams, BatesParams)):
            v0 = _v0_of(first)
            if any(_v0_of(s) != v0 for s in self.segments[1:]):
                warnings.warn(
                    "v0 of later segments is ignored; only the first segment's v0 is used",
                    stacklevel=3,
                )

    @classmethod
    def constant(cls, params: P) -> "ParamSchedule[P]":
        return cls((), (params,))

    def intervals(self, t: float) -> list[tuple[P, float, float]]:
        """``(segment, start, end)`` triples covering ``[0, t]``, truncated at ``t``."""
        if not t > 0:
            raise ParameterError(f"maturity must be > 0, got {t}")
        edges = (0.0,) + self.breakpoints
        out = []
        for k, seg in enumerate(self.segments):
            start = edges[k]
            if start >= t:
                break
            end = self.breakpoints[k] if k < len(self.breakpoints) else t
            out.append((seg, start, min(end, t)))
        return out

    def map(self, fn) -> "ParamSchedule":
        return ParamSchedule(self.breakpoints, tuple(fn(s) for s in self.segments))


def _v0_of(seg) -> float:
    return seg.heston.v0 if isinstance(seg, BatesParams) else seg.v0


@dataclass
class HestonCfState:
    """Running ``C`` and ``D`` of the piecewise Heston recursion."""

    c: np.ndarray | complex = 0j
    d_acc: np.ndarray | complex = 0j


def _as_complex(u):
    return np.asarray(u, dtype=np.complex128)


def _clog1p(w):
    """``log(1 + w)`` for complex ``w``, accurate for small ``|w|`` (numpy's is not)."""
    x, y = w.real, w.imag
    return 0.5 * np.log1p(x * (2.0 + x) + y * y) + 1j * np.arctan2(y, 1.0 + x)


def _finish(exponent, u, t, truncate):
    """``exp(exponent)`` with the overflow policy applied."""
    bad = exponent.real > MAX_EXPONENT
    if np.any(bad):
        if not truncate:
            uu = np.atleast_1d(u)[np.atleast_1d(bad)][0] if np.ndim(u) else u
            raise CharFnDomainError(
                f"exponent overflow at u={complex(uu)}, t={t}", u=uu, t=t
            )
        exponent = np.where(bad, -np.inf, exponent)
    if np.any(np.isnan(exponent)):
        raise CharFnDomainError(f"characteristic function undefined at t={t}", t=t)
    out = np.exp(exponent)
    return out if np.ndim(out) else complex(out)


# ---------------------------------------------------------------- Heston


def heston_dg(p: HestonParams, u):
    """``d`` (principal root) and ``g2 = (beta - d)/(beta + d)`` with ``beta = kappa - i rho sigma u``."""
    u = _as_complex(u)
    beta = p.kappa - 1j * p.rho * p.sigma * u
    d = np.sqrt(beta * beta + p.sigma**2 * (1j * u + u * u))
    den = beta + d
    if np.any(den == 0):
        raise CharFnDomainError("beta + d vanishes", u=u)
    g2 = (beta - d) / den
    if np.ndim(u) == 0:
        return complex(d), complex(g2)
    return d, g2


def heston_cf_step(p: HestonParams, u, tau: float, rate: float, state: HestonCfState) -> HestonCfState:
    """Advance ``(C, D)`` over a segment of length ``tau`` with initial values ``state``.

    Uses ``beta - d = -sigma^2 (iu + u^2) / (beta + d)`` so the expressions stay
    accurate as ``sigma -> 0``.
    """
    u = _as_complex(u)
    s2 = p.sigma**2
    q = 1j * u + u * u
    beta = p.kappa - 1j * p.rho * p.sigma * u
    d = np.sqrt(beta * beta + s2 * q)
    c0 = np.asarray(state.c, dtype=np.complex128)
    d0 = np.asarray(state.d_acc, dtype=np.complex128)
    # q == 0 (u = 0 or u = -i) is a fixed point: D stays 0, only the drift accrues
    trivial = q == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(trivial, 1.0, beta + d)
        d_minus = -q / s
        den = s - s2 * d0
        h = (d_minus - d0) / den
        g = s2 * h
        e = np.exp(-d * tau)
        one_minus_ge = 1.0 - g * e
        d_new = d_minus - 2.0 * d * h * e / one_minus_ge
        log_ratio = _clog1p(g * (1.0 - e) / (1.0 - g))
        c_new = c0 + 1j * u * rate * tau + p.kappa * p.theta * (d_minus * tau - 2.0 / s2 * log_ratio)
    c_new = np.where(trivial, c0 + 1j * u * rate * tau, c_new)
    d_new = np.where(trivial, d0, d_new)
    return HestonCfState(c_new, d_new)


def heston_cf_stable(p: HestonParams, ctx: MarketContext, t: float, u, *, truncate=False):
    """Heston characteristic function in the stable (``g2``, ``e^{-dt}``) form."""
    if not t > 0:
        raise ParameterError(f"maturity must be > 0, got {t}")
    u = _as_complex(u)
    st = heston_cf_step(p, u, t, ctx.rate, HestonCfState())
    return _finish(st.c + st.d_acc * p.v0 + 1j * u * math.log(ctx.spot), u, t, truncate)


def heston_cf_original(p: HestonParams, ctx: MarketContext, t: float, u, *, truncate=False):
    """Heston's original form with ``g1`` and ``e^{+dt}``.

    Suffers principal-branch discontinuities for long maturities; kept for
    cross-validation only.
    """
    if not t > 0:
        raise ParameterError(f"maturity must be > 0, got {t}")
    u = _as_complex(u)
    s2 = p.sigma**2
    q = 1j * u + u * u
    beta = p.kappa - 1j * p.rho * p.sigma * u
    d = np.sqrt(beta * beta + s2 * q)
    trivial = q == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bp = beta + d
        g1 = bp / np.where(trivial, 1.0, beta - d)
        e = np.exp(d * t)
        c = p.theta * p.kappa / s2 * (bp * t - 2.0 * np.log((1.0 - g1 * e) / (1.0 - g1)))
        dd = bp / s2 * (1.0 - e) / (1.0 - g1 * e)
    expo = np.where(trivial, 0.0, c + dd * p.v0) + 1j * u * (math.log(ctx.spot) + ctx.rate * t)
    return _finish(expo, u, t, truncate)


def _heston_log_piecewise(sched: ParamSchedule[HestonParams], rate: float, t: float, u):
    # time-to-maturity runs backwards: start at the segment ending at t with
    # zero terminal values, then feed (C, D) into each earlier segment
    state = HestonCfState()
    for seg, start, end in reversed(sched.intervals(t)):
        state = heston_cf_step(seg, u, end - start, rate, state)
    return state.c + state.d_acc * sched.segments[0].v0


def heston_cf_piecewise(sched: ParamSchedule[HestonParams], ctx: MarketContext, t: float, u, *, truncate=False):
    """Heston characteristic function with piecewise-constant parameters."""
    u = _as_complex(u)
    expo = _heston_log_piecewise(sched, ctx.rate, t, u) + 1j * u * math.log(ctx.spot)
    return _finish(expo, u, t, truncate)


def heston_explosion_time(p: HestonParams, omega: float, d0: float = 0.0) -> float:
    """Time to maturity at which ``E[X^omega]`` becomes infinite, ``inf`` if never.

    Solves the real Riccati equation ``D' = a - b D + c D^2`` for ``D`` at
    ``u = -i omega`` (``a = omega(omega-1)/2``, ``b = kappa - rho sigma omega``,
    ``c = sigma^2/2``) started from ``d0``. Valid for ``omega > 1``.
    """
    a = 0.5 * omega * (omega - 1.0)
    b = p.kappa - p.rho * p.sigma * omega
    c = 0.5 * p.sigma**2
    disc = b * b - 4.0 * a * c
    if disc < 0:
        r = math.sqrt(-disc)
        return 2.0 / r * (0.5 * math.pi - math.atan((2.0 * c * d0 - b) / r))
    root = math.sqrt(disc)
    hi, lo = (b + root) / (2.0 * c), (b - root) / (2.0 * c)
    if d0 <= hi:
        # D settles on the lower root
        return math.inf
    if root == 0:
        return 1.0 / (c * (d0 - hi))
    return math.log((d0 - lo) / (d0 - hi)) / root


def heston_moment_finite(sched: ParamSchedule[HestonParams], t: float, omega: float) -> bool:
    """Whether ``E[X_t^omega]`` is finite under a piecewise schedule (``omega > 1``)."""
    u = -1j * omega
    state = HestonCfState()
    for seg, start, end in reversed(sched.intervals(t)):
        tau = end - start
        if tau >= heston_explosion_time(seg, omega, float(np.real(state.d_acc))):
            return False
        state = heston_cf_step(seg, u, tau, 0.0, state)
    return True


# ---------------------------------------------------------------- Bates


def _jump_exponent(j: JumpParams, tau: float, u):
    iu = 1j * u
    jump_cf = np.exp(iu * math.log1p(j.mu_j) + 0.5 * j.sigma_j**2 * iu * (iu - 1.0))
    return -j.lam * j.mu_j * iu * tau + j.lam * tau * (jump_cf - 1.0)


def bates_jump_cf(j: JumpParams, t: float, u, *, truncate=False):
    """Compensated compound-Poisson factor with lognormal jumps."""
    if not t >= 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    u = _as_complex(u)
    return _finish(_jump_exponent(j, t, u), u, t, truncate)


def bates_cf(p: HestonParams, j: JumpParams, ctx: MarketContext, t: float, u, *, truncate=False):
    u = _as_complex(u)
    st = heston_cf_step(p, u, t, ctx.rate, HestonCfState())
    expo = st.c + st.d_acc * p.v0 + 1j * u * math.log(ctx.spot) + _jump_exponent(j, t, u)
    return _finish(expo, u, t, truncate)


def _jump_log_piecewise(sched: ParamSchedule[JumpParams], t, u):
    return sum(_jump_exponent(j, end - start, u) for j, start, end in sched.intervals(t))


def bates_jump_cf_piecewise(sched: ParamSchedule[JumpParams], t: float, u, *, truncate=False):
    u = _as_complex(u)
    return _finish(_jump_log_piecewise(sched, t, u) + 0j * u, u, t, truncate)


def bates_cf_piecewise(
    sched_h: ParamSchedule[HestonParams],
    sched_j: ParamSchedule[JumpParams],
    ctx: MarketContext,
    t: float,
    u,
    *,
    truncate=False,
):
    if sched_h.breakpoints != sched_j.breakpoints:
        raise ParameterError("diffusion and jump schedules must share breakpoints")
    u = _as_complex(u)
    expo = (
        _heston_log_piecewise(sched_h, ctx.rate, t, u)
        + _jump_log_piecewise(sched_j, t, u)
        + 1j * u * math.log(ctx.spot)
    )
    return _finish(expo, u, t, truncate)


def split_bates(sched: ParamSchedule[BatesParams]):
    return sched.map(lambda s: s.heston), sched.map(lambda s: s.jumps)


# ---------------------------------------------------------------- Variance Gamma


def _vg_log_power(p: VGParams, tau: float, u):
    base = 1.0 - 1j * p.drift * p.nu * u + 0.5 * p.sigma**2 * p.nu * u * u
    if np.any((base.real <= 0) & (base.imag == 0)):
        raise CharFnDomainError("variance-gamma base on the negative real axis", u=u, t=tau)
    return -(tau / p.nu) * np.log(base)


def vg_cf(p: VGParams, ctx: MarketContext, t: float, u, *, truncate=False):
    if not t > 0:
        raise ParameterError(f"maturity must be > 0, got {t}")
    u = _as_complex(u)
    expo = 1j * u * (math.log(ctx.spot) + (ctx.rate + p.omega) * t) + _vg_log_power(p, t, u)
    return _finish(expo, u, t, truncate)


def vg_cf_piecewise(sched: ParamSchedule[VGParams], ctx: MarketContext, t: float, u, *, truncate=False):
    """VG with the drift correction applied per segment, keeping each regime risk-neutral."""
    u = _as_complex(u)
    drift = math.log(ctx.spot) + ctx.rate * t
    expo = np.zeros_like(u)
    for p, start, end in sched.intervals(t):
        drift += p.omega * (end - start)
        expo = expo + _vg_log_power(p, end - start, u)
    return _finish(expo + 1j * u * drift, u, t, truncate)

