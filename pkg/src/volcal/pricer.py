"""European vanilla pricing from a log-price characteristic function.

``carr_madan_fft`` is the production pricer; ``call_price_quadrature`` is a
slower, independent reference that inverts the two probabilities directly.
A characteristic function here is any vectorized callable ``u -> phi_T(u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from volcal.charfn import MarketContext

INTERPOLATIONS = ("linear", "cubic", "log_cubic")


class GridError(ValueError):
    """Requested strikes are not covered by the FFT log-strike grid."""


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved {achieved:.3g})")
        self.achieved = achieved


@dataclass(frozen=True)
class PricerConfig:
    alpha: float = 0.75
    eta: float = 0.015
    n: int = 2**16
    interpolation: str = "log_cubic"
    # relative |psi| below which the integrand tail is dropped before the FFT; 0 keeps all N points
    cutoff: float = 1e-15

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.n < 2**10 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 1024, got {self.n}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if not 0 <= self.cutoff < 1:
            raise ValueError(f"cutoff must lie in [0, 1), got {self.cutoff}")

    @property
    def log_strike_step(self) -> float:
        return 2.0 * math.pi / (self.n * self.eta)


@dataclass(frozen=True)
class PriceGrid:
    log_strikes: np.ndarray
    calls: np.ndarray
    maturity: float
    context: MarketContext
    cleanup_count: int = 0
    interpolation: str = "log_cubic"

    @property
    def step(self) -> float:
        return float(self.log_strikes[1] - self.log_strikes[0])

    def call(self, strikes):
        return interpolate_price(self, strikes)

    def put(self, strikes):
        return put_from_call(self.call(strikes), strikes, self.context, self.maturity)


def psi(cf, v, alpha: float, r: float, t: float):
    """Fourier transform of the damped call price ``exp(alpha k) C_T(k)``."""
    v = np.asarray(v, dtype=float)
    denom = alpha * alpha + alpha - v * v + 1j * (2.0 * alpha + 1.0) * v
    return math.exp(-r * t) * cf(v - (alpha + 1.0) * 1j) / denom


def _tail_index(cf, cfg, r, t, stride=64):
    """First index past which ``|psi|`` stays below ``cutoff * max|psi|`` on a coarse scan."""
    coarse = np.arange(0, cfg.n, stride)
    mag = np.abs(psi(cf, coarse * cfg.eta, cfg.alpha, r, t))
    above = np.nonzero(mag >= cfg.cutoff * mag.max())[0]
    return min(cfg.n, (int(above[-1]) + 2) * stride)


@lru_cache(maxsize=32)
def _grid_constants(n, eta, alpha, log_spot):
    """Integration nodes, trapezoid-weighted phase factors, log-strikes and damping."""
    lam = 2.0 * math.pi / (n * eta)
    k0 = log_spot - 0.5 * n * lam
    v = np.arange(n) * eta
    phase = np.exp(-1j * v * k0) * eta
    phase[0] *= 0.5
    ks = k0 + lam * np.arange(n)
    damping = np.exp(-alpha * ks) / math.pi
    for a in (v, phase, ks, damping):
        a.flags.writeable = False
    return v, phase, ks, damping


def carr_madan_fft(cf, cfg: PricerConfig, ctx: MarketContext, t: float, strikes=None) -> PriceGrid:
    """Call prices on the full log-strike grid, centred at ``ln X0``, from one FFT."""
    n = cfg.n
    v, phase, ks, damping = _grid_constants(n, cfg.eta, cfg.alpha, math.log(ctx.spot))
    m = _tail_index(cf, cfg, ctx.rate, t) if cfg.cutoff > 0 else n
    x = np.zeros(n, dtype=np.complex128)
    x[:m] = phase[:m] * psi(cf, v[:m], cfg.alpha, ctx.rate, t)
    calls = damping * np.fft.fft(x).real
    negative = calls < 0
    calls[negative] = 0.0
    grid = PriceGrid(ks, calls, t, ctx, int(negative.sum()), cfg.interpolation)
    if strikes is not None:
        _check_range(grid, np.log(np.asarray(strikes, dtype=float)))
    return grid


def _check_range(grid, logk, margin=1):
    lo = grid.log_strikes[margin]
    hi = grid.log_strikes[-1 - margin]
    if np.any((logk < lo) | (logk > hi)):
        raise GridError(
            f"strikes outside FFT grid range [{math.exp(lo):.6g}, {math.exp(hi):.6g}]"
        )


def _lagrange4(c, i, f):
    """Cubic through nodes i-1, i, i+1, i+2 at fractional offset f from node i."""
    return (
        -f * (f - 1) * (f - 2) / 6 * c[i - 1]
        + (f + 1) * (f - 1) * (f - 2) / 2 * c[i]
        - (f + 1) * f * (f - 2) / 2 * c[i + 1]
        + (f + 1) * f * (f - 1) / 6 * c[i + 2]
    )


def interpolate_price(grid: PriceGrid, strike, method: str | None = None):
    """Call price at ``strike`` by interpolation in log-strike.

    ``"log_cubic"`` interpolates the log of the out-of-the-money price (put
    below the forward, call above), which decays exponentially in the wings,
    and falls back to ``"cubic"`` where the stencil straddles the forward or
    touches a non-positive price.
    """
    method = method or grid.interpolation
    if method not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation {method!r}")
    scalar = np.ndim(strike) == 0
    logk = np.log(np.atleast_1d(np.asarray(strike, dtype=float)))
    _check_range(grid, logk)
    pos = (logk - grid.log_strikes[0]) / grid.step
    i = np.floor(pos).astype(int)
    frac = pos - i
    c = grid.calls
    if method == "linear":
        out = (1.0 - frac) * c[i] + frac * c[i + 1]
    else:
        out = _lagrange4(c, i, frac)
    if method == "log_cubic":
        ctx, t = grid.context, grid.maturity
        log_fwd = math.log(ctx.forward(t))
        lo_k, hi_k = grid.log_strikes[i - 1], grid.log_strikes[i + 2]
        put_side = hi_k < log_fwd
        call_side = lo_k >= log_fwd
        stencil = i[:, None] + np.arange(-1, 3)
        ks = grid.log_strikes[stencil]
        otm = np.where(put_side[:, None], put_from_call(c[stencil], np.exp(ks), ctx, t), c[stencil])
        use = (put_side | call_side) & np.all(otm > 0, axis=1)
        if np.any(use):
            with np.errstate(divide="ignore"):
                lp = np.log(np.where(use[:, None], otm, 1.0))
            v = np.exp(_lagrange4(lp.T, 1, frac))
            strikes = np.exp(logk)
            v = np.where(put_side, v + ctx.spot - strikes * math.exp(-ctx.rate * t), v)
            out = np.where(use, v, out)
    return float(out[0]) if scalar else out


def put_from_call(call, strike, ctx: MarketContext, t: float):
    return call - ctx.spot + np.asarray(strike) * math.exp(-ctx.rate * t)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _composite_gl(f, upper, width):
    panels = max(1, int(math.ceil(upper / width)))
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    vals = f(nodes).reshape(panels, -1)
    return float(((vals * _GL_WEIGHTS).sum(axis=1) * half).sum())


def probabilities(cf_at, strike, ctx: MarketContext, t: float, *, u_max=5000.0, tiny=1e-15, tol=1e-11):
    """``(Pi1, Pi2)``: exercise probabilities under the share and money-market measures."""
    lnk = math.log(strike)
    phi_mi = complex(cf_at(np.asarray(-1j)))

    def f1(u):
        return (np.exp(-1j * u * lnk) * cf_at(u - 1j) / (1j * u * phi_mi)).real

    def f2(u):
        return (np.exp(-1j * u * lnk) * cf_at(u + 0j) / (1j * u)).real

    scan = np.arange(0.5, u_max + 0.5, 0.5)
    env = np.maximum(np.abs(cf_at(scan - 1j) / phi_mi), np.abs(cf_at(scan + 0j))) / scan
    above = np.nonzero(env >= tiny)[0]
    upper = u_max if len(above) == 0 or above[-1] == len(scan) - 1 else float(scan[above[-1]] + 0.5)
    upper = min(max(upper, 1.0), u_max)

    out = []
    for f in (f1, f2):
        width = 1.0
        prev = _composite_gl(f, upper, width)
        for _ in range(4):
            width /= 2
            cur = _composite_gl(f, upper, width)
            err = abs(cur - prev)
            prev = cur
            if err <= tol:
                break
        else:
            raise QuadratureError("probability integral did not converge", err)
        out.append(0.5 + prev / math.pi)
    return out[0], out[1]


def call_price_quadrature(cf_at, strike, ctx: MarketContext, t: float, **kw) -> float:
    """Reference call price ``X0 Pi1 - K exp(-rT) Pi2`` by composite Gauss-Legendre.

    The integrals are truncated where the integrand envelope falls below
    ``tiny`` or at ``u_max``, whichever comes first; panels are halved
    until two successive estimates agree to ``tol``.
    """
    p1, p2 = probabilities(cf_at, strike, ctx, t, **kw)
    return ctx.spot * p1 - strike * math.exp(-ctx.rate * t) * p2
