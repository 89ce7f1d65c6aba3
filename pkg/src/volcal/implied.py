"""Black-Scholes helpers: prices, vega, delta, bisection implied vol, delta-to-strike."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from volcal.charfn import MarketContext

QUOTE_TYPES = ("delta_call", "strike", "atm")


class BoundsViolationError(ValueError):
    """Price lies outside the no-arbitrage bounds of its option side."""


class NotBracketedError(RuntimeError):
    """No volatility in the search bracket reproduces the price."""


@dataclass(frozen=True)
class Quote:
    """One implied-vol quote.

    ``moneyness`` is a strike for ``"strike"``, a call spot-delta for
    ``"delta_call"`` and ignored for ``"atm"``. ``origin`` keeps the raw
    ``(quote_type, moneyness)`` after a conversion to strike quoting.
    """

    maturity: float
    quote_type: str
    moneyness: float
    vol: float
    origin: tuple | None = None

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError(f"maturity must be > 0, got {self.maturity}")
        if not self.vol > 0:
            raise ValueError(f"vol must be > 0, got {self.vol}")
        if self.quote_type not in QUOTE_TYPES:
            raise ValueError(f"quote_type must be one of {QUOTE_TYPES}, got {self.quote_type!r}")
        if self.quote_type == "delta_call" and not 0 < self.moneyness < 1:
            raise ValueError(f"delta must lie strictly in (0, 1), got {self.moneyness}")
        if self.quote_type == "strike" and not self.moneyness > 0:
            raise ValueError(f"strike must be > 0, got {self.moneyness}")

    @property
    def strike(self) -> float:
        if self.quote_type != "strike":
            raise ValueError("quote is not strike-quoted; convert the surface first")
        return self.moneyness


def _d1(ctx, strike, t, vol):
    sqt = vol * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (np.log(ctx.spot / strike) + (ctx.rate + 0.5 * vol * vol) * t) / sqt, sqt


def _sign(side):
    """+1 for calls, -1 for puts; ``side`` may be a string or an array of strings."""
    side = np.asarray(side)
    if not np.all((side == "call") | (side == "put")):
        raise ValueError(f"side must be 'call' or 'put', got {side}")
    return np.where(side == "put", -1.0, 1.0)


def bs_price(ctx: MarketContext, strike, t, vol, side="call"):
    """Black-Scholes value; ``side`` is ``"call"``, ``"put"`` or an array of those."""
    strike = np.asarray(strike, dtype=float)
    s = _sign(side)
    d1, sqt = _d1(ctx, strike, t, np.asarray(vol, dtype=float))
    df = np.exp(-ctx.rate * np.asarray(t, dtype=float))
    out = s * (ctx.spot * ndtr(s * d1) - strike * df * ndtr(s * (d1 - sqt)))
    return out if np.ndim(out) else float(out)


def bs_vega(ctx: MarketContext, strike, t, vol):
    """Derivative of the Black-Scholes price with respect to volatility (same for calls and puts)."""
    d1, _ = _d1(ctx, np.asarray(strike, dtype=float), t, np.asarray(vol, dtype=float))
    out = ctx.spot * np.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi) * np.sqrt(t)
    return out if np.ndim(out) else float(out)


def bs_delta(ctx: MarketContext, strike, t, vol, side="call"):
    d1, _ = _d1(ctx, np.asarray(strike, dtype=float), t, np.asarray(vol, dtype=float))
    out = ndtr(d1) if side == "call" else ndtr(d1) - 1.0
    return out if np.ndim(out) else float(out)


def price_bounds(ctx: MarketContext, strike, t, side="call"):
    disc_k = np.asarray(strike, dtype=float) * np.exp(-ctx.rate * np.asarray(t, dtype=float))
    put = _sign(side) < 0
    lower = np.maximum(np.where(put, disc_k - ctx.spot, ctx.spot - disc_k), 0.0)
    upper = np.where(put, disc_k, ctx.spot)
    return lower, upper


def implied_vol_bisection(
    price,
    ctx: MarketContext,
    strike,
    t,
    side="call",
    *,
    tol=1e-8,
    bracket=(1e-6, 5.0),
    expanded_upper=10.0,
    max_iter=200,
    errors="raise",
):
    """Black-Scholes implied volatility by bisection, vectorized over quotes.

    Prices at or outside the no-arbitrage bounds, and prices no vol in the
    bracket reproduces, are failures; with ``errors="nan"`` they come back as
    NaN instead of raising.
    """
    scalar = np.ndim(price) == 0 and np.ndim(strike) == 0
    price, strike, side = np.broadcast_arrays(
        np.atleast_1d(np.asarray(price, dtype=float)),
        np.atleast_1d(np.asarray(strike, dtype=float)),
        np.atleast_1d(np.asarray(side)),
    )
    lower, upper = price_bounds(ctx, strike, t, side)
    slack = 1e-12 * ctx.spot
    bad = ~((price >= lower - slack) & (price <= upper + slack))
    if np.any(bad) and errors == "raise":
        k = np.nonzero(bad)[0][0]
        raise BoundsViolationError(
            f"{side[k]} price {price[k]} outside [{lower[k]}, {upper[k]}] at strike {strike[k]}"
        )

    lo = np.full(price.shape, bracket[0])
    hi = np.full(price.shape, bracket[1])
    too_high = bs_price(ctx, strike, t, hi, side) < price
    hi[too_high] = expanded_upper
    unbracketed = (bs_price(ctx, strike, t, hi, side) < price) | (bs_price(ctx, strike, t, lo, side) > price)
    # no time value left: every small vol reproduces the price
    unbracketed |= price <= lower
    unbracketed &= ~bad
    if np.any(unbracketed) and errors == "raise":
        k = np.nonzero(unbracketed)[0][0]
        raise NotBracketedError(f"{side[k]} price {price[k]} not bracketed at strike {strike[k]}")

    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        below = bs_price(ctx, strike, t, mid, side) < price
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    vol = 0.5 * (lo + hi)
    vol[bad | unbracketed] = np.nan
    return float(vol[0]) if scalar else vol


def delta_to_strike(delta, vol, ctx: MarketContext, t):
    """Strike whose Black-Scholes call spot-delta ``N(d1)`` equals ``delta``."""
    delta = np.asarray(delta, dtype=float)
    if np.any((delta <= 0) | (delta >= 1)):
        raise ValueError(f"delta must lie strictly in (0, 1), got {delta}")
    vol = np.asarray(vol, dtype=float)
    out = ctx.spot / np.exp(ndtri(delta) * vol * np.sqrt(t) - (ctx.rate + 0.5 * vol * vol) * t)
    return out if np.ndim(out) else float(out)


def atm_forward_strike(ctx: MarketContext, t) -> float:
    return ctx.spot * math.exp(ctx.rate * t)
