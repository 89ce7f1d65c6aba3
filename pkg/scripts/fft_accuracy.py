"""FFT vs quadrature error as a function of distance to the alpha+1 moment explosion.

    python3 scripts/fft_accuracy.py --cases 600
"""

import argparse
import math

import numpy as np

from volcal.charfn import BatesParams, HestonParams, JumpParams, MarketContext, ParamSchedule, heston_explosion_time
from volcal.models import get_model
from volcal.pricer import PricerConfig, call_price_quadrature, carr_madan_fft, interpolate_price


def draw(rng):
    h = HestonParams(rng.uniform(0.2, 8.0), rng.uniform(0.005, 0.5), rng.uniform(0.05, 1.5), rng.uniform(-0.95, 0.95), rng.uniform(0.005, 0.5))
    if rng.random() < 0.5:
        return "heston", h, h
    j = JumpParams(rng.uniform(0, 3), rng.uniform(-0.3, 0.2), rng.uniform(0, 0.4))
    return "bates", BatesParams(h, j), h


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=600)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = PricerConfig()
    ctx = MarketContext(100.0, 0.02)
    rows = []
    for _ in range(args.cases):
        name, seg, h = draw(rng)
        t = rng.uniform(0.1, 3.0)
        t_star = heston_explosion_time(h, cfg.alpha + 1.0)
        if t >= t_star:
            continue
        k = ctx.forward(t) * math.exp(rng.uniform(-0.6, 0.6) * math.sqrt(t))
        cf = get_model(name).cf(ParamSchedule.constant(seg), ctx, t)
        ref = call_price_quadrature(cf, k, ctx, t)
        if ref <= 1e-3 * ctx.spot:
            continue
        fft = float(interpolate_price(carr_madan_fft(cf, cfg, ctx, t, [k]), k))
        rows.append((t / t_star, abs(fft / ref - 1)))
    r = np.array(rows)
    print("T/T*          cases  max rel err")
    for lo, hi in [(0, 0.5), (0.5, 0.8), (0.8, 0.9), (0.9, 0.95), (0.95, 1.0)]:
        m = (r[:, 0] >= lo) & (r[:, 0] < hi)
        if m.any():
            print(f"[{lo:.2f}, {hi:.2f})  {m.sum():5d}  {r[m, 1].max():.2e}")


if __name__ == "__main__":
    main()
