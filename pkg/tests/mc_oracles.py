"""Monte-Carlo estimates of log-price characteristic functions.

Independent of the closed forms: the variance is sampled exactly on a grid
from its noncentral chi-square transition law, the log-price is then
conditionally Gaussian given the variance path, and jumps / gamma clocks are
drawn directly. Each estimator returns ``(mean, stderr_re, stderr_im)``.
"""

import math

import numpy as np

from volcal.charfn import ParamSchedule, JumpParams


def _accumulate(stats, est):
    stats[0] += est.sum(axis=0)
    stats[1] += (est.real**2).sum(axis=0)
    stats[2] += (est.imag**2).sum(axis=0)


def _finalize(stats, n):
    mean = stats[0] / n
    var_re = stats[1] / n - mean.real**2
    var_im = stats[2] / n - mean.imag**2
    return mean, np.sqrt(np.maximum(var_re, 0) / n), np.sqrt(np.maximum(var_im, 0) / n)


def _as_schedule(x):
    return x if isinstance(x, ParamSchedule) else ParamSchedule.constant(x)


def mc_heston_cf(sched, ctx, t, us, n_paths=10**6, dt=0.01, rng=None, jumps=None, chunk=250_000):
    """Heston (or Bates, when ``jumps`` is given) characteristic function by simulation."""
    rng = np.random.default_rng(rng)
    sched = _as_schedule(sched)
    if jumps is not None:
        jumps = _as_schedule(jumps)
    us = np.asarray(us, dtype=float)
    stats = [np.zeros(len(us), complex), np.zeros(len(us)), np.zeros(len(us))]
    v_start = sched.segments[0].v0
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        v = np.full(m, v_start)
        drift = np.zeros(m)  # -I/2 + sum rho/sigma (v_end - v_start - kappa theta tau + kappa I)
        cond_var = np.zeros(m)  # sum (1 - rho^2) I_k
        for p, start, end in sched.intervals(t):
            tau = end - start
            steps = max(1, int(math.ceil(tau / dt - 1e-12)))
            h = tau / steps
            ekh = math.exp(-p.kappa * h)
            c = p.sigma**2 * (1 - ekh) / (4 * p.kappa)
            df = 4 * p.kappa * p.theta / p.sigma**2
            v_seg0 = v.copy()
            integ = np.zeros(m)
            for _ in range(steps):
                v_next = c * rng.noncentral_chisquare(df, v * ekh / c)
                integ += 0.5 * h * (v + v_next)
                v = v_next
            stoch = (v - v_seg0 - p.kappa * p.theta * tau + p.kappa * integ) / p.sigma
            drift += -0.5 * integ + p.rho * stoch
            cond_var += (1 - p.rho**2) * integ
        logx = math.log(ctx.spot) + ctx.rate * t + drift
        if jumps is not None:
            logx = logx + _jump_sums(jumps, t, m, rng)
        est = np.exp(1j * np.outer(logx, us) - 0.5 * np.outer(cond_var, us**2))
        _accumulate(stats, est)
        done += m
    return _finalize(stats, n_paths)


def _jump_sums(jumps, t, m, rng):
    total = np.zeros(m)
    for j, start, end in jumps.intervals(t):
        tau = end - start
        counts = rng.poisson(j.lam * tau, m)
        mean = math.log1p(j.mu_j) - 0.5 * j.sigma_j**2
        total += counts * mean + np.sqrt(counts) * j.sigma_j * rng.standard_normal(m)
        total -= j.lam * j.mu_j * tau
    return total


def mc_jump_cf(jumps, t, us, n_draws=10**7, rng=None, chunk=1_000_000):
    rng = np.random.default_rng(rng)
    sched = _as_schedule(jumps)
    us = np.asarray(us, dtype=float)
    stats = [np.zeros(len(us), complex), np.zeros(len(us)), np.zeros(len(us))]
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        est = np.exp(1j * np.outer(_jump_sums(sched, t, m, rng), us))
        _accumulate(stats, est)
        done += m
    return _finalize(stats, n_draws)


def mc_vg_cf(sched, ctx, t, us, n_paths=10**6, rng=None, chunk=250_000):
    """Variance Gamma by sampling the gamma clock; the Brownian part is integrated out."""
    rng = np.random.default_rng(rng)
    sched = _as_schedule(sched)
    us = np.asarray(us, dtype=float)
    stats = [np.zeros(len(us), complex), np.zeros(len(us)), np.zeros(len(us))]
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        mean = np.full(m, math.log(ctx.spot) + ctx.rate * t)
        var = np.zeros(m)
        for p, start, end in sched.intervals(t):
            tau = end - start
            clock = rng.gamma(tau / p.nu, p.nu, m)
            mean += p.omega * tau + p.drift * clock
            var += p.sigma**2 * clock
        est = np.exp(1j * np.outer(mean, us) - 0.5 * np.outer(var, us**2))
        _accumulate(stats, est)
        done += m
    return _finalize(stats, n_paths)


def within_sigmas(value, mc, k=3.0):
    """Real and imaginary parts each within ``k`` standard errors."""
    mean, se_re, se_im = mc
    value = np.asarray(value)
    return (np.abs(value.real - mean.real) <= k * se_re) & (np.abs(value.imag - mean.imag) <= k * se_im)
