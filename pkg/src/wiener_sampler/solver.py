"""Outer bisection on beta for the optimal average MSE, plus the age-optimal
benchmark and an independent scalar oracle for reliable channels.

h(beta) = E[J(W_Y, beta)] is decreasing in beta and vanishes at the
optimal MSE, so bisection on its sign brackets mse_opt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .channel import ChannelModel, wy_density
from .errors import BracketError, ConfigError, ThresholdBracketError
from .grid import discretization, grid_extent
from .stagecost import stage_cost_values
from . import valueiter


@dataclass
class SolverConfig:
    k1: float | None = None
    k2: float | None = None
    eps1: float = 1e-9
    eps2: float | None = None       # default 1e-7 * E[Y]
    rho: float | None = None        # default (1 + alpha) / 2
    n_grid: int = 2001
    w_max: float | None = None      # default sqrt(3 k2) + nsig sqrt(q99(Y))
    nsig: float = 8.0
    max_expand: int = 60

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown solver options: {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.n_grid < 9 or cfg.n_grid % 2 == 0:
            raise ConfigError("n_grid must be an odd integer >= 9")
        if cfg.eps1 <= 0 or (cfg.eps2 is not None and cfg.eps2 <= 0):
            raise ConfigError("tolerances must be positive")
        return cfg


@dataclass
class SolverResult:
    mse_opt: float
    v: float
    v_history: list = field(default_factory=list)
    outer_iters: int = 0
    h_values: list = field(default_factory=list)   # (beta, h) pairs
    state: object = None


@dataclass
class AgeResult:
    age_opt: float
    threshold: float
    is_zero_wait: bool


# --------------------------------------------------------------------------
# age-optimal policy

def _age_root_function(beta, channel):
    a = channel.alpha
    d = channel.delay
    ey, ey2 = d.moments()
    c = ey / (1.0 - a)                                  # E[Y'] over retransmissions
    eyp2 = ey2 / (1.0 - a) + 2.0 * a * ey * ey / (1.0 - a) ** 2
    wbar = beta - c
    p0, p1, p2 = (d.partial_moment(k, wbar) for k in range(3))
    emax1 = wbar * (1.0 - p0) + p1
    emax2 = wbar * wbar * (1.0 - p0) + p2
    ewait = c + wbar * (1.0 - p0) - (ey - p1)           # E[max(beta - Y, c)]
    return 0.5 * (emax2 + 2.0 * emax1 * c + eyp2 - ey2) - beta * ewait


def solve_age_opt(channel, tol=None):
    """Optimal average age under the wait-until-age rule, by bisection.

    The sampler transmits once the age reaches beta - E[Y]/(1 - alpha);
    beta is the root of a scalar equation in exact partial moments of Y.
    """
    c = channel.delay.mean / (1.0 - channel.alpha)
    tol = 1e-13 * c if tol is None else tol
    lo = c
    if _age_root_function(lo, channel) <= 0:
        raise BracketError("age root function is not positive at E[Y]/(1-alpha)")
    hi = 2.0 * c
    for _ in range(200):
        if _age_root_function(hi, channel) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise BracketError("could not bracket the age-optimal root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _age_root_function(mid, channel) >= 0:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    thr = beta - c
    return AgeResult(beta, thr, bool(thr <= channel.delay.ymin + 1e-9 * c))


# --------------------------------------------------------------------------
# signal-aware optimum

def _resolve(channel, config):
    cfg = config or SolverConfig()
    ey = channel.delay.mean
    eps2 = 1e-7 * ey if cfg.eps2 is None else cfg.eps2
    return cfg, ey, eps2


def _disc_for(channel, cfg, k2):
    w = cfg.w_max if cfg.w_max is not None else grid_extent(channel.delay, k2, cfg.nsig)
    return discretization(channel.delay, float(w), cfg.n_grid, cfg.nsig)


def h_of_beta(beta, channel, config=None, disc=None, return_state=False):
    """Expected epoch value E[J(W_Y, beta)] after value iteration at beta.

    Raises ThresholdBracketError when the root function has no sign change,
    which happens for beta below the optimum.
    """
    cfg, _, _ = _resolve(channel, config)
    if disc is None:
        k2 = cfg.k2 if cfg.k2 is not None else max(beta, solve_age_opt(channel).age_opt)
        disc = _disc_for(channel, cfg, k2)
    st = valueiter.iterate_to_convergence(beta, channel, disc, eps1=cfg.eps1, rho=cfg.rho)
    h = valueiter.epoch_value(st.J, channel, disc)
    return (h, st) if return_state else h


def _signed_h(beta, channel, cfg, disc):
    try:
        return h_of_beta(beta, channel, cfg, disc)
    except ThresholdBracketError:
        return math.inf


def solve_mse_opt(channel, config=None):
    """Bisection on beta: shrink k2 where h < 0, raise k1 where h >= 0."""
    cfg, ey, eps2 = _resolve(channel, config)
    k2 = cfg.k2 if cfg.k2 is not None else solve_age_opt(channel).age_opt
    k1 = cfg.k1 if cfg.k1 is not None else ey + eps2
    if not k1 < k2:
        raise ConfigError(f"need k1 < k2, got {k1} and {k2}")
    trace = []

    disc = _disc_for(channel, cfg, k2)
    for _ in range(cfg.max_expand + 1):
        h2 = _signed_h(k2, channel, cfg, disc)
        trace.append((k2, h2))
        if h2 < 0:
            break
        k1, k2 = k2, k2 + 2.0 * (k2 - k1)
        disc = _disc_for(channel, cfg, k2)
    else:
        raise BracketError(f"h(k2) stayed non-negative up to k2={k2:.6g}")
    for _ in range(cfg.max_expand + 1):
        h1 = _signed_h(k1, channel, cfg, disc)
        trace.append((k1, h1))
        if h1 >= 0:
            break
        k1 = max(0.5 * k1, k1 - (k2 - k1))
    else:
        raise BracketError(f"h(k1) stayed negative down to k1={k1:.6g}")

    iters = 0
    while k2 - k1 >= eps2:
        beta = 0.5 * (k1 + k2)
        h = _signed_h(beta, channel, cfg, disc)
        trace.append((beta, h))
        iters += 1
        if h < 0:
            k2 = beta
        else:
            k1 = beta
    beta = 0.5 * (k1 + k2)
    _, st = h_of_beta(beta, channel, cfg, disc, return_state=True)
    return SolverResult(beta, st.v_n, list(st.v_history), iters, trace, st)


def reliable_closed_form(delay, tol=None):
    """Oracle for alpha = 0: v = sqrt(3 (beta - E[Y])) in closed form and
    E[g(W_Y, v, beta)] by adaptive 1-d quadrature against the density of W_Y.
    """
    ey, ey2 = delay.moments()
    tol = 1e-12 * ey if tol is None else tol
    y, _ = delay.quad_nodes
    spread = math.sqrt(float(np.max(y)))

    def h0(beta):
        v = math.sqrt(3.0 * max(beta - ey, 0.0))

        def f(x):
            return stage_cost_values(x, v, beta, ey, ey2) * wy_density(delay, x)

        kw = dict(epsabs=0.0, epsrel=1e-13, limit=500)
        inner = quad(f, 0.0, v, **kw)[0] if v > 0 else 0.0
        outer = quad(f, v, v + 40.0 * spread, **kw)[0]
        return 2.0 * (inner + outer)

    lo, hi = ey, 2.0 * ey + ey2 / ey
    trace = []
    while h0(hi) >= 0:
        lo, hi = hi, 2.0 * hi
    iters = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        val = h0(mid)
        trace.append((mid, val))
        iters += 1
        if val < 0:
            hi = mid
        else:
            lo = mid
    beta = 0.5 * (lo + hi)
    v = math.sqrt(3.0 * (beta - ey))
    return SolverResult(beta, v, [v], iters, trace)


def result_record(res, age):
    """JSON-ready summary of a solve."""
    return {
        "mse_opt": res.mse_opt,
        "v": res.v,
        "age_opt": age.age_opt,
        "age_threshold": age.threshold,
        "iterations": res.outer_iters,
        "h_trace": [[b, (None if not math.isfinite(h) else h)] for b, h in res.h_values],
    }


def solve(channel_dict, solver_dict=None):
    ch = ChannelModel.from_dict(channel_dict)
    cfg = SolverConfig.from_dict(solver_dict)
    return solve_mse_opt(ch, cfg), solve_age_opt(ch)
