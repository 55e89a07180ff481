"""Value iteration for the per-beta stopping problem.

For fixed beta the n-stage recursion produces thresholds v_n from the
auxiliary odd function

    G_n(w) = E[Y] w + alpha E[H_{n-1}(w + W_Y)],
    H_{n-1}(x) = G_{n-1}(x) on |x| >= v_{n-1},  beta x - x^3/3 inside,

(v_0 = 0, so G_1(w) = E[Y] w), where v_n is the positive root of
r(w) = G_n(w) + w^3/3 - beta w. The stage values are

    J_n(w) = g(w, v_n, beta) + alpha E[J_{n-1}(max(|w|, v_n) + W_Y)].

J_n is stored as g in closed form plus alpha * D_n(max(|w|, v_n)) with the
smooth carry D_n(x) = E[J_{n-1}(x + W_Y)] tabulated, so the kink of g at
+-v_n never has to be interpolated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, SolverError, ThresholdBracketError
from .grid import EVEN, ODD, GridFunction
from .stagecost import stage_cost_values


@dataclass(frozen=True)
class NormWeights:
    """Weight u(w) = max(bbar, w^2) and contraction factor rho."""

    bbar: float
    rho: float


class ValueFunction:
    """J(w) = g(w, v, beta) + alpha * carry(max(|w|, v))."""

    def __init__(self, v, beta, mean_y, mean_y2, alpha, carry):
        self.v = float(v)
        self.beta = float(beta)
        self.mean_y = float(mean_y)
        self.mean_y2 = float(mean_y2)
        self.alpha = float(alpha)
        self.carry = carry

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        out = stage_cost_values(w, self.v, self.beta, self.mean_y, self.mean_y2)
        if self.alpha:
            out = out + self.alpha * self.carry(np.maximum(np.abs(w), self.v))
        return out if np.ndim(out) else float(out)

    @property
    def tail(self):
        a2, a1, a0 = self.carry.tail
        return (self.mean_y + self.alpha * a2, self.alpha * a1,
                0.5 * self.mean_y2 - self.mean_y * self.beta + self.alpha * a0)

    def tabulate(self):
        """The same function as a GridFunction on the carry's grid."""
        x = np.arange(self.carry.nh) * self.carry.h
        return GridFunction(self.carry.h, self(x), EVEN, self.tail)


@dataclass
class IterState:
    n: int
    beta: float
    v_n: float
    Gx: GridFunction
    J: ValueFunction
    norm_J_diff: float
    v_history: list = field(default_factory=list)
    diff_history: list = field(default_factory=list)
    norm_J1: float = float("nan")
    m: int = 1
    weights: NormWeights | None = None


def gx_update(Gx_prev, v_prev, beta, channel, disc):
    """G_n from G_{n-1} and v_{n-1}; ``Gx_prev=None`` means n = 1."""
    ey = disc.mean_y
    vals = ey * disc.x
    if Gx_prev is not None and channel.alpha > 0:
        q = disc.restricted_expect(Gx_prev.half, ODD, v_prev, (0.0, beta, 0.0, -1.0 / 3.0))
        vals = vals + channel.alpha * q
    return disc.make_function(vals, ODD)


def solve_threshold(Gx, beta, n_scan=64, tol=None, max_iter=200):
    """Positive root of r(w) = G(w) + w^3/3 - beta w on (0, sqrt(3 beta)].

    Bracketing scan followed by safeguarded Newton/bisection.
    """
    if not beta > 0:
        raise ThresholdBracketError(f"beta must be positive, got {beta}")
    # near machine precision: the v_n sequence is compared across iterations
    tol = 1e-14 * max(1.0, beta ** 1.5) if tol is None else tol
    hi = math.sqrt(3.0 * beta)

    def r(w):
        return Gx(w) + w ** 3 / 3.0 - beta * w

    ws = np.linspace(0.0, hi, n_scan + 1)[1:]
    rv = r(ws)
    pos = np.nonzero(rv >= 0.0)[0]
    if pos.size == 0:
        raise ThresholdBracketError(
            f"root function has no sign change on (0, {hi:.6g}] at beta={beta:.10g}")
    i = pos[0]
    b, rb = ws[i], rv[i]
    if i > 0:
        a, ra = ws[i - 1], rv[i - 1]
    else:
        a = b
        ra = rb
        while ra >= 0.0:
            a *= 0.5
            if a < 1e-12 * hi:
                raise ThresholdBracketError(f"r(w) >= 0 near w = 0 at beta={beta:.10g}")
            ra = r(a)
    if rb == 0.0:
        return float(b)
    x = b - rb * (b - a) / (rb - ra)
    for _ in range(max_iter):
        rx = r(x)
        if abs(rx) < tol and (b - a) < 1e-6 * hi:
            return float(x)
        if rx < 0:
            a = x
        else:
            b = x
        if b - a <= 4e-16 * b:
            return float(x)
        d = Gx.derivative(x) + x * x - beta
        xn = x - rx / d if d > 0 else 0.5 * (a + b)
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        elif abs(xn - x) <= 1e-15 * hi:
            return float(xn)
        x = xn
    raise SolverError(f"threshold iteration did not converge at beta={beta:.10g}")


def j_update(J_prev, v_n, beta, channel, disc):
    """J_n from J_{n-1} and the new threshold v_n; ``J_prev=None`` means J_0 = 0."""
    if J_prev is None:
        carry = np.zeros(disc.nh)
    else:
        carry = disc.expected_stage_cost(J_prev.v, beta)
        if channel.alpha > 0:
            d_at_v = float(J_prev.carry(J_prev.v))
            carry = carry + channel.alpha * disc.restricted_expect(
                J_prev.carry.half, EVEN, J_prev.v, (d_at_v,))
    return ValueFunction(v_n, beta, disc.mean_y, disc.mean_y2, channel.alpha,
                         disc.make_function(carry, EVEN))


def epoch_value(J, channel, disc):
    """E[J(W_Y)], the expected cost of one epoch started by a delivery."""
    val = disc.expected_stage_cost(J.v, J.beta, rows=0)
    if channel.alpha > 0:
        d_at_v = float(J.carry(J.v))
        val += channel.alpha * disc.restricted_expect(J.carry.half, EVEN, J.v, (d_at_v,), rows=0)
    return float(val)


def weighted_norm(f, weights):
    """sup |f(x)| / max(bbar, x^2) over the nodes, and |a2| for the tail."""
    f_tab = f.tabulate() if isinstance(f, ValueFunction) else f
    x = np.arange(f_tab.nh) * f_tab.h
    u = np.maximum(weights.bbar, x * x)
    return float(max(np.max(np.abs(f_tab.half) / u), abs(f_tab.tail[0])))


def _mean_abs_wy(channel):
    return math.sqrt(2.0 / math.pi) * channel.delay.mean_power(0.5)


def choose_norm_weights(channel, rho=None, floor=0.0):
    """Smallest bbar in a doubling search with E[u(w + W_Y)/u(w)] <= rho/alpha.

    The bound used is E[1 + 2|W_Y|/sqrt(bbar) + W_Y^2/bbar]. For alpha = 0
    the contraction is trivial and bbar = max(floor, E[Y]) is returned.
    """
    a = channel.alpha
    rho = 0.5 * (1.0 + a) if rho is None else float(rho)
    if not (a < rho < 1.0):
        raise SolverError(f"rho={rho} must lie strictly between alpha={a} and 1")
    ey = channel.delay.mean
    if a == 0:
        return NormWeights(max(floor, ey), rho)
    mabs = _mean_abs_wy(channel)
    b = max(floor, 1e-6 * ey)
    for _ in range(200):
        if 1.0 + 2.0 * mabs / math.sqrt(b) + ey / b <= rho / a:
            return NormWeights(b, rho)
        b *= 2.0
    raise SolverError("no admissible bbar found")


def planned_iterations(norm_J1, eps1, rho):
    if norm_J1 <= eps1:
        return 1
    return max(1, int(math.ceil(math.log(norm_J1 / eps1) / math.log(1.0 / rho))))


def iterate_to_convergence(beta, channel, disc, eps1=1e-9, rho=None, weights=None,
                           max_iter=100000):
    """Run the recursion at fixed beta until the contraction bound certifies eps1.

    Stops after m = ceil(-log_rho(||J_1|| / eps1)) iterations or once
    ||J_n - J_{n-1}|| < eps1 (1 - rho) / rho, whichever comes first. With
    alpha = 0 the first iterate is already exact.
    """
    if weights is None:
        # the contraction argument needs the continuation set inside u's flat part
        weights = choose_norm_weights(channel, rho, floor=3.0 * beta)
    rho = weights.rho
    Gx = gx_update(None, 0.0, beta, channel, disc)
    v = solve_threshold(Gx, beta)
    J = j_update(None, v, beta, channel, disc)
    norm1 = weighted_norm(J, weights)
    state = IterState(1, beta, v, Gx, J, norm1, [v], [], norm1, 1, weights)
    if channel.alpha == 0:
        return state
    m = min(planned_iterations(norm1, eps1, rho), max_iter)
    state.m = m
    stop = eps1 * (1.0 - rho) / rho
    for n in range(2, m + 1):
        Gx = gx_update(state.Gx, state.v_n, beta, channel, disc)
        v = solve_threshold(Gx, beta)
        if v + 4 * disc.h >= disc.w_max:
            raise GridError(f"threshold {v:.6g} reaches the grid edge {disc.w_max:.6g}")
        J_new = j_update(state.J, v, beta, channel, disc)
        diff = weighted_norm(J_new.tabulate() - state.J.tabulate(), weights)
        state.n, state.v_n, state.Gx, state.J, state.norm_J_diff = n, v, Gx, J_new, diff
        state.v_history.append(v)
        state.diff_history.append(diff)
        if not math.isfinite(diff):
            raise GridError("non-finite value function")
        if diff < stop:
            break
    return state
