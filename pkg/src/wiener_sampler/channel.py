"""Delay distributions and the unreliable channel.

A delay model exposes exact moments, a discrete quadrature rule on its
support (used by the grid solver) and exact sampling (used by the
simulator). W_Y denotes a Wiener increment over a random delay Y, i.e. a
zero-mean Gaussian mixture with variance Y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from statistics import NormalDist

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ConfigError

_SQRT2PI = math.sqrt(2.0 * math.pi)


class DelayModel:
    """Base class for i.i.d. transmission delay distributions (support > 0)."""

    kind = "abstract"

    @property
    def quad_nodes(self):
        """(y, weights) arrays; weights sum to 1."""
        return self._nodes

    def moments(self):
        return self.mean_power(1.0), self.mean_power(2.0)

    @property
    def mean(self):
        return self.mean_power(1.0)

    @property
    def second_moment(self):
        return self.mean_power(2.0)

    def quadrature_moments(self):
        y, w = self.quad_nodes
        return float(np.dot(w, y)), float(np.dot(w, y * y))

    def partial_moment(self, k, t):
        """E[Y^k ; Y > t] for k = 0, 1, 2."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    @staticmethod
    def from_dict(d):
        return delay_from_dict(d)


@dataclass(frozen=True)
class Constant(DelayModel):
    c: float
    kind = "constant"

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ConfigError(f"constant delay must be positive, got {self.c}")

    @cached_property
    def _nodes(self):
        return np.array([float(self.c)]), np.array([1.0])

    def mean_power(self, q):
        return float(self.c) ** q

    def partial_moment(self, k, t):
        return float(self.c) ** k if self.c > t else 0.0

    def quantile(self, p):
        return float(self.c)

    @property
    def ymin(self):
        return float(self.c)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.c)
        return np.full(size, float(self.c))

    def to_dict(self):
        return {"kind": "constant", "c": self.c}


@dataclass(frozen=True)
class TwoPoint(DelayModel):
    """Y = y1 with probability p1, otherwise y2."""

    y1: float
    p1: float
    y2: float
    kind = "twopoint"

    def __post_init__(self):
        if not (self.y1 > 0 and self.y2 > 0):
            raise ConfigError("two-point delay support must be positive")
        if not (0.0 <= self.p1 <= 1.0):
            raise ConfigError(f"p1 must lie in [0, 1], got {self.p1}")

    @cached_property
    def _nodes(self):
        return (np.array([float(self.y1), float(self.y2)]),
                np.array([float(self.p1), 1.0 - float(self.p1)]))

    def mean_power(self, q):
        return self.p1 * self.y1 ** q + (1.0 - self.p1) * self.y2 ** q

    def partial_moment(self, k, t):
        out = 0.0
        if self.y1 > t:
            out += self.p1 * self.y1 ** k
        if self.y2 > t:
            out += (1.0 - self.p1) * self.y2 ** k
        return out

    def quantile(self, p):
        (lo, plo), (hi, _) = sorted([(self.y1, self.p1), (self.y2, 1.0 - self.p1)])
        return float(lo if p <= plo else hi)

    @property
    def ymin(self):
        y, w = self.quad_nodes
        return float(y[w > 0].min())

    def sample(self, rng, size=None):
        u = rng.random(size)
        return np.where(u < self.p1, float(self.y1), float(self.y2)) if size is not None \
            else (float(self.y1) if u < self.p1 else float(self.y2))

    def to_dict(self):
        return {"kind": "twopoint", "y1": self.y1, "p1": self.p1, "y2": self.y2}


@dataclass(frozen=True)
class LognormalNormalized(DelayModel):
    """Y = exp(sigma*A) / E[exp(sigma*A)] with A ~ N(0, 1), so E[Y] = 1.

    The quadrature rule is Gauss-Hermite in the log domain, which integrates
    moments of Y to near machine precision.
    """

    sigma: float
    n_nodes: int = field(default=64)
    kind = "lognormal"

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.n_nodes < 2:
            raise ConfigError("n_nodes must be at least 2")

    @cached_property
    def _nodes(self):
        a, w = hermegauss(self.n_nodes)
        w = w / w.sum()
        return np.exp(self.sigma * a - 0.5 * self.sigma ** 2), w

    def mean_power(self, q):
        s2 = self.sigma ** 2
        return math.exp(0.5 * q * q * s2 - 0.5 * q * s2)

    def partial_moment(self, k, t):
        if t <= 0:
            return self.mean_power(k)
        if self.sigma == 0:
            return 1.0 if 1.0 > t else 0.0
        m = -0.5 * self.sigma ** 2
        z = (m + k * self.sigma ** 2 - math.log(t)) / self.sigma
        return self.mean_power(k) * 0.5 * math.erfc(-z / math.sqrt(2.0))

    def quantile(self, p):
        if self.sigma == 0:
            return 1.0
        return math.exp(self.sigma * NormalDist().inv_cdf(p) - 0.5 * self.sigma ** 2)

    @property
    def ymin(self):
        return 1.0 if self.sigma == 0 else 0.0

    def sample(self, rng, size=None):
        a = rng.standard_normal(size)
        return np.exp(self.sigma * a - 0.5 * self.sigma ** 2)

    def to_dict(self):
        d = {"kind": "lognormal", "sigma": self.sigma}
        if self.n_nodes != 64:
            d["n_nodes"] = self.n_nodes
        return d


def delay_from_dict(d):
    """Build a delay model from its JSON form, e.g. {"kind": "constant", "c": 6}."""
    if isinstance(d, DelayModel):
        return d
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"delay spec must be an object with a 'kind': {d!r}")
    kind = str(d["kind"]).lower()
    try:
        if kind == "constant":
            return Constant(float(d["c"]))
        if kind == "twopoint":
            return TwoPoint(float(d["y1"]), float(d["p1"]), float(d["y2"]))
        if kind == "lognormal":
            return LognormalNormalized(float(d["sigma"]), int(d.get("n_nodes", 64)))
    except KeyError as exc:
        raise ConfigError(f"delay spec {d!r} is missing field {exc}") from None
    raise ConfigError(f"unknown delay kind {d['kind']!r}")


@dataclass(frozen=True)
class ChannelModel:
    """Independent failures with probability alpha, i.i.d. delays, instant ACK."""

    alpha: float
    delay: DelayModel

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")

    def to_dict(self):
        return {"alpha": self.alpha, "delay": self.delay.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if "alpha" not in d or "delay" not in d:
            raise ConfigError("channel needs 'alpha' and 'delay'")
        return cls(float(d["alpha"]), delay_from_dict(d["delay"]))


def moments(delay):
    """(E[Y], E[Y^2]) in closed form."""
    return delay.moments()


def wy_density(delay, x):
    """Density of W_Y at x: E_Y[N(x; 0, Y)] over the quadrature nodes."""
    y, w = delay.quad_nodes
    x = np.asarray(x, dtype=float)
    xx = x[..., None]
    pdf = np.exp(-0.5 * xx * xx / y) / (_SQRT2PI * np.sqrt(y))
    return pdf @ w


def expect_over_wy(delay, f, w=0.0, n_gh=64, nsig=8.0):
    """E[f(w + W_Y)] by Gauss-Hermite quadrature per delay node.

    Nodes beyond nsig standard deviations are dropped. ``f`` must accept
    numpy arrays. Raises FloatingPointError if f is non-finite at a node.
    """
    y, p = delay.quad_nodes
    z, wz = hermegauss(n_gh)
    keep = np.abs(z) <= nsig
    z, wz = z[keep], wz[keep] / math.sqrt(2.0 * math.pi)
    w = np.asarray(w, dtype=float)
    x = w[..., None, None] + np.sqrt(y)[:, None] * z[None, :]
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise FloatingPointError("integrand is non-finite at a quadrature node")
    return (fx * wz).sum(axis=-1) @ p


def sample_delay(delay, rng):
    return delay.sample(rng)


def sample_delays(delay, rng, size):
    return np.asarray(delay.sample(rng, size), dtype=float)


def sample_success(alpha, rng):
    """True with probability 1 - alpha."""
    return bool(rng.random() >= alpha)
