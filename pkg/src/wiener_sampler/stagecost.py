"""Closed-form per-stage cost of the threshold rule |X_t| >= v.

A stage starts right after a delivery with estimation error w. The sampler
waits until the error first leaves (-v, v), then pays the MSE accumulated
over the wait and the following delay, minus beta times the stage length.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class StageParams:
    w: float
    v: float
    beta: float
    mean_y: float
    mean_y2: float


def stage_cost_values(w, v, beta, mean_y, mean_y2):
    """Vectorised g(w, v, beta)."""
    w2 = np.asarray(w, dtype=float) ** 2
    v2 = float(v) ** 2
    return (0.5 * mean_y2 + mean_y * w2 - mean_y * beta
            + np.maximum(v2 * v2 - w2 * w2, 0.0) / 6.0
            - (beta - mean_y) * np.maximum(v2 - w2, 0.0))


def stage_cost(p: StageParams) -> float:
    return float(stage_cost_values(p.w, p.v, p.beta, p.mean_y, p.mean_y2))


def expected_hitting_time(w, v):
    """E[tau] = max(v^2 - w^2, 0) for tau = inf{t : |w + B_t| >= v}."""
    return max(v * v - w * w, 0.0)


def exit_distribution(w, v):
    """Law of the exit point: ((v, P(+v)), (-v, P(-v))).

    Only defined for a start inside the band; outside it the stage exits
    immediately at w itself.
    """
    if v <= 0:
        raise ConfigError("exit distribution needs v > 0")
    if abs(w) > v:
        raise ConfigError(f"start |w|={abs(w)} lies outside the band v={v}")
    p_plus = (v + w) / (2.0 * v)
    return (v, p_plus), (-v, 1.0 - p_plus)


def expected_sq_integral(w, v):
    """E[int_0^tau X_t^2 dt] = max(v^4 - w^4, 0) / 6."""
    return max(v ** 4 - w ** 4, 0.0) / 6.0
