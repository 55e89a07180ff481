import math

import numpy as np
import pytest

from wiener_sampler import ChannelModel, Constant, SignalAwareThreshold, SimConfig
from wiener_sampler.errors import ConfigError
from wiener_sampler.sim import epoch_statistics, replication_rng
from wiener_sampler.stagecost import (StageParams, exit_distribution, expected_hitting_time,
                                      expected_sq_integral, stage_cost, stage_cost_values)

S15 = math.sqrt(15.0)


def test_stage_cost_examples():
    assert stage_cost(StageParams(4.0, S15, 11.0, 6.0, 36.0)) == pytest.approx(48.0, abs=1e-12)
    assert stage_cost(StageParams(0.0, S15, 11.0, 6.0, 36.0)) == pytest.approx(-85.5, abs=1e-12)
    for v, beta, ey, ey2 in [(1.3, 4.0, 1.0, 2.0), (S15, 11.0, 6.0, 36.0), (0.5, 0.2, 3.0, 10.0)]:
        at = stage_cost(StageParams(v, v, beta, ey, ey2))
        assert at == pytest.approx(0.5 * ey2 + ey * v * v - ey * beta, abs=1e-12)


def test_identity_from_primitives():
    rng = np.random.default_rng(0)
    for _ in range(500):
        w, v = rng.normal(0, 2), abs(rng.normal(0, 2))
        beta, ey = rng.uniform(0.1, 20), rng.uniform(0.1, 10)
        ey2 = ey * ey * rng.uniform(1, 5)
        g = stage_cost(StageParams(w, v, beta, ey, ey2))
        rebuilt = (expected_sq_integral(w, v) - beta * expected_hitting_time(w, v)
                   + ey * max(w * w, v * v) + 0.5 * ey2 - ey * beta)
        assert g == pytest.approx(rebuilt, abs=1e-12 * max(1.0, abs(g)))


def test_even_and_continuous():
    w = np.linspace(-6, 6, 1201)
    g = stage_cost_values(w, 2.5, 7.0, 2.0, 5.0)
    assert np.array_equal(g, stage_cost_values(-w, 2.5, 7.0, 2.0, 5.0))
    eps = 1e-9
    lo = stage_cost_values(2.5 - eps, 2.5, 7.0, 2.0, 5.0)
    hi = stage_cost_values(2.5 + eps, 2.5, 7.0, 2.0, 5.0)
    assert abs(lo - hi) < 1e-7


def test_primitive_examples():
    assert expected_hitting_time(0.0, 1.7) == pytest.approx(1.7 ** 2)
    assert expected_hitting_time(1.7, 1.7) == 0.0
    assert expected_hitting_time(1.0, 2.0) == 3.0
    assert expected_hitting_time(3.0, 2.0) == 0.0
    assert expected_sq_integral(0.0, 1.0) == pytest.approx(1 / 6)
    assert expected_sq_integral(2.0, 2.0) == 0.0
    assert expected_sq_integral(1.0, 2.0) == pytest.approx(2.5)


def test_exit_distribution():
    (a, pa), (b, pb) = exit_distribution(0.0, 3.0)
    assert (a, b, pa, pb) == (3.0, -3.0, 0.5, 0.5)
    (_, pa), (_, pb) = exit_distribution(1.0, 2.0)
    assert (pa, pb) == (0.75, 0.25)
    (_, pa), _ = exit_distribution(2.0, 2.0)
    assert pa == 1.0
    for w in np.linspace(-1.9, 1.9, 9):
        (a, pa), (b, pb) = exit_distribution(w, 1.9)
        assert pa * a + pb * b == pytest.approx(w, abs=1e-15)
    with pytest.raises(ConfigError):
        exit_distribution(2.5, 2.0)
    with pytest.raises(ConfigError):
        exit_distribution(0.0, 0.0)


def _zero_wait_mc(w, beta, y, n_paths, n_steps, rng):
    """int_0^y (w + W_t)^2 dt - beta y, with the bridge conditional mean per step."""
    dt = y / n_steps
    e = np.full(n_paths, float(w))
    acc = np.zeros(n_paths)
    for _ in range(n_steps):
        e1 = e + math.sqrt(dt) * rng.standard_normal(n_paths)
        acc += dt * (e * e + e * e1 + e1 * e1) / 3.0 + dt * dt / 6.0
        e = e1
    return acc - beta * y


def test_stage_cost_stop_region_monte_carlo():
    x = _zero_wait_mc(4.0, 11.0, 6.0, 10 ** 5, 100, np.random.default_rng(2))
    assert abs(x.mean() - 48.0) < 3 * x.std() / math.sqrt(x.size)


def test_stage_cost_wait_region_monte_carlo():
    v, beta = S15, 11.0
    ch = ChannelModel(0.0, Constant(6.0))
    st = epoch_statistics(SignalAwareThreshold(v), ch, SimConfig(horizon=1.0, dt=1e-4),
                          n_stages=10 ** 4, bridge=True, rng=replication_rng(4, 0))
    # the delay after the stage starts from |X| = v
    mc = st["mean_sq_integral"] + v * v * 6.0 + 18.0 - beta * (st["mean_tau"] + 6.0)
    se = st["se_sq_integral"] + beta * st["se_tau"]
    assert abs(mc - (-85.5)) < 3 * se


def test_hitting_time_and_integral_monte_carlo():
    ch = ChannelModel(0.0, Constant(1.0))
    st = epoch_statistics(SignalAwareThreshold(2.0), ch, SimConfig(horizon=1.0, dt=1e-4),
                          w0=1.0, n_stages=10 ** 5, bridge=True, rng=replication_rng(8, 0))
    assert abs(st["mean_tau"] - 3.0) < 3 * st["se_tau"]
    assert abs(st["mean_sq_integral"] - 2.5) < 3 * st["se_sq_integral"]
    assert abs(st["p_plus"] - 0.75) < 3 * st["se_p_plus"]
