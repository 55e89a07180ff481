import time

import numpy as np
import pytest

from wiener_sampler import (ChannelModel, Constant, LognormalNormalized, SignalAwareThreshold,
                            SimConfig, solve_age_opt, solve_mse_opt)
from wiener_sampler.grid import discretization, grid_extent
from wiener_sampler.sim import replication_rng, run_replication

# acceptance criteria record their verdicts here; printed at the end of the run
ACCEPTANCE = {}

_SOLVES = {}


def solved(channel):
    """(SolverResult, AgeResult, seconds) for ``channel``, computed once per session."""
    key = (channel.alpha, channel.delay)
    if key not in _SOLVES:
        t0 = time.perf_counter()
        res = solve_mse_opt(channel)
        age = solve_age_opt(channel)
        _SOLVES[key] = (res, age, time.perf_counter() - t0)
    return _SOLVES[key]


@pytest.fixture(scope="session")
def warm():
    """Compile (or load) every numba kernel before anything is timed."""
    ch = ChannelModel(0.3, Constant(1.0))
    d = discretization(ch.delay, grid_extent(ch.delay, 2.0), 41)
    d.restricted_expect(np.zeros(d.nh), 1, 1.0, (0.0,))
    d.expected_stage_cost(1.0, 2.0)
    run_replication(SignalAwareThreshold(1.0), ch, SimConfig(horizon=50.0),
                    replication_rng(0, 0))
    return True


@pytest.fixture
def c6():
    return ChannelModel(0.0, Constant(6.0))


@pytest.fixture
def lossy_c6():
    return ChannelModel(0.3, Constant(6.0))


@pytest.fixture
def ln15():
    return ChannelModel(0.65, LognormalNormalized(1.5))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
