"""Time the numba kernels against the pure-numpy reference path.

    python benchmarks/bench_backends.py            # full sizes
    python benchmarks/bench_backends.py --quick    # smaller grid and horizon

Each kernel is run once untimed to trigger compilation (or load the on-disk
cache), then timed as the best of ``--repeat`` runs. Results from the two
backends are compared as well, since they should agree to rounding.
"""
import argparse
import time

import numpy as np

from wiener_sampler._accel import HAVE_NUMBA
from wiener_sampler.channel import ChannelModel, Constant, LognormalNormalized
from wiener_sampler.grid import EVEN, Discretization
from wiener_sampler.sim import SignalAwareThreshold, SimConfig, replication_rng, run_replication
from wiener_sampler.solver import SolverConfig, h_of_beta


def best_of(fn, repeat):
    out = fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(name, make, repeat):
    t_nb, r_nb = best_of(lambda: make(True), repeat)
    t_np, r_np = best_of(lambda: make(False), repeat)
    diff = float(np.max(np.abs(np.asarray(r_nb, dtype=float) - np.asarray(r_np, dtype=float))))
    print(f"{name:<28s} numba {t_nb * 1e3:10.2f} ms   numpy {t_np * 1e3:10.2f} ms   "
          f"speedup {t_np / t_nb:7.1f}x   max|diff| {diff:.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    n_grid = 801 if args.quick else 2001
    horizon = 2e4 if args.quick else 2e5
    ch = ChannelModel(0.65, LognormalNormalized(1.5))
    w_max = 14.0
    discs = {b: Discretization(ch.delay, w_max, n_grid, use_numba=b) for b in (True, False)}
    f = np.cos(discs[True].x) * discs[True].x ** 2

    bench("operator assembly", lambda b: Discretization(ch.delay, w_max, n_grid,
                                                        use_numba=b).K[EVEN], 1)
    bench("kink-restricted expectation",
          lambda b: discs[b].restricted_expect(f, EVEN, 2.4, (1.0,)), args.repeat)
    bench("stage cost expectation",
          lambda b: discs[b].expected_stage_cost(2.4, 5.0), args.repeat)
    bench("h(beta), value iteration",
          lambda b: h_of_beta(5.1, ch, SolverConfig(), discs[b]), 1)

    c6 = ChannelModel(0.3, Constant(6.0))
    cfg = SimConfig(horizon=horizon, replications=2, seed=1)
    bench("simulator replication",
          lambda b: run_replication(SignalAwareThreshold(2.68), c6, cfg,
                                    replication_rng(1, 0), use_numba=b).avg_mse, 1)


if __name__ == "__main__":
    main()
