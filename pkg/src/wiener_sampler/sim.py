"""Monte Carlo of sampling a Wiener process over the channel.

Waits under a signal-aware threshold run on a dt time grid and the crossing
is detected at grid times. While the error is far from the threshold
several grid steps are taken at once (see ``_jump_length_np``). Segments of
known length (transmission delays, waits under the age rule) are advanced
in one draw. In every case the error integral over a segment is replaced by
its Brownian-bridge conditional mean given the endpoints, which keeps the
estimator unbiased.

All randomness is pre-drawn in blocks from a numpy Generator, so the numba
kernel and the numpy reference path consume identical streams.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit
from .channel import sample_delays
from .errors import ConfigError

# state vector layout
T, E, AGE, WHAT, ACC_MSE, ACC_AGE, T0, MEAS, NSAMP, NSUCC = range(10)
NEED_BATCH, NEED_STEPS, DONE = 0, 1, 2
ZSAFE = 8.0


@dataclass(frozen=True)
class SignalAwareThreshold:
    """Sample when |W_t - What_t| >= v."""

    v: float
    code = 2

    @property
    def param(self):
        return float(self.v)


@dataclass(frozen=True)
class AgeThreshold:
    """Sample when the age reaches a (immediately if it already exceeds a)."""

    a: float
    code = 1

    @property
    def param(self):
        return float(self.a)


@dataclass(frozen=True)
class ZeroWait:
    code = 0

    @property
    def param(self):
        return 0.0


@dataclass
class SimConfig:
    horizon: float
    replications: int = 2
    seed: int = 0
    dt: float | None = None             # default 1e-3 * E[Y]
    warmup_fraction: float = 0.1
    batch: int = 4096
    step_block: int = 1 << 18

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sim options: {sorted(unknown)}")
        if "horizon" not in d:
            raise ConfigError("sim needs a 'horizon'")
        return cls(**d)

    def validate(self, delay=None):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be positive")
        if self.replications < 2:
            raise ConfigError("need at least two replications for a confidence interval")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if delay is not None:
            dt = self.resolved_dt(delay)
            if delay.kind == "constant" and dt > delay.c / 100.0:
                raise ConfigError(f"dt={dt} is too coarse for constant delay {delay.c}")
            if self.horizon < 100.0 * delay.mean:
                warnings.warn("horizon covers fewer than ~100 delays; averages will be noisy")

    def resolved_dt(self, delay):
        return 1e-3 * delay.mean if self.dt is None else float(self.dt)


@dataclass
class ReplicationResult:
    avg_mse: float
    avg_age: float
    sampling_rate: float
    successful_rate: float
    measured_time: float
    n_samples: int
    n_success: int
    end_time: float


@dataclass
class SimResult:
    avg_mse: float
    avg_age: float
    sampling_rate: float
    successful_rate: float
    ci_halfwidth_mse: float
    ci_halfwidth_age: float
    epochs_observed: int
    replications: list = field(default_factory=list)


# --------------------------------------------------------------------------
# kernels

@njit
def _exact_segment(st, L, z):
    b = math.sqrt(L) * z
    e = st[E]
    if st[MEAS] > 0.0:
        st[ACC_MSE] += L * e * e + e * b * L + b * b * L / 3.0 + L * L / 6.0
        st[ACC_AGE] += st[AGE] * L + 0.5 * L * L
    st[E] = e + b
    st[T] += L
    st[AGE] += L


def _jump_length_np(e, v, dt):
    """k * dt with k the largest count of grid steps for which an 8-sigma
    envelope of the increment stays inside (-v, v); at least one step.

    Any grid point inside such a jump crosses +-v with probability below
    ~1e-15, so jumping leaves the law of the first grid crossing unchanged.
    """
    gap = (v - abs(e)) / ZSAFE
    k = math.floor(gap * gap / dt)
    return dt if k <= 1 else k * dt


_jump_length = njit(_jump_length_np)


@njit
def _sim_kernel_nb(st, code, param, alpha, dt, t_warm, horizon, Y, U, ZD, ZA, Z, b, sp):
    nb = Y.size
    nz = Z.size
    while b < nb:
        if code == 2:
            e = st[E]
            while abs(e) < param:
                if sp >= nz:
                    st[E] = e
                    return NEED_STEPS, b, sp
                L = _jump_length(e, param, dt)
                e1 = e + math.sqrt(L) * Z[sp]
                sp += 1
                if st[MEAS] > 0.0:
                    st[ACC_MSE] += L * (e * e + e * e1 + e1 * e1) / 3.0 + L * L / 6.0
                    st[ACC_AGE] += st[AGE] * L + 0.5 * L * L
                e = e1
                st[T] += L
                st[AGE] += L
            st[E] = e
        elif code == 1:
            if st[AGE] < param:
                _exact_segment(st, param - st[AGE], ZA[b])
        if st[MEAS] == 0.0 and st[T] >= t_warm:
            st[MEAS] = 1.0
            st[T0] = st[T]
        if st[MEAS] > 0.0:
            st[NSAMP] += 1.0
        e_s = st[E]
        y = Y[b]
        _exact_segment(st, y, ZD[b])
        if U[b] >= alpha:
            st[E] -= e_s
            st[WHAT] += e_s
            st[AGE] = y
            if st[MEAS] > 0.0:
                st[NSUCC] += 1.0
        b += 1
        if st[MEAS] == 0.0 and st[T] >= t_warm:
            st[MEAS] = 1.0
            st[T0] = st[T]
        if st[T] >= horizon:
            return DONE, b, sp
    return NEED_BATCH, b, sp


def _exact_segment_np(st, L, z, trace):
    b = math.sqrt(L) * z
    e = st[E]
    if st[MEAS] > 0.0:
        st[ACC_MSE] += L * e * e + e * b * L + b * b * L / 3.0 + L * L / 6.0
        st[ACC_AGE] += st[AGE] * L + 0.5 * L * L
    st[E] = e + b
    st[T] += L
    st[AGE] += L
    if trace is not None:
        trace.append((st[T], st[WHAT] + st[E], st[WHAT], st[AGE]))


def _sim_kernel_np(st, code, param, alpha, dt, t_warm, horizon, Y, U, ZD, ZA, Z, b, sp,
                   trace=None, trace_every=100):
    """Reference implementation; same arithmetic as the numba kernel."""
    nstep = 0
    nb = Y.size
    nz = Z.size
    while b < nb:
        if code == 2 and abs(st[E]) < param:
            e = st[E]
            while abs(e) < param:
                if sp >= nz:
                    st[E] = e
                    return NEED_STEPS, b, sp
                L = _jump_length_np(e, param, dt)
                e1 = e + math.sqrt(L) * Z[sp]
                sp += 1
                if st[MEAS] > 0.0:
                    st[ACC_MSE] += L * (e * e + e * e1 + e1 * e1) / 3.0 + L * L / 6.0
                    st[ACC_AGE] += st[AGE] * L + 0.5 * L * L
                e = e1
                st[T] += L
                st[AGE] += L
                if trace is not None:
                    nstep += 1
                    if nstep % trace_every == 0:
                        trace.append((st[T], st[WHAT] + e, st[WHAT], st[AGE]))
            st[E] = e
        elif code == 1:
            if st[AGE] < param:
                _exact_segment_np(st, param - st[AGE], ZA[b], trace)
        if st[MEAS] == 0.0 and st[T] >= t_warm:
            st[MEAS] = 1.0
            st[T0] = st[T]
        if st[MEAS] > 0.0:
            st[NSAMP] += 1.0
        e_s = st[E]
        y = Y[b]
        _exact_segment_np(st, y, ZD[b], trace)
        if U[b] >= alpha:
            st[E] -= e_s
            st[WHAT] += e_s
            st[AGE] = y
            if st[MEAS] > 0.0:
                st[NSUCC] += 1.0
            if trace is not None:
                trace.append((st[T], st[WHAT] + st[E], st[WHAT], st[AGE]))
        b += 1
        if st[MEAS] == 0.0 and st[T] >= t_warm:
            st[MEAS] = 1.0
            st[T0] = st[T]
        if st[T] >= horizon:
            return DONE, b, sp
    return NEED_BATCH, b, sp


# --------------------------------------------------------------------------

def run_replication(policy, channel, config, rng, use_numba=None, trace_path=None,
                    trace_every=100):
    """Simulate one path of length ``config.horizon`` and return time averages.

    The path starts right after a delivery, at W = What = 0 with the age
    equal to one drawn delay; the first
    ``warmup_fraction`` of the horizon is discarded (measurement starts at
    the first event after it).
    """
    delay = channel.delay
    dt = config.resolved_dt(delay)
    use_numba = USE_NUMBA if use_numba is None else use_numba
    if trace_path is not None:
        use_numba = False
    if isinstance(policy, SignalAwareThreshold) and not policy.v >= 0:
        raise ConfigError("threshold v must be non-negative")
    st = np.zeros(10)
    # start just after a delivery: error 0, age equal to one delay
    st[AGE] = float(sample_delays(delay, rng, 1)[0])
    t_warm = config.warmup_fraction * config.horizon
    trace = [] if trace_path is not None else None
    b, sp = config.batch, config.step_block
    Y = U = ZD = ZA = Z = None
    Z = np.empty(0)
    status = NEED_BATCH
    while True:
        if status == NEED_BATCH:
            Y = sample_delays(delay, rng, config.batch)
            U = rng.random(config.batch)
            ZD = rng.standard_normal(config.batch)
            ZA = rng.standard_normal(config.batch)
            b = 0
        elif status == NEED_STEPS:
            Z = rng.standard_normal(config.step_block)
            sp = 0
        args = (st, policy.code, policy.param, float(channel.alpha), dt, t_warm,
                float(config.horizon), Y, U, ZD, ZA, Z, b, sp)
        if use_numba:
            status, b, sp = _sim_kernel_nb(*args)
        else:
            status, b, sp = _sim_kernel_np(*args, trace=trace, trace_every=trace_every)
        if not math.isfinite(st[E]):
            raise FloatingPointError("simulation state became non-finite")
        if status == DONE:
            break
    if trace is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "W", "What", "age"])
            w.writerows([[f"{x:.12g}" for x in row] for row in trace])
    T_meas = st[T] - st[T0]
    if st[MEAS] == 0.0 or T_meas <= 0:
        raise ConfigError("horizon too short: nothing was measured after warm-up")
    return ReplicationResult(st[ACC_MSE] / T_meas, st[ACC_AGE] / T_meas,
                             st[NSAMP] / T_meas, st[NSUCC] / T_meas, T_meas,
                             int(st[NSAMP]), int(st[NSUCC]), float(st[T]))


def replication_rng(seed, k):
    """Generator for replication k, derived only from (seed, k)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))


def _ci(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def run_experiment(policy, channel, config, use_numba=None):
    """Independent replications; CI half-widths are 1.96 sd / sqrt(R)."""
    config.validate(channel.delay)
    reps = [run_replication(policy, channel, config, replication_rng(config.seed, k),
                            use_numba=use_numba)
            for k in range(config.replications)]
    mse = [r.avg_mse for r in reps]
    age = [r.avg_age for r in reps]
    return SimResult(float(np.mean(mse)), float(np.mean(age)),
                     float(np.mean([r.sampling_rate for r in reps])),
                     float(np.mean([r.successful_rate for r in reps])),
                     _ci(mse), _ci(age), int(sum(r.n_success for r in reps)), reps)


# --------------------------------------------------------------------------
# single stages of the threshold rule

def _stage_kernel_np(w0, v, dt, bridge, Z, U, sp, idx, cur, tau, integ, exitv):
    """Stages of the threshold rule from w0; state (e, t, integral) in ``cur``."""
    n = tau.size
    nz = Z.size
    while idx < n:
        e = cur[0]
        t = cur[1]
        acc = cur[2]
        done = abs(e) >= v
        xe = e
        while not done:
            if sp >= nz:
                cur[0] = e
                cur[1] = t
                cur[2] = acc
                return NEED_STEPS, sp, idx
            L = _jump_length_np(e, v, dt)
            e1 = e + math.sqrt(L) * Z[sp]
            u = U[sp]
            sp += 1
            acc += L * (e * e + e * e1 + e1 * e1) / 3.0 + L * L / 6.0
            t += L
            if abs(e1) >= v:
                done = True
                xe = v if e1 > 0 else -v
            elif bridge:
                pu = math.exp(-2.0 * (v - e) * (v - e1) / L)
                pd = math.exp(-2.0 * (v + e) * (v + e1) / L)
                if u < pu + pd:
                    done = True
                    xe = v if u < pu else -v
            e = e1
        tau[idx] = t
        integ[idx] = acc
        exitv[idx] = xe
        idx += 1
        cur[0] = w0
        cur[1] = 0.0
        cur[2] = 0.0
    return DONE, sp, idx


@njit
def _stage_kernel_nb(w0, v, dt, bridge, Z, U, sp, idx, cur, tau, integ, exitv):
    n = tau.size
    nz = Z.size
    while idx < n:
        e = cur[0]
        t = cur[1]
        acc = cur[2]
        done = abs(e) >= v
        xe = e
        while not done:
            if sp >= nz:
                cur[0] = e
                cur[1] = t
                cur[2] = acc
                return NEED_STEPS, sp, idx
            L = _jump_length(e, v, dt)
            e1 = e + math.sqrt(L) * Z[sp]
            u = U[sp]
            sp += 1
            acc += L * (e * e + e * e1 + e1 * e1) / 3.0 + L * L / 6.0
            t += L
            if abs(e1) >= v:
                done = True
                xe = v if e1 > 0 else -v
            elif bridge:
                pu = math.exp(-2.0 * (v - e) * (v - e1) / L)
                pd = math.exp(-2.0 * (v + e) * (v + e1) / L)
                if u < pu + pd:
                    done = True
                    xe = v if u < pu else -v
            e = e1
        tau[idx] = t
        integ[idx] = acc
        exitv[idx] = xe
        idx += 1
        cur[0] = w0
        cur[1] = 0.0
        cur[2] = 0.0
    return DONE, sp, idx


def epoch_statistics(policy, channel, config, w0=0.0, n_stages=10000, bridge=False,
                     rng=None, use_numba=None):
    """Monte Carlo estimates of E[tau], E[|X_tau|], P(X_tau = +v) and
    E[int_0^tau X^2] for stages of the threshold rule started at w0.

    Crossings are detected at grid times, which makes tau late by about
    0.58 sqrt(dt) / v relative; ``bridge`` adds the Brownian-bridge crossing
    probability between grid points to remove that bias.
    """
    if not isinstance(policy, SignalAwareThreshold):
        raise ConfigError("epoch statistics are defined for signal-aware thresholds")
    if n_stages < 2:
        raise ConfigError("need at least two stages")
    v = float(policy.v)
    dt = config.resolved_dt(channel.delay)
    rng = replication_rng(config.seed, 0) if rng is None else rng
    use_numba = USE_NUMBA if use_numba is None else use_numba
    kern = _stage_kernel_nb if use_numba else _stage_kernel_np
    tau, integ, exitv = np.zeros(n_stages), np.zeros(n_stages), np.zeros(n_stages)
    cur = np.array([float(w0), 0.0, 0.0])
    sp, idx = 0, 0
    Z = U = np.empty(0)
    while True:
        status, sp, idx = kern(float(w0), v, dt, bool(bridge), Z, U, sp, idx, cur,
                               tau, integ, exitv)
        if status == DONE:
            break
        Z = rng.standard_normal(config.step_block)
        U = rng.random(config.step_block)
        sp = 0
    n = float(n_stages)
    plus = (exitv > 0).astype(float)
    return {
        "mean_tau": float(tau.mean()), "se_tau": float(tau.std(ddof=1) / math.sqrt(n)),
        "mean_exit_abs": float(np.abs(exitv).mean()),
        "p_plus": float(plus.mean()), "se_p_plus": float(plus.std(ddof=1) / math.sqrt(n)),
        "mean_sq_integral": float(integ.mean()),
        "se_sq_integral": float(integ.std(ddof=1) / math.sqrt(n)),
        "n_stages": n_stages,
    }
