"""Command-line front end: solve, simulate and sweep from a JSON config.

A config is one JSON document::

    {
      "channel": {"alpha": 0.3, "delay": {"kind": "constant", "c": 6}},
      "solver": {"eps2": 1e-7},
      "sim": {"horizon": 1e6, "replications": 20, "seed": 1},
      "sweep": {"parameter": "alpha", "values": [0, 0.3, 0.6]},
      "policies": ["optimal", "age", "zerowait"],
      "output": "results.csv"
    }

Only ``channel`` is required. Without ``sim`` nothing is simulated and the
sim_* columns stay empty. ``runtime_s`` is only filled in when
``"timing": true`` because wall-clock times would break byte-identical
reruns.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import numbers
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .channel import ChannelModel
from .errors import ConfigError, SolverError
from .sim import AgeThreshold, SignalAwareThreshold, SimConfig, ZeroWait, run_experiment
from .solver import SolverConfig, result_record, solve_age_opt, solve_mse_opt

COLUMNS = ["sweep_param", "sweep_value", "mse_opt", "v_opt", "age_opt", "age_threshold",
           "sim_mse_optimal", "sim_mse_age", "sim_mse_zerowait",
           "ci_optimal", "ci_age", "ci_zerowait", "runtime_s"]
POLICIES = ("optimal", "age", "zerowait")
TOP_KEYS = {"channel", "solver", "sim", "sweep", "policies", "output", "timing"}


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return f"{x:.12g}"


# --------------------------------------------------------------------------
# config handling

def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _numbers_only(obj, where, problems):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in ("kind", "parameter", "policies", "output"):
                continue
            _numbers_only(v, f"{where}.{k}", problems)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _numbers_only(v, f"{where}[{i}]", problems)
    elif obj is not None and (isinstance(obj, bool) or not isinstance(obj, numbers.Number)):
        problems.append(f"{where}: expected a number, got {obj!r}")


def point_channel(cfg, param, value):
    """Channel dict at one sweep point."""
    ch = copy.deepcopy(cfg["channel"])
    if param == "alpha":
        ch["alpha"] = value
    elif param == "sigma":
        ch["delay"]["sigma"] = value
    return ch


def sweep_points(cfg):
    sw = cfg.get("sweep")
    if not sw:
        return [(None, None)]
    return [(sw["parameter"], v) for v in sw["values"]]


def check_config(cfg):
    """Every problem found in ``cfg`` (empty list if it is valid)."""
    problems = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    for k in sorted(set(cfg) - TOP_KEYS):
        problems.append(f"unknown top-level key {k!r}")
    if "channel" not in cfg:
        problems.append("missing 'channel'")
    _numbers_only({k: v for k, v in cfg.items() if k in ("channel", "solver", "sim")},
                  "config", problems)
    if problems:
        return problems

    try:
        ch = ChannelModel.from_dict(cfg["channel"])
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append(f"channel: {exc}")
        ch = None

    try:
        SolverConfig.from_dict(cfg.get("solver"))
    except (ConfigError, TypeError) as exc:
        problems.append(f"solver: {exc}")

    pol = cfg.get("policies", list(POLICIES))
    if not isinstance(pol, list) or not pol:
        problems.append("policies: need at least one of 'optimal', 'age', 'zerowait'")
    else:
        for p in pol:
            if p not in POLICIES:
                problems.append(f"policies: unknown policy {p!r}")

    sw = cfg.get("sweep")
    if sw is not None:
        if not isinstance(sw, dict) or sw.get("parameter") not in ("alpha", "sigma"):
            problems.append("sweep.parameter must be 'alpha' or 'sigma'")
        elif not isinstance(sw.get("values"), list) or not sw["values"]:
            problems.append("sweep.values must be a non-empty list")
        else:
            if sw["parameter"] == "sigma" and ch is not None and ch.delay.kind != "lognormal":
                problems.append("a sigma sweep needs a lognormal delay")
            for v in sw["values"]:
                if isinstance(v, bool) or not isinstance(v, numbers.Number):
                    problems.append(f"sweep value {v!r} is not a number")
                    continue
                try:
                    ChannelModel.from_dict(point_channel(cfg, sw["parameter"], v))
                except (ConfigError, TypeError, ValueError) as exc:
                    problems.append(f"sweep {sw['parameter']}={v}: {exc}")

    if "sim" in cfg:
        try:
            sc = SimConfig.from_dict(cfg["sim"])
            sc.validate(ch.delay if ch is not None else None)
        except (ConfigError, TypeError) as exc:
            problems.append(f"sim: {exc}")
    return problems


def effective_config(cfg):
    """``cfg`` with every default filled in."""
    out = {"channel": ChannelModel.from_dict(cfg["channel"]).to_dict()}
    ey = ChannelModel.from_dict(cfg["channel"]).delay.mean
    sol = SolverConfig.from_dict(cfg.get("solver")).__dict__.copy()
    if sol["eps2"] is None:
        sol["eps2"] = 1e-7 * ey
    out["solver"] = sol
    if "sim" in cfg:
        sim = SimConfig.from_dict(cfg["sim"])
        out["sim"] = dict(sim.__dict__, dt=sim.resolved_dt(ChannelModel.from_dict(cfg["channel"]).delay))
    out["sweep"] = cfg.get("sweep")
    out["policies"] = cfg.get("policies", list(POLICIES))
    out["output"] = cfg.get("output")
    out["timing"] = bool(cfg.get("timing", False))
    return out


def _require_valid(cfg):
    problems = check_config(cfg)
    if problems:
        raise ConfigError("; ".join(problems))


# --------------------------------------------------------------------------
# one sweep point

def point_seed(base, index):
    """Seed for sweep point ``index``, derived only from (base, index)."""
    ss = np.random.SeedSequence(int(base), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_policy(name, res, age):
    if name == "optimal":
        return SignalAwareThreshold(res.v)
    if name == "age":
        return AgeThreshold(age.threshold)
    return ZeroWait()


def run_point(cfg, param, value, index, base_seed):
    """Solve and simulate one sweep point; returns (row dict, diagnostics)."""
    t0 = time.perf_counter()
    ch_dict = point_channel(cfg, param, value)
    ch = ChannelModel.from_dict(ch_dict)
    res = solve_mse_opt(ch, SolverConfig.from_dict(cfg.get("solver")))
    age = solve_age_opt(ch)
    row = {"sweep_param": param or "", "sweep_value": value,
           "mse_opt": res.mse_opt, "v_opt": res.v,
           "age_opt": age.age_opt, "age_threshold": age.threshold}
    diag = {"index": index, "sweep_param": param, "sweep_value": value,
            "channel": ch.to_dict(), **result_record(res, age),
            "age_zero_wait": age.is_zero_wait, "simulations": {}}
    if "sim" in cfg:
        sim_dict = dict(cfg["sim"])
        sim_dict["seed"] = point_seed(base_seed, index)
        sc = SimConfig.from_dict(sim_dict)
        for name in cfg.get("policies", list(POLICIES)):
            out = run_experiment(make_policy(name, res, age), ch, sc)
            row[f"sim_mse_{name}"] = out.avg_mse
            row[f"ci_{name}"] = out.ci_halfwidth_mse
            diag["simulations"][name] = {
                "avg_mse": out.avg_mse, "ci_halfwidth_mse": out.ci_halfwidth_mse,
                "avg_age": out.avg_age, "ci_halfwidth_age": out.ci_halfwidth_age,
                "sampling_rate": out.sampling_rate, "successful_rate": out.successful_rate,
                "seed": sc.seed}
    if cfg.get("timing"):
        row["runtime_s"] = time.perf_counter() - t0
    return row, diag


def _point_job(args):
    cfg, param, value, index, base_seed = args
    try:
        return "ok", run_point(cfg, param, value, index, base_seed)
    except (SolverError, ConfigError, FloatingPointError) as exc:
        return "error", f"{type(exc).__name__}: {exc}"


def _point_label(index, param, value):
    return f"sweep point {index}" + (f" ({param}={value})" if param else "")


def run_sweep(cfg, out_path, base_seed, parallel=1, log=None):
    """Write one CSV row per sweep point, in order, flushing after each.

    Returns (exit status, diagnostics). On the first failing point the rows
    already written stay in the file.
    """
    log = sys.stderr if log is None else log
    points = sweep_points(cfg)
    jobs = [(cfg, p, v, i, base_seed) for i, (p, v) in enumerate(points)]
    diags = []
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        fh.flush()
        if parallel > 1:
            pool = ProcessPoolExecutor(max_workers=parallel)
            results = pool.map(_point_job, jobs)
        else:
            pool = None
            results = map(_point_job, jobs)
        try:
            for (p, v, i), (status, payload) in zip(((j[1], j[2], j[3]) for j in jobs), results):
                if status == "error":
                    print(f"error: {_point_label(i, p, v)}: {payload}", file=log)
                    return 1, diags
                row, diag = payload
                w.writerow([fmt(row.get(c)) for c in COLUMNS])
                fh.flush()
                diags.append(diag)
                print(f"done: {_point_label(i, p, v)}", file=log)
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    return 0, diags


# --------------------------------------------------------------------------
# subcommands

def _emit(obj, out_path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    if out_path:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _clean(x):
    """Replace non-finite floats (JSON has no NaN) by None."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def cmd_validate(args, cfg):
    problems = check_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return 1
    _emit({"valid": True, "effective": effective_config(cfg)}, args.out)
    return 0


def cmd_solve(args, cfg):
    _require_valid(cfg)
    ch = ChannelModel.from_dict(cfg["channel"])
    res = solve_mse_opt(ch, SolverConfig.from_dict(cfg.get("solver")))
    age = solve_age_opt(ch)
    _emit(_clean(dict(result_record(res, age), channel=ch.to_dict())), args.out)
    return 0


def cmd_solve_age(args, cfg):
    _require_valid(cfg)
    ch = ChannelModel.from_dict(cfg["channel"])
    age = solve_age_opt(ch)
    _emit({"channel": ch.to_dict(), "age_opt": age.age_opt, "age_threshold": age.threshold,
           "is_zero_wait": age.is_zero_wait}, args.out)
    return 0


def cmd_simulate(args, cfg):
    _require_valid(cfg)
    if "sim" not in cfg:
        raise ConfigError("simulate needs a 'sim' section")
    _, diag = run_point({k: v for k, v in cfg.items() if k != "sweep"}, None, None, 0, _seed(args, cfg))
    _emit(_clean(diag), args.out)
    return 0


def cmd_sweep(args, cfg):
    _require_valid(cfg)
    out = args.out or cfg.get("output")
    if not out:
        raise ConfigError("sweep needs --out or an 'output' entry in the config")
    status, diags = run_sweep(cfg, out, _seed(args, cfg), args.parallel)
    summary = out[:-4] + ".json" if out.endswith(".csv") else out + ".json"
    _emit(_clean({"config": effective_config(cfg), "base_seed": _seed(args, cfg),
                  "complete": status == 0, "points": diags}), summary)
    return status


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return int(cfg.get("sim", {}).get("seed", 0))


COMMANDS = {"solve": cmd_solve, "solve-age": cmd_solve_age, "simulate": cmd_simulate,
            "sweep": cmd_sweep, "validate": cmd_validate}


def build_parser():
    ap = argparse.ArgumentParser(prog="wiener-sampler",
                                 description="Optimal sampling of a Wiener process over a lossy channel.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output path (CSV for sweep, JSON otherwise; default stdout)")
        p.add_argument("--seed", type=int, help="base seed, overrides sim.seed")
        p.add_argument("--parallel", type=int, default=1, help="sweep points run concurrently")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.parallel < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
