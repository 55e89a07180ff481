import csv
import json
import subprocess
import sys

import pytest

from wiener_sampler import ChannelModel, Constant, SolverConfig, solve_age_opt, solve_mse_opt
from wiener_sampler import cli
from wiener_sampler.errors import SolverError

BASE = {
    "channel": {"alpha": 0.3, "delay": {"kind": "constant", "c": 1.0}},
    "solver": {"n_grid": 801},
    "sim": {"horizon": 2000.0, "replications": 2, "seed": 7},
    "sweep": {"parameter": "alpha", "values": [0.0, 0.3, 0.6]},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("patch,needle", [
    ({"channel": {"alpha": 1.0, "delay": {"kind": "constant", "c": 1.0}}}, "alpha"),
    ({"sim": {"horizon": 100.0, "dt": -1.0}}, "dt"),
    ({"policies": []}, "policies"),
    ({"policies": ["optimal", "greedy"]}, "greedy"),
    ({"sweep": {"parameter": "sigma", "values": [1.0]}}, "lognormal"),
    ({"sweep": {"parameter": "alpha", "values": [0.2, "x"]}}, "not a number"),
    ({"solver": {"n_grid": "many"}}, "expected a number"),
    ({"extra": 1}, "extra"),
])
def test_validate_rejects(tmp_path, capsys, patch, needle):
    cfg = dict(BASE, **patch)
    assert cli.main(["validate", "--config", _write(tmp_path, cfg)]) == 1
    assert needle in capsys.readouterr().err


def test_validate_prints_effective_config(tmp_path, capsys):
    assert cli.main(["validate", "--config", _write(tmp_path, BASE)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["valid"]
    assert out["effective"]["solver"]["eps2"] == pytest.approx(1e-7)
    assert out["effective"]["sim"]["dt"] == pytest.approx(1e-3)


def test_bad_flags(tmp_path):
    path = _write(tmp_path, BASE)
    assert cli.main(["sweep", "--config", path, "--parallel", "0"]) == 2
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json")]) == 1


@pytest.fixture(scope="module")
def sweep_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweep")
    cfg = _write(d, BASE)
    out = str(d / "a.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", out]) == 0
    return d, cfg, out


def test_sweep_columns_and_rows(sweep_csv):
    _, _, out = sweep_csv
    with open(out) as fh:
        header = fh.readline().strip().split(",")
    assert header == cli.COLUMNS
    rows = _rows(out)
    assert [float(r["sweep_value"]) for r in rows] == [0.0, 0.3, 0.6]
    assert all(r["sweep_param"] == "alpha" for r in rows)
    assert all(r["runtime_s"] == "" for r in rows)
    mse = [float(r["mse_opt"]) for r in rows]
    assert mse[0] < mse[1] < mse[2]
    for r in rows:
        assert float(r["ci_optimal"]) > 0


def test_sweep_row_matches_library(sweep_csv):
    _, _, out = sweep_csv
    row = _rows(out)[1]
    ch = ChannelModel(0.3, Constant(1.0))
    res = solve_mse_opt(ch, SolverConfig(n_grid=801))
    age = solve_age_opt(ch)
    assert row["mse_opt"] == cli.fmt(res.mse_opt)
    assert row["v_opt"] == cli.fmt(res.v)
    assert row["age_opt"] == cli.fmt(age.age_opt)
    summary = json.loads(open(out[:-4] + ".json").read())
    assert summary["complete"] and len(summary["points"]) == 3


def test_sweep_rerun_byte_identical(sweep_csv):
    d, cfg, out = sweep_csv
    again = str(d / "b.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", again]) == 0
    assert open(out, "rb").read() == open(again, "rb").read()
    par = str(d / "c.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", par, "--parallel", "2"]) == 0
    assert open(out, "rb").read() == open(par, "rb").read()
    other = str(d / "e.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", other, "--seed", "8"]) == 0
    assert open(out, "rb").read() != open(other, "rb").read()


def test_sweep_error_keeps_partial_csv(tmp_path, capsys, monkeypatch):
    real = cli.solve_mse_opt

    def flaky(ch, cfg=None):
        if ch.alpha == 0.6:
            raise SolverError("no bracket")
        return real(ch, cfg)

    monkeypatch.setattr(cli, "solve_mse_opt", flaky)
    cfg = dict(BASE)
    cfg.pop("sim")
    out = str(tmp_path / "p.csv")
    assert cli.main(["sweep", "--config", _write(tmp_path, cfg), "--out", out]) == 1
    err = capsys.readouterr().err
    assert "sweep point 2 (alpha=0.6)" in err and "no bracket" in err
    assert len(_rows(out)) == 2
    assert not json.loads(open(out[:-4] + ".json").read())["complete"]


def test_sigma_sweep_without_sim(tmp_path):
    cfg = {"channel": {"alpha": 0.65, "delay": {"kind": "lognormal", "sigma": 1.0}},
           "solver": {"n_grid": 401, "eps2": 1e-4},
           "sweep": {"parameter": "sigma", "values": [0.5, 1.0]}}
    out = str(tmp_path / "s.csv")
    assert cli.main(["sweep", "--config", _write(tmp_path, cfg), "--out", out]) == 0
    rows = _rows(out)
    assert rows[0]["sim_mse_optimal"] == ""
    # heavier delay tails cost more under both policies
    assert float(rows[0]["mse_opt"]) < float(rows[1]["mse_opt"])
    assert float(rows[0]["age_opt"]) < float(rows[1]["age_opt"])


def test_solve_and_simulate_commands(tmp_path, capsys):
    cfg = {k: v for k, v in BASE.items() if k != "sweep"}
    cfg["policies"] = ["zerowait"]
    path = _write(tmp_path, cfg)
    assert cli.main(["solve", "--config", path]) == 0
    sol = json.loads(capsys.readouterr().out)
    assert sol["mse_opt"] > sol["channel"]["delay"]["c"]
    assert cli.main(["solve-age", "--config", path]) == 0
    assert json.loads(capsys.readouterr().out)["is_zero_wait"]
    out = str(tmp_path / "sim.json")
    assert cli.main(["simulate", "--config", path, "--out", out]) == 0
    sims = json.loads(open(out).read())["simulations"]
    assert set(sims) == {"zerowait"}


def test_module_entry_point(tmp_path):
    path = _write(tmp_path, BASE)
    r = subprocess.run([sys.executable, "-m", "wiener_sampler", "validate", "--config", path],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["valid"]
