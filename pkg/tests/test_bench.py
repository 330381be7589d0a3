import csv
import json

import numpy as np
import pytest

from robustlr.bench import ExperimentConfig, run_experiment, sample_size, write_report
from robustlr.cli import main
from robustlr.errors import ConfigError

NUMERIC = ("error", "iterations", "removed_clean", "removed_corrupt", "delta_trajectory")


def small(**kw):
    base = dict(d=5, n=3000, trials=2, estimators=["ols", "main", "basic"], basic={"tail_exp_scale": 2.0})
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize(
    "kw",
    [
        dict(estimators=[]),
        dict(estimators=["lasso"]),
        dict(trials=0),
        dict(grids={"epsilon": [0.1, 0.6]}),
        dict(grids={"gamma": [1]}),
        dict(adversary="nope"),
        dict(grids={"beta_norm": [-1.0]}),
    ],
)
def test_config_rejected(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_from_dict_unknown_key():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"d": 3, "colour": "red"})


def test_sample_size_rounding():
    assert sample_size(20, 0.1, 10**6) == 100_000
    assert sample_size(20, 0.02, 10**5) == 100_000


def test_grid_points():
    cfg = small(grids={"epsilon": [0.05, 0.1], "beta_norm": [0, 10]})
    pts = cfg.points()
    assert len(pts) == 4
    assert {(p["epsilon"], p["beta_norm"]) for p in pts} == {(0.05, 0), (0.05, 10), (0.1, 0), (0.1, 10)}


def test_accounting_identity():
    rep = run_experiment(small(grids={"epsilon": [0.05, 0.1]}))
    assert len(rep.rows) == 2 * 2 * 3
    for r in rep.rows:
        for s in r["steps"]:
            assert s["removed_clean"] + s["removed_corrupt"] == s["removed"]
        if r["estimator"] != "ols":
            traj = r["delta_trajectory"]
            assert len(traj) == len(r["steps"]) + 1
    assert any(r["steps"] for r in rep.rows)


def test_rerun_identical(tmp_path):
    cfg = small()
    a = write_report(run_experiment(cfg), tmp_path)
    b = write_report(run_experiment(cfg), tmp_path)
    assert a.name == "run-0001" and b.name == "run-0002"

    def cols(run):
        with open(run / "trials.csv", newline="") as fh:
            return [{k: r[k] for k in NUMERIC} for r in csv.DictReader(fh)]

    assert cols(a) == cols(b)
    summary = json.loads((a / "summary.json").read_text())
    assert summary["points"] and "log_error_vs_log_eps_slope" in summary
    assert json.loads((a / "config.json").read_text())["config"]["d"] == 5


def test_parallel_matches_serial():
    cfg = small(trials=3)
    ser = run_experiment(cfg, threads=1)
    par = run_experiment(cfg, threads=2)
    key = lambda r: (r["trial"], r["estimator"])  # noqa: E731
    for x, y in zip(sorted(ser.rows, key=key), sorted(par.rows, key=key)):
        assert x["error"] == y["error"] and x["steps"] == y["steps"]


def test_failure_rows_flagged():
    rep = run_experiment(small(n=4, d=5, estimators=["main", "ols"]))
    assert all(r["failed"] for r in rep.rows if r["estimator"] == "main")
    assert all(np.isnan(r["error"]) for r in rep.rows if r["failed"])


def test_slope_reported():
    eps = [0.05, 0.1, 0.2]
    rep = run_experiment(small(grids={"epsilon": eps}, estimators=["ols"], trials=3))
    med = [np.median([r["error"] for r in rep.rows if r["grid_epsilon"] == e]) for e in eps]
    x, y = np.log(eps), np.log(med)
    want = ((x - x.mean()) @ (y - y.mean())) / ((x - x.mean()) @ (x - x.mean()))
    assert rep.summary()["log_error_vs_log_eps_slope"]["ols"] == pytest.approx(want, rel=1e-9)


def test_cli_bench(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 4, "n": 2000, "trials": 2, "estimators": ["ols", "main"]}))
    out = tmp_path / "out"
    assert main(["bench", "--config", str(cfg), "--eps-grid", "0.05", "0.1", "--out", str(out)]) == 0
    run = out / "run-0001"
    with open(run / "trials.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 2
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "run-0002").is_dir()


def test_cli_bench_empty_estimators(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"estimators": []}))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 2
