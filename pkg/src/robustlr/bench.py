"""Seeded Monte Carlo experiments comparing the estimators under contamination."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, RobustLRError
from .filter_basic import BasicFilterConfig, estimate_basic, estimate_boosted
from .filter_main import MainFilterConfig, estimate_main, ols
from .io import write_json
from .model import RegressionInstance, ell2_error
from .robust_stats import progress_trajectory, removal_counts
from .synth import (
    AdaptiveShift,
    AdversarySpec,
    GaussianNoise,
    HuberAdditive,
    LabelFlip,
    NoAdversary,
    corrupt,
    generate_clean,
)

ESTIMATORS = ("ols", "basic", "boosted", "main")
ADVERSARIES = ("none", "huber_additive", "adaptive_shift", "label_flip")
GRID_KEYS = ("epsilon", "d", "beta_norm", "n")


@dataclass
class ExperimentConfig:
    d: int = 20
    n: int | None = None  # None: 50 d / eps^2, capped at n_cap
    n_cap: int = 100_000
    sigma: float = 1.0
    beta_norm: float = 5.0
    epsilon: float = 0.1
    tau: float = 0.1
    adversary: str = "adaptive_shift"
    estimators: list[str] = field(default_factory=lambda: ["ols", "main"])
    trials: int = 20
    seed: int = 0
    grids: dict[str, list] = field(default_factory=dict)
    output_path: str | None = None
    boosted_rounds: int | None = None
    basic: dict = field(default_factory=dict)
    main: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if self.adversary not in ADVERSARIES:
            raise ConfigError(f"unknown adversary {self.adversary!r}")
        unknown = set(self.grids) - set(GRID_KEYS)
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        for point in self.points():
            _check_point(point)

    def points(self) -> list[dict]:
        base = {"epsilon": self.epsilon, "d": self.d, "beta_norm": self.beta_norm, "n": self.n}
        keys = [k for k in GRID_KEYS if k in self.grids]
        out = []
        for combo in itertools.product(*(self.grids[k] for k in keys)):
            p = dict(base)
            p.update(zip(keys, combo))
            out.append(p)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)


def _check_point(p: dict) -> None:
    if not 0 <= p["epsilon"] < 0.5:
        raise ConfigError(f"epsilon={p['epsilon']} outside [0, 1/2)")
    if int(p["d"]) < 1:
        raise ConfigError("d must be at least 1")
    if p["beta_norm"] < 0:
        raise ConfigError("beta_norm must be nonnegative")
    if p["n"] is not None and int(p["n"]) < 1:
        raise ConfigError("n must be at least 1")


def sample_size(d: int, epsilon: float, cap: int) -> int:
    if epsilon <= 0:
        return cap
    return min(int(round(50 * d / epsilon**2)), cap)


def adversary_spec(name: str, epsilon: float) -> AdversarySpec:
    kind = {
        "none": NoAdversary,
        "huber_additive": lambda: HuberAdditive(GaussianNoise()),
        "adaptive_shift": AdaptiveShift,
        "label_flip": LabelFlip,
    }[name]()
    return AdversarySpec(kind, epsilon)


def make_trial(cfg: ExperimentConfig, point: dict, trial: int):
    """Ground truth, clean sample and corrupted sample for one trial."""
    seed = cfg.seed + trial
    d = int(point["d"])
    eps = float(point["epsilon"])
    n = int(point["n"]) if point["n"] is not None else sample_size(d, eps, cfg.n_cap)
    rng = np.random.default_rng([seed, d, 7919])
    direction = rng.standard_normal(d)
    beta = float(point["beta_norm"]) * direction / np.linalg.norm(direction)
    inst = RegressionInstance(beta, cfg.sigma, epsilon=eps, tau=cfg.tau, seed=seed)
    clean = generate_clean(inst, n)
    data = corrupt(clean, adversary_spec(cfg.adversary, eps), seed=seed + 104729)
    return inst, data


def _rounds(cfg: ExperimentConfig, beta_norm: float) -> int:
    if cfg.boosted_rounds is not None:
        return cfg.boosted_rounds
    return max(1, math.ceil(math.log2(max(beta_norm, 1.0)))) + 3


def run_estimator(name: str, data, inst: RegressionInstance, cfg: ExperimentConfig, point: dict) -> dict:
    eps = float(point["epsilon"])
    row = {"estimator": name, "failed": False, "message": "", "iterations": 0, "stalled": False}
    t0 = time.perf_counter()
    try:
        audits = []
        if name == "ols":
            beta_hat = ols(data)
        elif name == "main":
            beta_hat, audit = estimate_main(data, MainFilterConfig(eps, cfg.tau, **cfg.main))
            audits = [audit]
        elif name == "basic":
            beta_hat, audit = estimate_basic(data, BasicFilterConfig(eps, cfg.tau, **cfg.basic))
            audits = [audit]
        else:
            beta_hat, audits = estimate_boosted(
                data, BasicFilterConfig(eps, cfg.tau, **cfg.basic), _rounds(cfg, float(point["beta_norm"]))
            )
        row["error"] = ell2_error(beta_hat, inst.beta)
    except RobustLRError as exc:
        row.update(failed=True, message=f"{type(exc).__name__}: {exc}", error=float("nan"))
        audits = []
    row["wall_time"] = time.perf_counter() - t0
    # mask audit; only the first basic run of a boosted fit filters the raw labels
    steps = []
    if audits and name != "boosted":
        audit = audits[0]
        removed = audit.removed_per_iteration()
        n_before = data.n
        for rem in removed:
            c, b = removal_counts(data, rem)
            steps.append({"n_before": n_before, "removed": len(rem), "removed_clean": c, "removed_corrupt": b})
            n_before -= len(rem)
        row["delta_trajectory"] = progress_trajectory(data, removed)
        row["iterations"] = audit.iterations
        row["stalled"] = audit.stalled
    elif audits:
        row["iterations"] = sum(a.iterations for a in audits)
        row["stalled"] = any(a.stalled for a in audits)
        row["delta_trajectory"] = []
    else:
        row["delta_trajectory"] = []
    row["steps"] = steps
    row["removed_clean"] = sum(s["removed_clean"] for s in steps)
    row["removed_corrupt"] = sum(s["removed_corrupt"] for s in steps)
    row["n"] = data.n
    return row


def run_trial(cfg: ExperimentConfig, point: dict, trial: int) -> list[dict]:
    inst, data = make_trial(cfg, point, trial)
    rows = []
    for name in cfg.estimators:
        row = run_estimator(name, data, inst, cfg, point)
        row.update({"trial": trial, "seed": cfg.seed + trial, **{f"grid_{k}": point[k] for k in GRID_KEYS}})
        rows.append(row)
    return rows


def _run_job(args):
    cfg_dict, point, trial = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), point, trial)


@dataclass
class ExperimentReport:
    config: dict
    rows: list[dict]
    version: str = __version__

    def summary(self) -> dict:
        groups: dict = {}
        for r in self.rows:
            key = (r["estimator"],) + tuple(r[f"grid_{k}"] for k in GRID_KEYS)
            groups.setdefault(key, []).append(r)
        points = []
        for key, rs in sorted(groups.items(), key=lambda kv: tuple(str(x) for x in kv[0])):
            errs = [r["error"] for r in rs if not r["failed"]]
            points.append(
                {
                    "estimator": key[0],
                    **{k: v for k, v in zip(GRID_KEYS, key[1:])},
                    "median_error": float(np.median(errs)) if errs else None,
                    "failures": sum(r["failed"] for r in rs),
                    "trials": len(rs),
                }
            )
        slopes = {}
        for est in {p["estimator"] for p in points}:
            pts = [(p["epsilon"], p["median_error"]) for p in points if p["estimator"] == est]
            pts = [(e, m) for e, m in pts if e > 0 and m is not None and m > 0]
            if len({e for e, _ in pts}) >= 2:
                x = np.log([e for e, _ in pts])
                y = np.log([m for _, m in pts])
                slopes[est] = float(np.polyfit(x, y, 1)[0])
        return {"version": self.version, "points": points, "log_error_vs_log_eps_slope": slopes}

    def filter_steps(self, estimators=("main", "basic")) -> list[dict]:
        return [s for r in self.rows if r["estimator"] in estimators for s in r["steps"]]


CSV_COLUMNS = (
    "grid_epsilon", "grid_d", "grid_beta_norm", "grid_n", "trial", "seed", "estimator", "n",
    "error", "iterations", "stalled", "removed_clean", "removed_corrupt", "wall_time",
    "failed", "message", "delta_trajectory",
)


def _threads() -> int:
    raw = os.environ.get("ROBUSTLR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"ROBUSTLR_THREADS must be an integer, got {raw!r}") from exc


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """Run every grid point and trial; trial ``t`` uses seed ``cfg.seed + t``."""
    cfg.validate()
    threads = threads or _threads()
    jobs = [(cfg.to_dict(), p, t) for p in cfg.points() for t in range(cfg.trials)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [run_trial(cfg, p, t) for _, p, t in jobs]
    rows = [r for rs in results for r in rs]
    return ExperimentReport(cfg.to_dict(), rows)


def write_report(report: ExperimentReport, out_dir) -> Path:
    """Write ``trials.csv``, ``summary.json`` and ``config.json`` into a fresh
    ``run-NNNN`` subdirectory, so earlier runs are never overwritten."""
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    k = 1
    while (base / f"run-{k:04d}").exists():
        k += 1
    run = base / f"run-{k:04d}"
    run.mkdir()
    with open(run / "trials.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in report.rows:
            r = dict(r)
            r["delta_trajectory"] = json.dumps(r.get("delta_trajectory", []))
            w.writerow(r)
    write_json(report.summary(), run / "summary.json")
    write_json({"config": report.config, "version": report.version}, run / "config.json")
    write_json({"rows": report.rows}, run / "audit.json")
    return run
