"""Command-line entry point: ``robustlr <subcommand> ...``.

Exit codes: 0 success, 1 estimator failure, 2 usage, configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import ESTIMATORS, ExperimentConfig, adversary_spec, run_experiment, write_report
from .errors import ConfigError, IoError, RobustLRError
from .filter_basic import BasicFilterConfig, estimate_basic, estimate_boosted
from .filter_main import MainFilterConfig, estimate_main, ols
from .io import (
    instance_from_dict,
    instance_to_dict,
    read_dataset_csv,
    read_json,
    write_dataset_csv,
    write_json,
)
from .model import RegressionInstance, ell2_error
from .sq_hard import HardInstanceSpec, a_mu, mixture_p1, mixture_p2, mixture_p3, mixture_p4, p4_mu_limit, hard_instance
from .synth import corrupt, generate_clean

EXIT_OK, EXIT_ESTIMATOR, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _eps(value: str) -> float:
    return float(value)


def _check_eps(eps: float) -> None:
    if not 0 <= eps < 0.5:
        raise ConfigError(f"--eps must lie in [0, 1/2), got {eps}")


def _config_defaults(args) -> dict:
    if getattr(args, "config", None):
        cfg = read_json(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        return cfg
    return {}


# gen / corrupt ----------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _config_defaults(args)
    d = args.d if args.d is not None else int(cfg.get("d", 10))
    n = args.n if args.n is not None else int(cfg.get("n", 1000))
    eps = args.eps if args.eps is not None else float(cfg.get("epsilon", 0.0))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    _check_eps(eps)
    if d < 1 or n < 1:
        raise ConfigError("--d and --n must be positive")
    rng = np.random.default_rng([seed, d, 7919])
    direction = rng.standard_normal(d)
    beta = args.beta_norm * direction / np.linalg.norm(direction)
    inst = RegressionInstance(beta, args.sigma, epsilon=eps, tau=args.tau, seed=seed)
    data = corrupt(generate_clean(inst, n), adversary_spec(args.adversary, eps), seed=seed + 104729)
    write_dataset_csv(data, args.out, include_mask=True)
    write_json(instance_to_dict(inst), args.instance_out)
    print(f"wrote {n} rows ({int(data.outlier_mask.sum())} corrupted) to {args.out}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    _check_eps(args.eps)
    data = read_dataset_csv(args.data)
    out = corrupt(data, adversary_spec(args.adversary, args.eps), seed=args.seed)
    write_dataset_csv(out, args.out, include_mask=True)
    print(f"corrupted {int(out.outlier_mask.sum())} of {out.n} rows into {args.out}")
    return EXIT_OK


# estimate -----------------------------------------------------------------------


def cmd_estimate(args) -> int:
    _check_eps(args.eps)
    data = read_dataset_csv(args.data).without_mask()
    inst = instance_from_dict(read_json(args.instance)) if args.instance else None
    audit_json: dict = {"estimator": args.estimator, "epsilon": args.eps, "tau": args.tau}
    basic_cfg = BasicFilterConfig(args.eps, args.tau, tail_exp_scale=args.tail_exp_scale)
    try:
        if args.estimator == "ols":
            beta_hat = ols(data)
        elif args.estimator == "main":
            beta_hat, audit = estimate_main(data, MainFilterConfig(args.eps, args.tau))
            audit_json["audit"] = audit.to_dict()
        elif args.estimator == "basic":
            beta_hat, audit = estimate_basic(data, basic_cfg)
            audit_json["audit"] = audit.to_dict()
        else:
            rounds = args.rounds or 5
            beta_hat, audits = estimate_boosted(data, basic_cfg, rounds)
            audit_json["audit"] = [a.to_dict() for a in audits]
    except ConfigError:
        raise
    except RobustLRError as exc:
        print(f"estimator failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    audit_json["beta_hat"] = beta_hat.tolist()
    print("beta_hat: " + " ".join(f"{b:.10g}" for b in beta_hat))
    if inst is not None:
        err = ell2_error(beta_hat, inst.beta)
        audit_json["error"] = err
        print(f"l2 error: {err:.6g}")
    if args.audit_out:
        write_json(audit_json, args.audit_out)
    return EXIT_OK


# bench ------------------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg = _config_defaults(args)
    if args.d is not None:
        cfg["d"] = args.d
    if args.n is not None:
        cfg["n"] = args.n
    if args.eps is not None:
        cfg["epsilon"] = args.eps
    if args.tau is not None:
        cfg["tau"] = args.tau
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.estimator:
        cfg["estimators"] = args.estimator
    if args.eps_grid:
        cfg.setdefault("grids", {})["epsilon"] = args.eps_grid
    if args.beta_norm_grid:
        cfg.setdefault("grids", {})["beta_norm"] = args.beta_norm_grid
    config = ExperimentConfig.from_dict(cfg)
    report = run_experiment(config)
    out = args.out or config.output_path or "bench-out"
    run_dir = write_report(report, out)
    print(json.dumps(report.summary(), indent=2))
    print(f"report written to {run_dir}")
    return EXIT_OK


# verify-moments / sqgen -------------------------------------------------------


def moment_grid() -> list[tuple[str, float, float, object]]:
    """Mixtures covering every constructor and every dispatch branch."""
    out = []
    for e in np.linspace(0.01, 0.41, 21):
        out.append(("P1", None, float(e), mixture_p1(float(e))))
    for e in np.linspace(0.35, 0.78, 21):
        out.append(("P2", None, float(e), mixture_p2(float(e))))
    for e in np.linspace(0.49, 0.99, 21):
        out.append(("P3", None, float(e), mixture_p3(float(e))))
    for e in (0.01, 0.05, 0.1, 0.3, 0.5):
        lim = p4_mu_limit(e)
        for mu in np.linspace(-lim, lim, 9):
            out.append(("P4", float(mu), e, mixture_p4(float(mu), e)))
        mus = np.concatenate([np.geomspace(lim * 1.0001, 0.3, 12), np.linspace(0.31, 0.69, 8), np.geomspace(0.7, 20, 8)])
        for mu in np.concatenate([mus, -mus]):
            out.append(("A", float(mu), e, a_mu(float(mu), e)[0]))
    return out


def max_moment_deviation(mix) -> float:
    m = np.array(mix.moments()) - np.array([0.0, 1.0, 0.0])
    return float(np.abs(m).max())


def cmd_verify_moments(args) -> int:
    grid = moment_grid()
    devs = [max_moment_deviation(m) for _, _, _, m in grid]
    worst = int(np.argmax(devs))
    report = {
        "count": len(grid),
        "max_abs_moment_deviation": devs[worst],
        "worst": {"family": grid[worst][0], "mu": grid[worst][1], "epsilon": grid[worst][2]},
        "tolerance": args.tol,
        "passed": devs[worst] <= args.tol,
    }
    if args.out:
        write_json(report, args.out)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_ESTIMATOR


def cmd_sqgen(args) -> int:
    if not 0 <= args.c1 <= 0.1:
        raise ConfigError(f"--c1 must lie in [0, 1/10], got {args.c1}")
    if not 0 < args.eps <= 0.5:
        raise ConfigError(f"--eps must lie in (0, 1/2], got {args.eps}")
    if args.d < 1 or args.n < 1:
        raise ConfigError("--d and --n must be positive")
    rng = np.random.default_rng([args.seed, 104723])
    v = rng.standard_normal(args.d)
    spec = HardInstanceSpec(v, args.eps, args.c1)
    data = hard_instance(spec, args.n, args.seed)
    write_dataset_csv(data, args.out, include_mask=False)
    answer = {
        "v": spec.v.tolist(),
        "beta": spec.beta.tolist(),
        "sigma": spec.sigma,
        "epsilon": spec.epsilon,
        "c1": spec.c1,
        "c2": spec.c2,
        "seed": args.seed,
        "covariance_kind": "diagonal-spiked",
    }
    write_json(answer, args.answer)
    print(f"wrote {args.n} rows to {args.out}; hidden direction in {args.answer}")
    return EXIT_OK


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustlr", description="Robust linear regression under adversarial corruption.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a (corrupted) synthetic dataset")
    g.add_argument("--d", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--eps", type=_eps)
    g.add_argument("--tau", type=float, default=0.1)
    g.add_argument("--seed", type=int)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--beta-norm", type=float, default=1.0)
    g.add_argument("--adversary", default="adaptive_shift", choices=["none", "huber_additive", "adaptive_shift", "label_flip"])
    g.add_argument("--config")
    g.add_argument("--out", default="data.csv")
    g.add_argument("--instance-out", default="instance.json")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("corrupt", help="corrupt an existing dataset")
    c.add_argument("--data", required=True)
    c.add_argument("--eps", type=_eps, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--adversary", default="adaptive_shift", choices=["none", "huber_additive", "adaptive_shift", "label_flip"])
    c.add_argument("--out", default="corrupted.csv")
    c.set_defaults(func=cmd_corrupt)

    e = sub.add_parser("estimate", help="estimate beta from a dataset file")
    e.add_argument("--data", required=True)
    e.add_argument("--estimator", choices=ESTIMATORS, default="main")
    e.add_argument("--eps", type=_eps, default=0.1)
    e.add_argument("--tau", type=float, default=0.1)
    e.add_argument("--rounds", type=int)
    e.add_argument("--tail-exp-scale", type=float, default=16.0, help="scale of the basic filter's exponential tail term")
    e.add_argument("--instance")
    e.add_argument("--audit-out")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="run a seeded Monte Carlo experiment")
    b.add_argument("--config")
    b.add_argument("--d", type=int)
    b.add_argument("--n", type=int)
    b.add_argument("--eps", type=_eps)
    b.add_argument("--tau", type=float)
    b.add_argument("--seed", type=int)
    b.add_argument("--trials", type=int)
    b.add_argument("--estimator", action="append", choices=ESTIMATORS)
    b.add_argument("--eps-grid", type=float, nargs="+")
    b.add_argument("--beta-norm-grid", type=float, nargs="+")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify-moments", help="check the moment-matched mixtures")
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify_moments)

    s = sub.add_parser("sqgen", help="write a hard instance and its hidden direction")
    s.add_argument("--d", type=int, default=10)
    s.add_argument("--n", type=int, default=50000)
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--c1", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="hard.csv")
    s.add_argument("--answer", default="answer.json")
    s.set_defaults(func=cmd_sqgen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IoError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RobustLRError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
