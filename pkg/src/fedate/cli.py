"""Command-line interface.

Subcommands: ``simulate``, ``estimate``, ``advise`` and ``bench``. Exit code
0 on success, 2 on invalid input and 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_csv
from .errors import FedAteError, NumericalError, ValidationError
from .estimators import EstimatorId, parse_estimator
from .federation import FedAvgConfig, run_protocol
from .harness import DEFAULT_ESTIMATORS, ExperimentPlan, emit_replications, emit_report, run_monte_carlo
from .numerics import RngStream
from .scenarios import (
    ArmParams,
    ScenarioConfig,
    StudyParams,
    generate,
    list_presets,
    load_preset,
    load_scenario,
)
from .theory import ScenarioFlags, recommend

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def parse_fedavg(text: str | None) -> FedAvgConfig | None:
    """``"T=500,E=1,B=32,eta=auto"`` into a :class:`FedAvgConfig`."""
    if text is None:
        return None
    kw = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ValidationError(f"expected key=value in --fedavg, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        try:
            if key in ("T", "E"):
                kw[key] = int(val)
            elif key == "B":
                kw["B"] = None if val.lower() in ("none", "full") else int(val)
            elif key == "eta":
                kw["eta"] = val if val in ("auto", "global_E1", "local_T1") else float(val)
            elif key == "tol":
                kw["convergence_tol"] = None if val.lower() == "none" else float(val)
            elif key == "seed":
                kw["rng"] = RngStream(int(val), 1)
            else:
                raise ValidationError(f"unknown --fedavg key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad value for {key}: {val!r}") from None
    if kw.get("B") is not None and "rng" not in kw:
        kw["rng"] = RngStream(0, 1)
    return FedAvgConfig(**kw)


def _scenario(text: str) -> ScenarioConfig:
    if text in list_presets():
        return load_preset(text)
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        return load_scenario(path)
    raise ValidationError(f"unknown scenario {text!r}; presets: {', '.join(list_presets())}")


def _write_json(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = _scenario(args.scenario)
    if args.estimators == "all":
        names = list(DEFAULT_ESTIMATORS)
    else:
        names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    plan = ExperimentPlan(cfg, tuple(names), args.reps, args.seed, parse_fedavg(args.fedavg),
                          workers=args.workers)
    rows, raw = run_monte_carlo(plan, return_raw=True)
    out = Path(args.out)
    emit_report(rows, "json" if out.suffix == ".json" else "csv", out)
    if args.dump_reps:
        emit_replications(raw, args.dump_reps)
    return EXIT_OK


def cmd_estimate(args) -> int:
    fed = load_csv(args.data)
    eid, study = parse_estimator(args.estimator, args.adjusted)
    report = run_protocol(fed, eid, parse_fedavg(args.fedavg), record_log=True, study=study)
    payload = {
        "estimator": report.label,
        "tau_hat": report.tau_hat,
        "plugin_variance": report.plugin_variance,
        "comm": report.comm.to_dict(report.label),
    }
    _write_json(payload, args.out)
    return EXIT_OK


def cmd_advise(args) -> int:
    flags = ScenarioFlags(
        local_full_rank=args.local_full_rank,
        federated_full_rank=args.federated_full_rank or args.local_full_rank,
        same_covariate_distribution=args.same_x_dist,
        study_effects=args.study_effects,
        same_treatment_probabilities=args.same_p,
    )
    _write_json(recommend(flags).to_dict(), args.out)
    return EXIT_OK


def bench_scenario(d: int, K: int, n: int) -> ScenarioConfig:
    """Homogeneous scenario used to exercise protocols at a given width."""
    if d < 1 or K < 1:
        raise ValidationError("bench needs d >= 1 and K >= 1")
    beta = np.linspace(-1.0, 1.0, d)
    sigma = 0.5 * np.eye(d) + 0.5 * np.ones((d, d))
    n = max(n, 4 * (d + K + 2))
    studies = tuple(StudyParams(n, 0.5, np.zeros(d), sigma) for _ in range(K))
    return ScenarioConfig(d, 1.0, ArmParams(1.0, beta + 0.25), ArmParams(0.0, beta), studies,
                          min_arm_size=d + K + 1, name="bench")


def cmd_bench(args) -> int:
    eid, study = parse_estimator(args.estimator, args.adjusted)
    if eid is EstimatorId.LOCAL and study is None:
        study = 1
    fed = generate(bench_scenario(args.d, args.K, args.n), RngStream(args.seed))
    fedavg = None
    if args.T is not None:
        eta = "auto" if args.eta == "auto" else float(args.eta)
        fedavg = FedAvgConfig(T=args.T, eta=eta, convergence_tol=None)
    report = run_protocol(fed, eid, fedavg, record_log=True, study=study)
    payload = report.comm.to_dict(report.label)
    if not args.log:
        payload["log"] = []
    _write_json(payload, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedate", description="Federated ATE estimators for multi-study trials.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo experiment on a scenario")
    sim.add_argument("--scenario", required=True, help="preset name or scenario JSON file")
    sim.add_argument("--estimators", default="all", help="'all' or a comma-separated list")
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--fedavg", default=None, help="e.g. T=5000,E=1,eta=auto")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--dump-reps", default=None, help="per-replication CSV")
    sim.add_argument("--out", required=True, help="report path (.csv or .json)")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="run one estimator on a CSV dataset")
    est.add_argument("--data", required=True)
    est.add_argument("--estimator", required=True, help="e.g. Pool, MetaSW, Local:2")
    est.add_argument("--adjusted", action="store_true")
    est.add_argument("--fedavg", default=None)
    est.add_argument("--out", default=None, help="JSON path (stdout when omitted)")
    est.set_defaults(func=cmd_estimate)

    adv = sub.add_parser("advise", help="estimator recommendation from scenario flags")
    adv.add_argument("--local-full-rank", action="store_true", help="implies --federated-full-rank")
    adv.add_argument("--federated-full-rank", action="store_true")
    adv.add_argument("--same-x-dist", action="store_true")
    adv.add_argument("--study-effects", action="store_true")
    adv.add_argument("--same-p", action="store_true")
    adv.add_argument("--out", default=None)
    adv.set_defaults(func=cmd_advise)

    ben = sub.add_parser("bench", help="communication ledger of one protocol run")
    ben.add_argument("--estimator", required=True)
    ben.add_argument("--adjusted", action="store_true")
    ben.add_argument("--d", type=int, required=True)
    ben.add_argument("--K", type=int, default=5)
    ben.add_argument("--n", type=int, default=200, help="rows per study")
    ben.add_argument("--T", type=int, default=None, help="run exactly T FedAvg rounds")
    ben.add_argument("--eta", default="auto")
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--log", action="store_true", help="include the per-message log")
    ben.add_argument("--out", default=None)
    ben.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FedAteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
