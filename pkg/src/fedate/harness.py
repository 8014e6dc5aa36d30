"""Monte Carlo and bootstrap experiment runners with summary reports.

Replication ``r`` owns ``RngStream(base_seed, r)`` and results are reduced
in replication order, so output does not depend on how replications are
scheduled across worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FederatedDataset
from .errors import FedAteError, IoError, ValidationError
from .estimators import EstimatorId, estimate, parse_estimator
from .federation import FedAvgConfig
from .numerics import RngStream
from .scenarios import (
    ScenarioConfig,
    bootstrap_resample,
    generate,
    regenerate_outcomes,
    regenerated_ate,
    true_ate,
)

__all__ = [
    "DEFAULT_ESTIMATORS",
    "ExperimentPlan",
    "Regeneration",
    "SummaryRow",
    "ReplicationResults",
    "IoError",
    "resolve_estimators",
    "run_monte_carlo",
    "run_bootstrap",
    "summarize",
    "emit_report",
    "read_report",
    "emit_replications",
]

DEFAULT_ESTIMATORS = ("DM", "Pool", "MetaSW", "MetaIVW", "OneShotSW", "OneShotIVW", "GD")


@dataclass(frozen=True)
class Regeneration:
    """Outcome model redrawn on every bootstrap resample.

    Attributes
    ----------
    mode : {"linear", "polynomial"}
    theta1, theta0 : ndarray
    p_by_study : tuple of float
    noise_sd : float
    min_arm_size : int
    require_rank : bool
        Redraw treatment until each arm's design has full column rank.
    """

    mode: str
    theta1: np.ndarray
    theta0: np.ndarray
    p_by_study: tuple
    noise_sd: float = 1.0
    min_arm_size: int = 0
    require_rank: bool = True


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run and how many times.

    ``estimators`` holds identifiers such as ``"GD"`` or ``"Local:2"``;
    ``adjusted`` maps an identifier to ``True`` to run its study-effect
    adjusted counterpart instead.
    """

    scenario: ScenarioConfig | None = None
    estimators: tuple = DEFAULT_ESTIMATORS
    replications: int = 100
    base_seed: int = 0
    fedavg: FedAvgConfig | None = None
    adjusted: dict = field(default_factory=dict)
    truth: float | None = None
    regeneration: Regeneration | None = None
    workers: int = 1

    def __post_init__(self):
        if int(self.replications) < 1:
            raise ValidationError("replications must be >= 1")
        if not self.estimators:
            raise ValidationError("at least one estimator is required")
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass(frozen=True)
class SummaryRow:
    estimator_id: str
    mean: float
    variance: float
    squared_bias: float
    rmse: float
    mean_rounds: float
    mean_floats: float
    failures: int
    replications: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReplicationResults:
    """Raw per-replication values, one column per estimator label."""

    labels: tuple
    tau: np.ndarray
    rounds: np.ndarray
    floats: np.ndarray
    truth: np.ndarray

    def column(self, label: str) -> np.ndarray:
        return self.tau[:, self.labels.index(label)]


def resolve_estimators(plan: ExperimentPlan) -> list[tuple[str, EstimatorId, int | None]]:
    """``(label, id, study)`` for every requested estimator."""
    out = []
    for text in plan.estimators:
        eid, study = parse_estimator(text, bool(plan.adjusted.get(text, False)))
        label = f"Local:{study}" if eid is EstimatorId.LOCAL else eid.value
        out.append((label, eid, study))
    labels = [t[0] for t in out]
    if len(set(labels)) != len(labels):
        raise ValidationError("duplicate estimators in plan")
    return out


def _run_all(fed: FederatedDataset, specs, fedavg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = len(specs)
    tau = np.full(m, np.nan)
    rounds = np.full(m, np.nan)
    floats = np.full(m, np.nan)
    for j, (_, eid, study) in enumerate(specs):
        try:
            rep = estimate(fed, eid, fedavg, study)
        except FedAteError:
            continue
        if not math.isfinite(rep.tau_hat):
            continue
        tau[j] = rep.tau_hat
        rounds[j] = rep.comm.rounds
        floats[j] = rep.comm.floats_up_per_study + rep.comm.floats_down_per_study
    return tau, rounds, floats


def _mc_replication(args):
    plan, specs, r, truth = args
    fed = generate(plan.scenario, RngStream(plan.base_seed, r))
    return (*_run_all(fed, specs, plan.fedavg), truth)


def _boot_replication(args):
    plan, specs, r, fed, truth = args
    rng = RngStream(plan.base_seed, r)
    sample = bootstrap_resample(fed, rng.child(0))
    g = plan.regeneration
    if g is not None:
        sample = regenerate_outcomes(sample, g.mode, (g.theta1, g.theta0), g.p_by_study,
                                     g.noise_sd, rng.child(1), g.min_arm_size, g.require_rank)
    return (*_run_all(sample, specs, plan.fedavg), truth)


def _collect(plan: ExperimentPlan, fn, jobs, labels) -> ReplicationResults:
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * plan.workers))))
    else:
        results = [fn(job) for job in jobs]
    return ReplicationResults(
        tuple(labels),
        np.array([r[0] for r in results]),
        np.array([r[1] for r in results]),
        np.array([r[2] for r in results]),
        np.array([r[3] for r in results], dtype=np.float64),
    )


def run_monte_carlo(plan: ExperimentPlan, return_raw: bool = False):
    """Simulate ``plan.replications`` datasets and summarize each estimator.

    The reference value is ``plan.truth`` when given, otherwise the exact
    population ATE of the scenario.

    Returns
    -------
    list of SummaryRow, or ``(rows, ReplicationResults)`` with ``return_raw``.
    """
    if plan.scenario is None:
        raise ValidationError("Monte Carlo plans need a scenario")
    specs = resolve_estimators(plan)
    truth = plan.truth if plan.truth is not None else true_ate(plan.scenario).tau
    jobs = [(plan, specs, r, truth) for r in range(int(plan.replications))]
    raw = _collect(plan, _mc_replication, jobs, [s[0] for s in specs])
    rows = summarize(raw)
    return (rows, raw) if return_raw else rows


def run_bootstrap(fed: FederatedDataset, plan: ExperimentPlan, return_raw: bool = False):
    """Stratified bootstrap of ``fed`` with every estimator per resample.

    Without ``plan.regeneration`` outcomes are resampled with their rows and
    bias is measured against ``plan.truth`` (required). With a regeneration
    spec, treatment and outcomes are redrawn on each resample's covariates
    and the default reference is the regeneration model's sample ATE on the
    original covariates.
    """
    specs = resolve_estimators(plan)
    truth = plan.truth
    if truth is None:
        g = plan.regeneration
        if g is None:
            raise ValidationError("bootstrap without regeneration needs a supplied true ATE")
        truth = regenerated_ate(fed, g.mode, (g.theta1, g.theta0))
    jobs = [(plan, specs, r, fed, truth) for r in range(int(plan.replications))]
    raw = _collect(plan, _boot_replication, jobs, [s[0] for s in specs])
    rows = summarize(raw)
    return (rows, raw) if return_raw else rows


def summarize(raw: ReplicationResults) -> list[SummaryRow]:
    """Mean, variance (denominator ``R``), squared bias and RMSE per column.

    With the ``R`` denominator ``rmse² = squared_bias + variance`` holds
    exactly up to rounding. Failed replications are excluded and counted.
    """
    rows = []
    R = raw.tau.shape[0]
    for j, label in enumerate(raw.labels):
        ok = np.isfinite(raw.tau[:, j])
        failures = int(R - ok.sum())
        if not ok.any():
            rows.append(SummaryRow(label, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, failures, R))
            continue
        t = raw.tau[ok, j]
        mean = float(np.mean(t))
        var = float(np.mean((t - mean) ** 2))
        bias2 = float(np.mean(t - raw.truth[ok])) ** 2
        rows.append(SummaryRow(
            label, mean, var, bias2, math.sqrt(bias2 + var),
            float(np.mean(raw.rounds[ok, j])), float(np.mean(raw.floats[ok, j])), failures, R,
        ))
    return rows


_COLUMNS = [f.name for f in fields(SummaryRow)]


def _check_target(path: Path) -> None:
    if not path.parent.is_dir():
        raise IoError(f"directory does not exist: {path.parent}")


def emit_report(rows: Sequence[SummaryRow], format: str, path) -> Path:
    """Write summary rows as CSV (fixed column order) or JSON."""
    if not rows:
        raise ValidationError("nothing to report")
    path = Path(path)
    _check_target(path)
    try:
        if format == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                out = csv.writer(fh, lineterminator="\n")
                out.writerow(_COLUMNS)
                for row in rows:
                    out.writerow([_fmt(getattr(row, c)) for c in _COLUMNS])
        elif format == "json":
            payload = [row.to_dict() for row in rows]
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        else:
            raise ValidationError(f"unknown report format {format!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else v


def read_report(path) -> list[SummaryRow]:
    """Load rows written by :func:`emit_report` (format from the suffix)."""
    path = Path(path)
    if path.suffix == ".json":
        return [SummaryRow(**d) for d in json.loads(path.read_text(encoding="utf-8"))]
    with path.open(newline="", encoding="utf-8") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append(SummaryRow(
                rec["estimator_id"],
                *(float(rec[c]) for c in _COLUMNS[1:7]),
                int(rec["failures"]), int(rec["replications"]),
            ))
    return rows


def emit_replications(raw: ReplicationResults, path) -> Path:
    """Long-format per-replication dump for external plotting."""
    path = Path(path)
    _check_target(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["replication", "estimator_id", "tau_hat", "rounds", "floats", "truth"])
            for r in range(raw.tau.shape[0]):
                for j, label in enumerate(raw.labels):
                    out.writerow([r, label, _fmt(float(raw.tau[r, j])), _fmt(float(raw.rounds[r, j])),
                                  _fmt(float(raw.floats[r, j])), _fmt(float(raw.truth[r]))])
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path
