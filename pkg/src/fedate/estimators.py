"""ATE estimators for multi-study trials.

All estimators fit one OLS outcome model per arm (locally, pooled, or
federated) and average predicted differences over the evaluation rows.
Aggregation across studies always uses size weights ``n_k / n`` except for
Meta-IVW, which uses plug-in inverse variances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ArmView, FederatedDataset, StudyDataset, augment_dummies, pooled_arm, split_by_arm
from .errors import DegenerateArm, EmptyArm, NoConvergence, ValidationError, ZeroVariance
from .federation import CommLedger, FedAvgConfig, MessageKind, learning_rate_from_eigenvalues, \
    local_max_eigenvalues, run_fedavg
from .numerics import DEFAULT_RANK_TOLERANCE, solve_gram, solve_least_squares

__all__ = [
    "EstimatorId",
    "ArmFit",
    "EstimateReport",
    "parse_estimator",
    "fit_arm",
    "fit_arm_models",
    "fit_study",
    "g_formula",
    "dm",
    "local_tau",
    "pool_tau",
    "aggregate_sw",
    "aggregate_ivw",
    "meta_sw",
    "meta_ivw",
    "meta_sw_tau",
    "meta_ivw_tau",
    "local_variance_formula",
    "plugin_local_variance",
    "federate_theta",
    "one_shot_theta",
    "one_shot_tau",
    "gd_tau",
    "estimate",
]


class EstimatorId(str, enum.Enum):
    DM = "DM"
    LOCAL = "Local"
    POOL = "Pool"
    META_SW = "MetaSW"
    META_IVW = "MetaIVW"
    ONE_SHOT_SW = "OneShotSW"
    ONE_SHOT_IVW = "OneShotIVW"
    GD = "GD"
    POOL_ADJ = "PoolAdj"
    GD_ADJ = "GDAdj"
    ONE_SHOT_SW_ADJ = "OneShotSWAdj"
    ONE_SHOT_IVW_ADJ = "OneShotIVWAdj"

    def adjusted(self) -> "EstimatorId":
        """Study-effect adjusted counterpart (identity when none exists)."""
        return _ADJUSTED.get(self, self)

    @property
    def is_adjusted(self) -> bool:
        return self in _ADJUSTED.values()


_ADJUSTED = {
    EstimatorId.POOL: EstimatorId.POOL_ADJ,
    EstimatorId.GD: EstimatorId.GD_ADJ,
    EstimatorId.ONE_SHOT_SW: EstimatorId.ONE_SHOT_SW_ADJ,
    EstimatorId.ONE_SHOT_IVW: EstimatorId.ONE_SHOT_IVW_ADJ,
}


def parse_estimator(text: str, adjusted: bool = False, study: int | None = None) -> tuple[EstimatorId, int | None]:
    """Parse ``"MetaSW"``, ``"GDAdj"`` or ``"Local:2"`` style identifiers.

    ``study`` supplies the study id when the text carries none.
    """
    text = str(text).strip()
    if ":" in text:
        text, sid = text.split(":", 1)
        study = int(sid)
    if "(" in text and text.endswith(")"):
        text, sid = text[:-1].split("(", 1)
        study = int(sid)
    try:
        eid = EstimatorId(text)
    except ValueError:
        raise ValidationError(f"unknown estimator {text!r}") from None
    if eid is EstimatorId.LOCAL and study is None:
        raise ValidationError("Local estimator needs a study id, e.g. Local:1")
    return (eid.adjusted() if adjusted else eid), study


@dataclass(frozen=True)
class ArmFit:
    """OLS fit of one arm.

    ``residual_variance`` uses the denominator ``n_arm − p`` and is 0 when
    that denominator is not positive.
    """

    theta_hat: np.ndarray
    gram: np.ndarray
    n_arm: int
    residual_variance: float
    rss: float


@dataclass
class EstimateReport:
    estimator_id: EstimatorId
    tau_hat: float
    plugin_variance: float | None = None
    comm: CommLedger = field(default_factory=lambda: CommLedger(record_log=False))
    study: int | None = None

    @property
    def label(self) -> str:
        if self.estimator_id is EstimatorId.LOCAL:
            return f"Local:{self.study}"
        return self.estimator_id.value


# ------------------------------------------------------------------ fitting


def fit_arm(view: ArmView, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> ArmFit:
    X, y = view.design, view.response
    theta = solve_least_squares(X, y, rank_tolerance)
    resid = y - X @ theta
    rss = float(resid @ resid)
    if rss <= (64 * np.finfo(float).eps) ** 2 * float(y @ y):
        rss = 0.0  # exact fit up to rounding
    dof = X.shape[0] - X.shape[1]
    s2 = max(rss / dof, 0.0) if dof > 0 else 0.0
    return ArmFit(theta, X.T @ X, X.shape[0], s2, rss)


def fit_arm_models(view1: ArmView, view0: ArmView,
                   rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> tuple[ArmFit, ArmFit]:
    """Per-arm OLS fits (treated, control)."""
    return fit_arm(view1, rank_tolerance), fit_arm(view0, rank_tolerance)


def fit_study(ds: StudyDataset, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> tuple[ArmFit, ArmFit]:
    return fit_arm_models(split_by_arm(ds, 1), split_by_arm(ds, 0), rank_tolerance)


def g_formula(theta1, theta0, eval_design) -> float:
    """Mean of ``X′(θ¹ − θ⁰)`` over the evaluation rows."""
    diff = np.asarray(theta1, dtype=np.float64) - np.asarray(theta0, dtype=np.float64)
    return float(np.mean(np.asarray(eval_design) @ diff))


# --------------------------------------------------------------- estimators


def dm(data: FederatedDataset | StudyDataset) -> EstimateReport:
    """Difference in arm means over all rows.

    On a federation each study uploads the outcome sum and count per arm in
    one round.
    """
    ledger = CommLedger(record_log=False)
    studies = data.studies if isinstance(data, FederatedDataset) else (data,)
    sums = np.zeros(2)
    counts = np.zeros(2)
    for s in studies:
        for arm in (0, 1):
            mask = s.treatment == arm
            sums[arm] += s.outcome[mask].sum()
            counts[arm] += mask.sum()
        if isinstance(data, FederatedDataset):
            ledger.record(1, "up", s.study_id, MessageKind.ARM_SUMS, 4)
    if counts.min() == 0:
        raise EmptyArm("difference in means needs both arms")
    study = None if isinstance(data, FederatedDataset) else data.study_id
    return EstimateReport(EstimatorId.DM, float(sums[1] / counts[1] - sums[0] / counts[0]), None, ledger, study)


def local_variance_formula(sigma2: float, p_hat: float, n: int, dbeta, cov) -> float:
    """``σ²/(n p(1−p)) + ‖Δβ‖²_Σ / n``."""
    dbeta = np.asarray(dbeta, dtype=np.float64)
    return float(sigma2 / (n * p_hat * (1.0 - p_hat)) + dbeta @ np.atleast_2d(cov) @ dbeta / n)


def plugin_local_variance(fits: tuple[ArmFit, ArmFit], ds: StudyDataset) -> float:
    """Plug-in asymptotic variance of a local ATE.

    Residuals of both arm fits are pooled with denominator ``n_k − d − 1``;
    ``p̂ = n_k¹ / n_k``; ``Σ̂`` is the sample covariance of the study's
    covariates.

    Raises
    ------
    DegenerateArm
        If an arm has fewer than ``d + 2`` rows or a denominator is not
        positive.
    """
    f1, f0 = fits
    n, d = ds.n, ds.d
    p_hat = f1.n_arm / n
    if not 0.0 < p_hat < 1.0:
        raise DegenerateArm("estimated treatment probability is 0 or 1")
    if min(f1.n_arm, f0.n_arm) < d + 2 or n - d - 1 <= 0 or n < 2:
        raise DegenerateArm("arms too small for a residual variance")
    s2 = (f1.rss + f0.rss) / (n - d - 1)
    cov = np.cov(ds.covariates, rowvar=False, ddof=1) if d else np.zeros((0, 0))
    return local_variance_formula(s2, p_hat, n, f1.theta_hat[1:] - f0.theta_hat[1:], cov)


def local_tau(ds: StudyDataset, rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
              with_variance: bool = True) -> EstimateReport:
    """G-formula ATE of one study from its own arm fits."""
    fits = fit_study(ds, rank_tolerance)
    tau = g_formula(fits[0].theta_hat, fits[1].theta_hat, ds.design())
    var = None
    if with_variance:
        try:
            var = plugin_local_variance(fits, ds)
        except DegenerateArm:
            var = None
    return EstimateReport(EstimatorId.LOCAL, tau, var, CommLedger(record_log=False), ds.study_id)


def pool_tau(fed: FederatedDataset, adjusted: bool = False,
             rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> EstimateReport:
    """G-formula on the pooled data, with study dummies when ``adjusted``."""
    data = augment_dummies(fed) if adjusted else fed
    f1, f0 = fit_arm_models(pooled_arm(data, 1), pooled_arm(data, 0), rank_tolerance)
    tau = g_formula(f1.theta_hat, f0.theta_hat, data.design())
    eid = EstimatorId.POOL_ADJ if adjusted else EstimatorId.POOL
    return EstimateReport(eid, tau, None, CommLedger(record_log=False))


def aggregate_sw(values, sizes) -> float:
    """Size-weighted mean ``Σ (n_k/n) v_k``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValidationError("sizes must be positive")
    return float((sizes / sizes.sum()) @ np.asarray(values, dtype=np.float64))


def aggregate_ivw(values, variances) -> tuple[float, float]:
    """Inverse-variance weighted mean and its variance ``1/Σ(1/v_k)``.

    Raises
    ------
    ZeroVariance
        If any variance is not strictly positive and finite.
    """
    v = np.asarray(variances, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ZeroVariance("inverse-variance weights need positive variances")
    inv = 1.0 / v
    total = inv.sum()
    return float((inv / total) @ np.asarray(values, dtype=np.float64)), float(1.0 / total)


def _meta_ledger(studies: Sequence[int]) -> CommLedger:
    ledger = CommLedger(record_log=False)
    for s in studies:
        ledger.record(1, "up", s, MessageKind.LOCAL_ATE, 2)
    return ledger


def meta_sw(locals_: Sequence[EstimateReport], sizes) -> EstimateReport:
    """Size-weighted meta-analysis of local ATEs."""
    taus = [r.tau_hat for r in locals_]
    tau = aggregate_sw(taus, sizes)
    var = None
    if all(r.plugin_variance is not None for r in locals_):
        w = np.asarray(sizes, dtype=float) / np.sum(sizes)
        var = float(w**2 @ np.array([r.plugin_variance for r in locals_]))
    return EstimateReport(EstimatorId.META_SW, tau, var, _meta_ledger([r.study or i + 1 for i, r in enumerate(locals_)]))


def meta_ivw(locals_: Sequence[EstimateReport], variances=None) -> EstimateReport:
    """Inverse-variance weighted meta-analysis of local ATEs.

    ``variances`` default to the locals' plug-in variances.
    """
    if variances is None:
        if any(r.plugin_variance is None for r in locals_):
            raise DegenerateArm("a local plug-in variance is unavailable")
        variances = [r.plugin_variance for r in locals_]
    tau, var = aggregate_ivw([r.tau_hat for r in locals_], variances)
    return EstimateReport(EstimatorId.META_IVW, tau, var, _meta_ledger([r.study or i + 1 for i, r in enumerate(locals_)]))


def meta_sw_tau(fed: FederatedDataset, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> EstimateReport:
    locals_ = [local_tau(s, rank_tolerance) for s in fed.studies]
    return meta_sw(locals_, fed.sizes)


def meta_ivw_tau(fed: FederatedDataset, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> EstimateReport:
    locals_ = []
    for s in fed.studies:
        fits = fit_study(s, rank_tolerance)
        tau = g_formula(fits[0].theta_hat, fits[1].theta_hat, s.design())
        locals_.append(EstimateReport(EstimatorId.LOCAL, tau, plugin_local_variance(fits, s), study=s.study_id))
    return meta_ivw(locals_)


# ------------------------------------------------------------------ one-shot


def federate_theta(thetas, mode: str, sizes=None, grams=None,
                   rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    """Combine per-study parameter vectors.

    ``SW``: ``Σ (n_k/n) θ_k``. ``IVW``: ``(Σ G_k)⁻¹ Σ G_k θ_k``.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if mode == "SW":
        w = np.asarray(sizes, dtype=np.float64)
        return (w / w.sum()) @ thetas
    if mode == "IVW":
        G = np.asarray(grams, dtype=np.float64)
        return solve_gram(G.sum(axis=0), np.einsum("kij,kj->i", G, thetas), rank_tolerance)
    raise ValidationError(f"mode must be 'SW' or 'IVW', got {mode!r}")


def one_shot_theta(fits: Sequence[ArmFit], mode: str,
                   rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    """One-shot federation of one arm's local OLS parameters."""
    thetas = [f.theta_hat for f in fits]
    if mode == "SW":
        return federate_theta(thetas, "SW", sizes=[f.n_arm for f in fits])
    return federate_theta(thetas, mode, grams=[f.gram for f in fits], rank_tolerance=rank_tolerance)


def centered_gram(gram: np.ndarray) -> np.ndarray:
    """Covariate block of ``X′ᵀX′`` after centering the covariates."""
    g = np.asarray(gram)
    return g[1:, 1:] - np.outer(g[1:, 0], g[0, 1:]) / g[0, 0]


def one_shot_ledger(studies: Sequence[int], p: int, mode: str, adjusted: bool) -> CommLedger:
    ledger = CommLedger(record_log=False)
    q = p - 1 if adjusted else p
    up = q + (q * q if mode == "IVW" else 1)
    for s in studies:
        ledger.record(1, "up", s, MessageKind.LOCAL_THETA, 2 * up)
        ledger.record(1, "down", s, MessageKind.GLOBAL_THETA, 2 * q)
        ledger.record(2, "up", s, MessageKind.LOCAL_ATE, 2)
    return ledger


def one_shot_tau(fed: FederatedDataset, mode: str = "IVW", adjusted: bool = False,
                 rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> EstimateReport:
    """One-shot federated G-formula.

    Unadjusted: federate each arm's full ``θ̂_k``, then evaluate every study's
    rows with the federated parameters. Adjusted: federate only the slopes
    ``β̂_k`` (SW by arm size, IVW by centered covariate Gram) and keep each
    study's own intercepts.
    """
    fits = [fit_study(s, rank_tolerance) for s in fed.studies]
    taus = one_shot_local_taus(fed, fits, mode, adjusted, rank_tolerance)
    tau = aggregate_sw(taus, fed.sizes)
    if mode == "SW":
        eid = EstimatorId.ONE_SHOT_SW_ADJ if adjusted else EstimatorId.ONE_SHOT_SW
    else:
        eid = EstimatorId.ONE_SHOT_IVW_ADJ if adjusted else EstimatorId.ONE_SHOT_IVW
    ledger = one_shot_ledger([s.study_id for s in fed.studies], fed.d + 1, mode, adjusted)
    return EstimateReport(eid, tau, None, ledger)


def one_shot_federated(fits_by_arm: dict, mode: str, adjusted: bool,
                       rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> dict:
    """Server step: federated θ (or β) per arm from the local fits."""
    out = {}
    for arm, fits in fits_by_arm.items():
        if not adjusted:
            out[arm] = one_shot_theta(fits, mode, rank_tolerance)
        elif mode == "SW":
            out[arm] = federate_theta([f.theta_hat[1:] for f in fits], "SW", sizes=[f.n_arm for f in fits])
        else:
            out[arm] = federate_theta([f.theta_hat[1:] for f in fits], "IVW",
                                      grams=[centered_gram(f.gram) for f in fits], rank_tolerance=rank_tolerance)
    return out


def one_shot_study_tau(ds: StudyDataset, fits: tuple[ArmFit, ArmFit], fedparam: dict, adjusted: bool) -> float:
    """Study step: local ATE with the federated parameters."""
    if not adjusted:
        return g_formula(fedparam[1], fedparam[0], ds.design())
    a1, a0 = fits[0].theta_hat[0], fits[1].theta_hat[0]
    return float(a1 - a0 + np.mean(ds.covariates @ (fedparam[1] - fedparam[0])))


def one_shot_local_taus(fed, fits, mode, adjusted, rank_tolerance=DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    fedparam = one_shot_federated({1: [f[0] for f in fits], 0: [f[1] for f in fits]}, mode, adjusted, rank_tolerance)
    return np.array([one_shot_study_tau(s, f, fedparam, adjusted) for s, f in zip(fed.studies, fits)])


# ----------------------------------------------------------------------- GD


def _arm_views(fed: FederatedDataset, arm: int) -> tuple[list[ArmView], list[int]]:
    views, ids = [], []
    for s in fed.studies:
        if s.n_arm(arm):
            views.append(split_by_arm(s, arm))
            ids.append(s.study_id)
    if not views:
        raise EmptyArm(f"no rows in arm {arm}")
    return views, ids


def gd_fit(fed: FederatedDataset, cfg: FedAvgConfig, ledger: CommLedger) -> dict:
    """Run FedAvg for both arms on ``fed`` (already augmented if needed).

    Returns the final parameters per arm; raises NoConvergence when a run
    did not meet ``cfg.convergence_tol`` within ``cfg.T`` rounds.
    """
    views = {arm: _arm_views(fed, arm) for arm in (1, 0)}
    first = 1
    etas = {arm: None for arm in (1, 0)}
    if cfg.selects_rate:
        for arm, (vs, ids) in views.items():
            lam = local_max_eigenvalues(vs)
            for s in ids:
                ledger.record(1, "up", s, MessageKind.LOCAL_EIGEN, 1)
                ledger.record(1, "down", s, MessageKind.LEARNING_RATE, 1)
            eta = learning_rate_from_eigenvalues(lam, [v.n for v in vs], cfg.eta, cfg.E)
            etas[arm] = eta
        first = 2
    thetas = {}
    for arm, (vs, ids) in views.items():
        thetas[arm], _ = run_fedavg(vs, cfg, ledger, arm=arm, studies=ids, first_round=first, eta=etas[arm])
        trace = ledger.traces[-1]
        if not trace.converged:
            raise NoConvergence(f"FedAvg arm {arm} moved {trace.final_step:.3e} after {trace.rounds_run} rounds")
    return thetas


def gd_tau(fed: FederatedDataset, cfg: FedAvgConfig | None = None, adjusted: bool = False,
           record_log: bool = False) -> EstimateReport:
    """G-formula with outcome models learned by FedAvg.

    After FedAvg one extra round sends the final parameters to the studies,
    which return their local ATE and size.
    """
    cfg = FedAvgConfig() if cfg is None else cfg
    data = augment_dummies(fed) if adjusted else fed
    ledger = CommLedger(record_log=record_log)
    thetas = gd_fit(data, cfg, ledger)
    final = ledger.rounds + 1
    p = data.d + 1
    taus = []
    for s in data.studies:
        taus.append(g_formula(thetas[1], thetas[0], s.design()))
        ledger.record(final, "down", s.study_id, MessageKind.GLOBAL_THETA, 2 * p)
        ledger.record(final, "up", s.study_id, MessageKind.LOCAL_ATE, 2)
    eid = EstimatorId.GD_ADJ if adjusted else EstimatorId.GD
    return EstimateReport(eid, aggregate_sw(taus, data.sizes), None, ledger)


# --------------------------------------------------------------- dispatcher


def estimate(fed: FederatedDataset, estimator_id, fedavg: FedAvgConfig | None = None,
             study: int | None = None, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> EstimateReport:
    """Run one estimator by identifier."""
    if isinstance(estimator_id, str) and not isinstance(estimator_id, EstimatorId):
        estimator_id, study = parse_estimator(estimator_id, study=study)
    E = EstimatorId
    if estimator_id is E.DM:
        return dm(fed)
    if estimator_id is E.LOCAL:
        match = [s for s in fed.studies if s.study_id == study]
        if not match:
            raise ValidationError(f"no study with id {study}")
        return local_tau(match[0], rank_tolerance)
    if estimator_id in (E.POOL, E.POOL_ADJ):
        return pool_tau(fed, estimator_id is E.POOL_ADJ, rank_tolerance)
    if estimator_id is E.META_SW:
        return meta_sw_tau(fed, rank_tolerance)
    if estimator_id is E.META_IVW:
        return meta_ivw_tau(fed, rank_tolerance)
    if estimator_id in (E.ONE_SHOT_SW, E.ONE_SHOT_SW_ADJ):
        return one_shot_tau(fed, "SW", estimator_id is E.ONE_SHOT_SW_ADJ, rank_tolerance)
    if estimator_id in (E.ONE_SHOT_IVW, E.ONE_SHOT_IVW_ADJ):
        return one_shot_tau(fed, "IVW", estimator_id is E.ONE_SHOT_IVW_ADJ, rank_tolerance)
    if estimator_id in (E.GD, E.GD_ADJ):
        return gd_tau(fed, fedavg, estimator_id is E.GD_ADJ)
    raise ValidationError(f"unsupported estimator {estimator_id!r}")
