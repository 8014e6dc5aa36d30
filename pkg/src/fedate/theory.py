"""Closed-form asymptotic variances, bias verdicts and the estimator advisor.

Variances are returned as ``n·V∞`` with fixed study weights ``ρ_k = n_k/n``
(``n_k·V∞`` for a local estimator). Notation: ``p = Σ ρ_k p_k``,
``Σ̄ = Σ ρ_k Σ_k``, ``Δβ = β¹ − β⁰``, ``‖v‖²_S = vᵀSv``.

Pooled-type estimators (Pool, GD, 1S-IVW and their dummy-adjusted
versions) evaluate one fitted model per arm at the pooled covariate mean.
Their variance is::

    σ² Σ_w (1 + D_w) / p_w + ‖Δβ‖²_Σ̄

where ``p_1 = p``, ``p_0 = 1 − p`` and ``D_w`` is the Mahalanobis distance
between the pooled covariate mean and arm ``w``'s covariate mean under arm
``w``'s covariance (study dummies included for adjusted fits). ``D_w = 0``
whenever covariate distributions or treatment probabilities agree, which
recovers ``σ²/(p(1−p)) + ‖Δβ‖²_Σ``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormulaInvalid, ValidationError
from .estimators import EstimatorId
from .scenarios import ScenarioConfig

__all__ = [
    "ScenarioFlags",
    "TheoreticalVariance",
    "BiasVerdict",
    "Recommendation",
    "scenario_flags",
    "asymptotic_variance",
    "predict_bias",
    "recommend",
    "pool_bias",
    "intercept_variance",
    "GATHER_MORE_DATA",
]

GATHER_MORE_DATA = "GatherMoreData"


@dataclass(frozen=True)
class ScenarioFlags:
    local_full_rank: bool
    federated_full_rank: bool
    same_covariate_distribution: bool
    study_effects: bool
    same_treatment_probabilities: bool

    def __post_init__(self):
        if self.local_full_rank and not self.federated_full_rank:
            raise ValidationError("local full rank implies federated full rank")


@dataclass(frozen=True)
class TheoreticalVariance:
    estimator_id: EstimatorId
    n_times_variance: float
    assumptions: tuple[str, ...]


@dataclass(frozen=True)
class BiasVerdict:
    biased: bool
    reason: str = ""


@dataclass(frozen=True)
class Recommendation:
    recommendation: tuple[str, ...]
    dm_biased: bool

    def to_dict(self) -> dict:
        return {"recommendation": list(self.recommendation), "dm_biased": self.dm_biased}


def scenario_flags(cfg: ScenarioConfig) -> ScenarioFlags:
    """Flags of a generative config.

    Rank flags use expected arm sizes (or the guaranteed minimum arm size)
    against ``d + 1`` parameters per arm.
    """
    s0 = cfg.studies[0]
    same_x = all(np.array_equal(s.mu, s0.mu) and np.array_equal(s.sigma, s0.sigma) for s in cfg.studies)
    effects = len({s.h for s in cfg.studies}) > 1
    same_p = len({s.p for s in cfg.studies}) == 1
    need = cfg.d + 1
    local = all(max(cfg.min_arm_size, s.n * min(s.p, 1 - s.p)) >= need for s in cfg.studies)
    arm_totals = [sum(s.n * s.p for s in cfg.studies), sum(s.n * (1 - s.p) for s in cfg.studies)]
    federated = local or min(arm_totals) >= need
    return ScenarioFlags(local, federated, same_x, effects, same_p)


# ---------------------------------------------------------------- variances

_POOLED = {EstimatorId.POOL, EstimatorId.GD, EstimatorId.ONE_SHOT_IVW}
_POOLED_ADJ = {EstimatorId.POOL_ADJ, EstimatorId.GD_ADJ}


def _dbeta(cfg: ScenarioConfig) -> np.ndarray:
    return cfg.arm1.beta - cfg.arm0.beta


def _sigma_bar(cfg: ScenarioConfig) -> np.ndarray:
    return sum(r * s.sigma for r, s in zip(cfg.rho, cfg.studies))


def _mixture_distance(cfg: ScenarioConfig, dummies: bool) -> list[float]:
    """``D_w`` for both arms (treated first)."""
    rho, p = cfg.rho, cfg.p
    K, d = cfg.K, cfg.d
    means, covs = [], []
    for k, s in enumerate(cfg.studies):
        m, S = s.mu, s.sigma
        if dummies:
            e = np.zeros(K - 1)
            if k > 0:
                e[k - 1] = 1.0
            m = np.concatenate([m, e])
            S = np.block([[S, np.zeros((d, K - 1))], [np.zeros((K - 1, d)), np.zeros((K - 1, K - 1))]])
        means.append(m)
        covs.append(S)
    means = np.array(means)
    target = rho @ means
    out = []
    for pk in (p, 1.0 - p):
        pi = rho * pk / (rho @ pk)
        mw = pi @ means
        Sw = sum(w * (S + np.outer(m - mw, m - mw)) for w, S, m in zip(pi, covs, means))
        gap = target - mw
        out.append(float(gap @ np.linalg.solve(Sw, gap)) if gap.size else 0.0)
    return out


def _pooled_variance(cfg: ScenarioConfig, dummies: bool) -> float:
    pbar = float(cfg.rho @ cfg.p)
    D1, D0 = _mixture_distance(cfg, dummies)
    db = _dbeta(cfg)
    return cfg.sigma2 * ((1 + D1) / pbar + (1 + D0) / (1 - pbar)) + float(db @ _sigma_bar(cfg) @ db)


def _one_shot_sw_variance(cfg: ScenarioConfig) -> float:
    rho, p = cfg.rho, cfg.p
    mu_bar = sum(r * s.mu for r, s in zip(rho, cfg.studies))
    D = np.array([float((mu_bar - s.mu) @ np.linalg.solve(s.sigma, mu_bar - s.mu)) if cfg.d else 0.0
                  for s in cfg.studies])
    total = 0.0
    for pk in (p, 1.0 - p):
        pw = float(rho @ pk)
        total += float(np.sum(rho * pk * (1 + D))) / pw**2
    db = _dbeta(cfg)
    return cfg.sigma2 * total + float(db @ _sigma_bar(cfg) @ db)


def asymptotic_variance(estimator_id, cfg: ScenarioConfig, study: int | None = None) -> TheoreticalVariance:
    """Closed-form ``n·V∞`` of an estimator under ``cfg``.

    Raises
    ------
    FormulaInvalid
        When the estimator is biased under ``cfg``, when outcomes are not
        linear, or when no closed form is shipped (DM, adjusted one-shot).
    """
    eid = EstimatorId(estimator_id)
    if cfg.arm1.quad is not None or cfg.arm0.quad is not None:
        raise FormulaInvalid("closed forms assume linear outcome models")
    verdict = predict_bias(eid, cfg)
    if verdict.biased:
        raise FormulaInvalid(f"{eid.value} is biased here: {verdict.reason}")
    flags = scenario_flags(cfg)
    db = _dbeta(cfg)
    s2 = cfg.sigma2
    rho, p = cfg.rho, cfg.p
    if eid is EstimatorId.LOCAL:
        if study is None or not 1 <= study <= cfg.K:
            raise ValidationError("Local variance needs a study index in 1..K")
        s = cfg.studies[study - 1]
        val = s2 / (s.p * (1 - s.p)) + float(db @ s.sigma @ db)
        return TheoreticalVariance(eid, val, ("per-study n_k scaling",))
    if flags.study_effects and eid in _POOLED | {EstimatorId.ONE_SHOT_SW}:
        raise FormulaInvalid("unadjusted pooled formulas assume no study effects")
    if eid in _POOLED:
        return TheoreticalVariance(eid, _pooled_variance(cfg, False), ("no study effects",))
    if eid in _POOLED_ADJ:
        if cfg.K < 2:
            raise FormulaInvalid("adjusted estimators need K >= 2")
        return TheoreticalVariance(eid, _pooled_variance(cfg, True), ())
    if eid is EstimatorId.ONE_SHOT_SW:
        return TheoreticalVariance(eid, _one_shot_sw_variance(cfg), ("no study effects",))
    if eid is EstimatorId.META_SW:
        val = s2 * float(np.sum(rho / (p * (1 - p)))) + float(db @ _sigma_bar(cfg) @ db)
        return TheoreticalVariance(eid, val, ())
    if eid is EstimatorId.META_IVW:
        local = np.array([s2 / (s.p * (1 - s.p)) + float(db @ s.sigma @ db) for s in cfg.studies])
        return TheoreticalVariance(eid, float(1.0 / np.sum(rho / local)), ("same covariate distribution",))
    raise FormulaInvalid(f"no closed-form variance for {eid.value}")


def intercept_variance(cfg: ScenarioConfig, study: int, arm: int) -> float:
    """``n_k^w · V∞`` of a local OLS intercept: ``σ²(1 + μ_kᵀΣ_k⁻¹μ_k)``."""
    s = cfg.studies[study - 1]
    if arm not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    return float(cfg.sigma2 * (1.0 + s.mu @ np.linalg.solve(s.sigma, s.mu))) if cfg.d else float(cfg.sigma2)


def pool_bias(cfg: ScenarioConfig) -> float:
    """Limit of the unadjusted pooled estimator minus ``τ``.

    Each arm's intercept absorbs the arm-share weighted study effects:
    ``Σ_k (π_k¹ − π_k⁰) h_k`` with ``π_k^w = ρ_k p_k^w / p^w``. Covariate
    effects are taken at the pooled mean, so only study effects enter when
    the covariate distribution is shared.
    """
    rho, p = cfg.rho, cfg.p
    h = np.array([s.h for s in cfg.studies])
    pi1 = rho * p / (rho @ p)
    pi0 = rho * (1 - p) / (rho @ (1 - p))
    return float((pi1 - pi0) @ h)


# --------------------------------------------------------------- bias table


def predict_bias(estimator_id, cfg_or_flags) -> BiasVerdict:
    """Bias verdict of an estimator for the scenario's flags."""
    flags = cfg_or_flags if isinstance(cfg_or_flags, ScenarioFlags) else scenario_flags(cfg_or_flags)
    eid = EstimatorId(estimator_id)
    confounded = flags.study_effects and not flags.same_treatment_probabilities
    if eid in (EstimatorId.POOL, EstimatorId.GD, EstimatorId.ONE_SHOT_SW, EstimatorId.ONE_SHOT_IVW):
        if confounded:
            return BiasVerdict(True, "study effects with unequal treatment probabilities")
        return BiasVerdict(False)
    if eid is EstimatorId.META_IVW:
        if not flags.same_covariate_distribution:
            return BiasVerdict(True, "inverse-variance weights misestimate study weights under covariate shift")
        return BiasVerdict(False)
    if eid is EstimatorId.DM:
        dm_biased = recommend(flags).dm_biased
        if dm_biased:
            return BiasVerdict(True, "flagged by the decision diagram")
        return BiasVerdict(False)
    if eid is EstimatorId.LOCAL:
        if not flags.same_covariate_distribution:
            return BiasVerdict(True, "local population differs from the pooled population")
        return BiasVerdict(False)
    return BiasVerdict(False)


# ------------------------------------------------------------------ advisor


def recommend(flags: ScenarioFlags) -> Recommendation:
    """Walk the practitioner decision diagram.

    Leaves (``★`` marks DM as biased):

    - no federated full rank: gather more data
    - federated but not local full rank: GD (adjusted, ★, with study effects)
    - local full rank, same covariates, study effects: adjusted GD or Meta-IVW ★
    - local full rank, same covariates, no effects, same p: 1S-IVW or Meta-IVW
    - local full rank, same covariates, no effects, different p: 1S-IVW
    - local full rank, different covariates, no effects: 1S-IVW ★
    - local full rank, different covariates, study effects: adjusted GD or Meta-SW ★
    """
    E = EstimatorId
    if not flags.federated_full_rank:
        return Recommendation((GATHER_MORE_DATA,), False)
    if not flags.local_full_rank:
        if flags.study_effects:
            return Recommendation((E.GD_ADJ.value,), True)
        return Recommendation((E.GD.value,), False)
    if flags.same_covariate_distribution:
        if flags.study_effects:
            return Recommendation((E.GD_ADJ.value, E.META_IVW.value), True)
        if flags.same_treatment_probabilities:
            return Recommendation((E.ONE_SHOT_IVW.value, E.META_IVW.value), False)
        return Recommendation((E.ONE_SHOT_IVW.value,), False)
    if flags.study_effects:
        return Recommendation((E.GD_ADJ.value, E.META_SW.value), True)
    return Recommendation((E.ONE_SHOT_IVW.value,), True)
