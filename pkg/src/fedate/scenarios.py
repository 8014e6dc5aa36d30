"""Generative truth models, data synthesis, outcome regeneration and bootstrap.

Scenario JSON schema::

    {"name": str, "K": int, "d": int, "sigma2": float, "min_arm_size": int,
     "arm1": {"c": float, "beta": [...], "quad": [[...]] (optional)},
     "arm0": {...},
     "studies": [{"n": int, "p": float, "mu": [...],
                  "sigma": {"kind": "a*I+b*J", "a": float, "b": float}
                           | {"kind": "dense", "matrix": [[...]]},
                  "h": float}, ...]}

``quad`` is an optional symmetric matrix ``A`` adding ``xᵀAx`` to the arm's
mean outcome. ``min_arm_size`` makes :func:`generate` redraw a study's
treatment vector until both arms have at least that many rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FederatedDataset, StudyDataset
from .errors import DimensionError, NotPositiveDefinite, SchemaError, ValidationError
from .numerics import RngStream, as_vector, full_column_rank, sample_mvn

__all__ = [
    "ArmParams",
    "StudyParams",
    "ScenarioConfig",
    "TruthSummary",
    "generate",
    "true_ate",
    "regenerate_outcomes",
    "regenerated_ate",
    "bootstrap_resample",
    "list_presets",
    "load_preset",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "standin_covariates",
    "standin_arm_params",
]

MAX_TREATMENT_REDRAWS = 10_000


@dataclass(frozen=True)
class ArmParams:
    """Outcome model of one arm: ``c + xβ (+ xᵀ quad x)``."""

    c: float
    beta: np.ndarray
    quad: np.ndarray | None = None

    def __post_init__(self):
        beta = as_vector(self.beta, "beta")
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "beta", beta)
        if self.quad is not None:
            A = np.asarray(self.quad, dtype=np.float64)
            if A.shape != (beta.size, beta.size) or not np.allclose(A, A.T):
                raise DimensionError("quad must be a symmetric d×d matrix")
            object.__setattr__(self, "quad", A)
        if not np.isfinite(self.c):
            raise ValidationError("intercept must be finite")

    def mean(self, X: np.ndarray) -> np.ndarray:
        out = self.c + X @ self.beta
        if self.quad is not None:
            out = out + np.einsum("ij,jk,ik->i", X, self.quad, X)
        return out


@dataclass(frozen=True)
class StudyParams:
    """Generative parameters of one study."""

    n: int
    p: float
    mu: np.ndarray
    sigma: np.ndarray
    h: float = 0.0

    def __post_init__(self):
        mu = as_vector(self.mu, "mu")
        S = np.asarray(self.sigma, dtype=np.float64)
        if S.shape != (mu.size, mu.size):
            raise DimensionError("sigma must be d×d")
        if int(self.n) < 1:
            raise ValidationError("study size must be positive")
        if not 0.0 < float(self.p) < 1.0:
            raise ValidationError("treatment probability must lie in (0, 1)")
        if not np.allclose(S, S.T):
            raise NotPositiveDefinite("sigma must be symmetric")
        if mu.size and np.linalg.eigvalsh(S)[0] <= 0.0:
            raise NotPositiveDefinite("sigma must be positive definite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", S)
        object.__setattr__(self, "h", float(self.h))


@dataclass(frozen=True)
class ScenarioConfig:
    """Full generative truth of a multi-study trial."""

    d: int
    sigma2: float
    arm1: ArmParams
    arm0: ArmParams
    studies: tuple[StudyParams, ...]
    min_arm_size: int = 0
    name: str = "custom"

    def __post_init__(self):
        studies = tuple(self.studies)
        object.__setattr__(self, "studies", studies)
        if not studies:
            raise ValidationError("need at least one study")
        if self.sigma2 < 0:
            raise ValidationError("sigma2 must be non-negative")
        for arm in (self.arm1, self.arm0):
            if arm.beta.size != self.d:
                raise DimensionError("arm slopes must have length d")
        for s in studies:
            if s.mu.size != self.d:
                raise DimensionError("study means must have length d")
            if self.min_arm_size > 0 and s.n < 2 * self.min_arm_size:
                raise ValidationError("study too small for the requested minimum arm size")

    @property
    def K(self) -> int:
        return len(self.studies)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.studies)

    @property
    def rho(self) -> np.ndarray:
        sizes = np.array([s.n for s in self.studies], dtype=np.float64)
        return sizes / sizes.sum()

    @property
    def p(self) -> np.ndarray:
        return np.array([s.p for s in self.studies])

    def replace(self, **changes) -> "ScenarioConfig":
        fields = dict(d=self.d, sigma2=self.sigma2, arm1=self.arm1, arm0=self.arm0,
                      studies=self.studies, min_arm_size=self.min_arm_size, name=self.name)
        fields.update(changes)
        return ScenarioConfig(**fields)

    def with_studies(self, **changes) -> "ScenarioConfig":
        """Apply per-study overrides; each value is a length-K sequence."""
        rows = []
        for k, s in enumerate(self.studies):
            kw = dict(n=s.n, p=s.p, mu=s.mu, sigma=s.sigma, h=s.h)
            kw.update({key: val[k] for key, val in changes.items()})
            rows.append(StudyParams(**kw))
        return self.replace(studies=tuple(rows))


@dataclass(frozen=True)
class TruthSummary:
    """Population ATE with study weights ``ρ_k = n_k / n``."""

    tau: float
    tau_k: np.ndarray
    rho: np.ndarray
    p: float


def _arm_effect(cfg: ScenarioConfig, s: StudyParams) -> float:
    a1, a0 = cfg.arm1, cfg.arm0
    out = a1.c - a0.c + s.mu @ (a1.beta - a0.beta)
    for arm, sign in ((a1, 1.0), (a0, -1.0)):
        if arm.quad is not None:
            out += sign * (np.trace(arm.quad @ s.sigma) + s.mu @ arm.quad @ s.mu)
    return float(out)


def true_ate(cfg: ScenarioConfig) -> TruthSummary:
    """Exact population ATE; study effects cancel in every ``τ_k``."""
    tau_k = np.array([_arm_effect(cfg, s) for s in cfg.studies])
    rho = cfg.rho
    return TruthSummary(float(rho @ tau_k), tau_k, rho, float(rho @ cfg.p))


def _draw_treatment(n: int, p: float, min_arm: int, gen: np.random.Generator,
                    design: np.ndarray | None = None) -> np.ndarray:
    for _ in range(MAX_TREATMENT_REDRAWS):
        w = (gen.random(n) < p).astype(np.int8)
        n1 = int(w.sum())
        if min(n1, n - n1) < min_arm:
            continue
        if design is None or (full_column_rank(design[w == 1]) and full_column_rank(design[w == 0])):
            return w
    raise ValidationError(f"could not draw arms of size >= {min_arm} from n={n}, p={p}")


def generate(cfg: ScenarioConfig, rng: RngStream) -> FederatedDataset:
    """Simulate one federated dataset.

    Study ``k`` (1-based) draws from ``rng.child(k)``: covariates, then the
    treatment vector (redrawn while an arm is below ``cfg.min_arm_size``),
    then the noise.
    """
    studies = []
    sd = float(np.sqrt(cfg.sigma2))
    for k, s in enumerate(cfg.studies, start=1):
        sub = rng.child(k)
        X = sample_mvn(s.mu, s.sigma, s.n, sub)
        w = _draw_treatment(s.n, s.p, cfg.min_arm_size, sub.generator)
        eps = sub.generator.standard_normal(s.n) * sd
        y = np.where(w == 1, cfg.arm1.mean(X), cfg.arm0.mean(X)) + s.h + eps
        studies.append(StudyDataset(k, X, w, y))
    return FederatedDataset(tuple(studies))


def _polynomial_features(X: np.ndarray) -> np.ndarray:
    if X.shape[1] < 4:
        raise DimensionError("polynomial mode needs at least 4 covariates")
    F = X.copy()
    F[:, 1] = X[:, 1] ** 2
    F[:, 2] = X[:, 2] ** 3
    inter = np.column_stack([-X[:, 1] * X[:, 2], X[:, 0] * X[:, 3]])
    return np.column_stack([np.ones(X.shape[0]), F, inter])


def _regen_mean(X: np.ndarray, mode: str, theta: np.ndarray) -> np.ndarray:
    if mode == "linear":
        F = np.column_stack([np.ones(X.shape[0]), X])
    elif mode == "polynomial":
        F = _polynomial_features(X)
    else:
        raise ValidationError(f"unknown outcome mode {mode!r}")
    if theta.size != F.shape[1]:
        raise DimensionError(f"{mode} mode needs {F.shape[1]} parameters, got {theta.size}")
    return F @ theta


def regenerate_outcomes(fed: FederatedDataset, mode: str, arm_params: tuple, p_by_study,
                        noise_sd: float, rng: RngStream, min_arm_size: int = 0,
                        require_rank: bool = False) -> FederatedDataset:
    """Redraw treatment and outcomes on fixed covariates.

    Parameters
    ----------
    mode : {"linear", "polynomial"}
        ``linear`` uses ``X′θ``. ``polynomial`` replaces ``x1, x2, x3`` by
        ``x1, x2², x3³`` and appends ``(−x2·x3, x1·x4)``; ``θ`` then has
        ``d + 3`` entries.
    arm_params : (theta1, theta0)
    p_by_study : sequence of float
    noise_sd : float
    min_arm_size : int
        Treatment is redrawn per study until both arms reach this size.
    require_rank : bool
        Also redraw until both arms' intercept-augmented designs have full
        column rank (bootstrap duplicates can break it at small sizes).
    """
    theta1 = as_vector(arm_params[0], "theta1")
    theta0 = as_vector(arm_params[1], "theta0")
    p = np.asarray(p_by_study, dtype=np.float64)
    if p.size != fed.K:
        raise DimensionError("one treatment probability per study is required")
    if mode == "polynomial" and fed.d < 4:
        raise DimensionError("polynomial mode needs at least 4 covariates")
    out = []
    for k, s in enumerate(fed.studies, start=1):
        gen = rng.child(k).generator
        w = _draw_treatment(s.n, float(p[k - 1]), min_arm_size, gen, s.design() if require_rank else None)
        mu = np.where(w == 1, _regen_mean(s.covariates, mode, theta1), _regen_mean(s.covariates, mode, theta0))
        y = mu + noise_sd * gen.standard_normal(s.n)
        out.append(StudyDataset(s.study_id, s.covariates, w, y))
    return FederatedDataset(tuple(out))


def regenerated_ate(fed: FederatedDataset, mode: str, arm_params: tuple) -> float:
    """Sample ATE of the regeneration model on ``fed``'s covariates."""
    X = np.vstack([s.covariates for s in fed.studies])
    t1, t0 = (as_vector(a) for a in arm_params)
    return float(np.mean(_regen_mean(X, mode, t1) - _regen_mean(X, mode, t0)))


def bootstrap_resample(fed: FederatedDataset, rng: RngStream) -> FederatedDataset:
    """Resample rows with replacement within each study, keeping ``n_k``."""
    out = []
    for k, s in enumerate(fed.studies, start=1):
        idx = rng.child(k).generator.integers(0, s.n, size=s.n)
        out.append(StudyDataset(s.study_id, s.covariates[idx], s.treatment[idx], s.outcome[idx]))
    return FederatedDataset(tuple(out))


# ---------------------------------------------------------------- JSON


def _sigma_from_json(spec, d: int) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "a*I+b*J":
        return float(spec["a"]) * np.eye(d) + float(spec["b"]) * np.ones((d, d))
    if kind == "dense":
        return np.asarray(spec["matrix"], dtype=np.float64)
    raise SchemaError(f"unknown sigma kind {kind!r}")


def _sigma_to_json(S: np.ndarray) -> dict:
    d = S.shape[0]
    if d:
        b = S[0, 1] if d > 1 else 0.0
        a = S[0, 0] - b
        if np.array_equal(S, a * np.eye(d) + b * np.ones((d, d))):
            return {"kind": "a*I+b*J", "a": float(a), "b": float(b)}
    return {"kind": "dense", "matrix": S.tolist()}


def _arm_from_json(spec) -> ArmParams:
    quad = spec.get("quad")
    return ArmParams(spec["c"], spec["beta"], None if quad is None else np.asarray(quad, dtype=np.float64))


def scenario_from_dict(spec: dict) -> ScenarioConfig:
    """Build a config from the JSON schema (see module docstring)."""
    try:
        d = int(spec["d"])
        studies = tuple(
            StudyParams(n=s["n"], p=s["p"], mu=s["mu"], sigma=_sigma_from_json(s["sigma"], d), h=s.get("h", 0.0))
            for s in spec["studies"]
        )
        cfg = ScenarioConfig(
            d=d,
            sigma2=float(spec["sigma2"]),
            arm1=_arm_from_json(spec["arm1"]),
            arm0=_arm_from_json(spec["arm0"]),
            studies=studies,
            min_arm_size=int(spec.get("min_arm_size", 0)),
            name=str(spec.get("name", "custom")),
        )
    except KeyError as exc:
        raise SchemaError(f"missing scenario field {exc.args[0]!r}") from None
    if "K" in spec and int(spec["K"]) != cfg.K:
        raise SchemaError(f"K={spec['K']} but {cfg.K} studies listed")
    return cfg


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    def arm(a: ArmParams) -> dict:
        out = {"c": a.c, "beta": a.beta.tolist()}
        if a.quad is not None:
            out["quad"] = a.quad.tolist()
        return out

    return {
        "name": cfg.name,
        "K": cfg.K,
        "d": cfg.d,
        "sigma2": cfg.sigma2,
        "min_arm_size": cfg.min_arm_size,
        "arm1": arm(cfg.arm1),
        "arm0": arm(cfg.arm0),
        "studies": [
            {"n": s.n, "p": s.p, "mu": s.mu.tolist(), "sigma": _sigma_to_json(s.sigma), "h": s.h}
            for s in cfg.studies
        ],
    }


def load_scenario(path) -> ScenarioConfig:
    with Path(path).open(encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def list_presets() -> list[str]:
    root = resources.files("fedate") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ScenarioConfig:
    """Load a shipped preset by name (see :func:`list_presets`)."""
    res = resources.files("fedate") / "presets" / f"{name}.json"
    if not res.is_file():
        raise ValidationError(f"unknown preset {name!r}; known: {', '.join(list_presets())}")
    return scenario_from_dict(json.loads(res.read_text(encoding="utf-8")))


# ------------------------------------------------- semi-synthetic stand-in

STANDIN_SIZES = (2600, 1500, 1100, 800, 600, 450, 350, 250, 160, 110, 80, 55, 42)
STANDIN_P = (0.5, 0.6, 0.4, 0.7, 0.3, 0.55, 0.45, 0.65, 0.35, 0.8, 0.25, 0.65, 0.5)


def standin_covariates(rng: RngStream, d: int = 15, sizes: Sequence[int] = STANDIN_SIZES,
                       shift_sd: float = 0.1, scale_range: tuple = (0.8, 1.2),
                       n_low_variance: int = 2) -> FederatedDataset:
    """Synthetic multi-site covariate table standing in for a private registry.

    Sites differ in size, covariate means and covariance scale. The smaller
    sites have ``n_low_variance`` nearly constant covariates (standard
    deviation 0.05), mimicking rarely used interventions; these are drawn
    from coordinates 5 onwards so that the first four, which enter the
    polynomial outcome model, keep a comparable spread everywhere.
    Treatment and outcome columns are placeholders (all zero) to be filled
    by :func:`regenerate_outcomes`.
    """
    gen = rng.generator
    studies = []
    corr = 0.3 * np.ones((d, d)) + 0.7 * np.eye(d)
    for k, n in enumerate(sizes, start=1):
        shift = gen.normal(0.0, shift_sd, size=d)
        scale = gen.uniform(*scale_range, size=d)
        if k > 2 * len(sizes) // 3 and d > 4:
            scale[4 + gen.choice(d - 4, size=min(n_low_variance, d - 4), replace=False)] = 0.05
        S = corr * np.outer(scale, scale)
        X = sample_mvn(shift, S, int(n), rng.child(k))
        studies.append(StudyDataset(k, X, np.zeros(int(n), dtype=np.int8), np.zeros(int(n))))
    return FederatedDataset(tuple(studies))


def standin_arm_params(d: int, mode: str, rng: RngStream, delta: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """``θ⁰ ~ U[−1, 1]`` and ``θ¹ = θ⁰ + delta`` coordinatewise."""
    size = d + 1 if mode == "linear" else d + 3
    theta0 = rng.generator.uniform(-1.0, 1.0, size=size)
    return theta0 + delta, theta0
