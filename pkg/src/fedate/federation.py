"""In-process federation: messages, communication ledger, FedAvg and protocols.

Communication schedule (``p`` = number of model parameters per arm, which is
``d + 1`` or ``d + K`` with study dummies; floats are counted per study):

========================  ======  =====================================  =====================
protocol                  rounds  upload per study                       download per study
========================  ======  =====================================  =====================
Meta-SW                   1       2 (τ̂ₖ, nₖ)                            0
Meta-IVW                  1       2 (τ̂ₖ, V̂ₖ)                            0
DM (federated)            1       4 (Σy and count per arm)               0
1S-SW                     2       2(p + 1) + 2                           2p
1S-IVW                    2       2(p + p²) + 2                          2p
1S-SW, adjusted           2       2(d + 1) + 2                           2d
1S-IVW, adjusted          2       2(d + d²) + 2                          2d
GD (T₁, T₀ rounds/arm)    T + 1   (T₁ + T₀)(p + 1) + 2                   (T₁ + T₀)p + 2p
Pool, Local               0       0                                      0
========================  ======  =====================================  =====================

For GD, ``T = max(T₁, T₀)``: both arms run FedAvg side by side and share
round numbers. When the learning rate is selected automatically one extra
setup round is prepended in which each study uploads ``λ_max`` per arm
(2 floats) and receives the chosen rate per arm (2 floats).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import ArmView, FederatedDataset
from .errors import Divergence, ValidationError
from .numerics import RngStream, max_eigenvalue

__all__ = [
    "MessageKind",
    "Message",
    "LogEntry",
    "CommLedger",
    "FedAvgConfig",
    "FedAvgTrace",
    "run_fedavg",
    "select_learning_rate",
    "local_max_eigenvalues",
    "run_protocol",
    "DIVERGENCE_GUARD",
]

DIVERGENCE_GUARD = 1e12


class MessageKind(str, enum.Enum):
    LOCAL_ATE = "LocalATE"
    LOCAL_THETA = "LocalTheta"
    GLOBAL_THETA = "GlobalTheta"
    LOCAL_MODEL = "LocalModel"
    LOCAL_EIGEN = "LocalEigen"
    LEARNING_RATE = "LearningRate"
    ARM_SUMS = "ArmSums"


@dataclass(frozen=True)
class Message:
    """One transmission between a study and the server.

    ``payload`` maps names to arrays of aggregates. Raw rows never travel.
    """

    round: int
    direction: str
    study: int
    kind: MessageKind
    payload: dict

    @property
    def payload_floats(self) -> int:
        return int(sum(np.size(v) for v in self.payload.values()))


@dataclass(frozen=True)
class LogEntry:
    round: int
    direction: str
    study: int
    kind: MessageKind
    payload_floats: int


class CommLedger:
    """Counts rounds and floats exchanged, optionally keeping a full log."""

    def __init__(self, record_log: bool = True):
        self.record_log = record_log
        self.log: list[LogEntry] = []
        self.messages: list[Message] = []
        self.rounds = 0
        self.up: dict[int, int] = {}
        self.down: dict[int, int] = {}
        self.traces: list[FedAvgTrace] = []

    def record(self, round: int, direction: str, study: int, kind: MessageKind, floats: int, count: int = 1):
        """Account for ``count`` identical messages, the first in ``round``."""
        if direction not in ("up", "down"):
            raise ValidationError("direction must be 'up' or 'down'")
        if floats < 0 or count < 0:
            raise ValidationError("message sizes are non-negative")
        if count == 0:
            return
        table = self.up if direction == "up" else self.down
        table[study] = table.get(study, 0) + floats * count
        self.rounds = max(self.rounds, round + count - 1)
        if self.record_log:
            self.log.extend(LogEntry(round + i, direction, study, kind, floats) for i in range(count))

    def send(self, round: int, direction: str, study: int, kind: MessageKind, **payload) -> Message:
        msg = Message(round, direction, study, kind, {k: np.array(v, dtype=np.float64) for k, v in payload.items()})
        self.record(round, direction, study, kind, msg.payload_floats)
        if self.record_log:
            self.messages.append(msg)
        return msg

    @property
    def floats_up_per_study(self) -> int:
        return max(self.up.values(), default=0)

    @property
    def floats_down_per_study(self) -> int:
        return max(self.down.values(), default=0)

    def to_dict(self, estimator: str) -> dict:
        return {
            "estimator": estimator,
            "rounds": self.rounds,
            "floats_up_per_study": self.floats_up_per_study,
            "floats_down_per_study": self.floats_down_per_study,
            "log": [
                {"round": e.round, "direction": e.direction, "study": e.study,
                 "kind": e.kind.value, "floats": e.payload_floats}
                for e in self.log
            ],
        }


@dataclass(frozen=True)
class FedAvgConfig:
    """FedAvg hyper-parameters.

    Attributes
    ----------
    T : int
        Maximum number of rounds.
    E : int
        Local gradient steps per round.
    B : int or None
        Mini-batch size; ``None`` means full batch.
    eta : float, array or str
        Learning rate, a per-study vector, or one of ``"auto"``,
        ``"global_E1"``, ``"local_T1"`` (see :func:`select_learning_rate`).
    convergence_tol : float or None
        Stop when the aggregate moves by at most this much in l2 norm.
        ``None`` runs exactly ``T`` rounds and never reports failure.
    rng : RngStream or None
        Batch sampling stream, needed only when ``B`` is set.
    theta0 : array or None
        Starting point (zeros by default).
    """

    T: int = 20000
    E: int = 1
    B: int | None = None
    eta: object = "auto"
    convergence_tol: float | None = 1e-10
    rng: RngStream | None = None
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if int(self.T) < 1 or int(self.E) < 1:
            raise ValidationError("T and E must be at least 1")
        if self.B is not None and int(self.B) < 1:
            raise ValidationError("B must be at least 1")
        if isinstance(self.eta, str):
            if self.eta not in ("auto", "global_E1", "local_T1"):
                raise ValidationError(f"unknown learning-rate mode {self.eta!r}")
        elif not np.all(np.asarray(self.eta, dtype=float) > 0):
            raise ValidationError("explicit learning rates must be positive")
        if self.convergence_tol is not None and self.convergence_tol < 0:
            raise ValidationError("convergence_tol must be non-negative")

    @property
    def selects_rate(self) -> bool:
        return isinstance(self.eta, str)


@dataclass
class FedAvgTrace:
    arm: int | None
    rounds_run: int
    converged: bool
    final_step: float
    eta: np.ndarray
    losses: np.ndarray = field(default_factory=lambda: np.empty(0))


def _normalized_gram(view: ArmView) -> np.ndarray:
    return view.design.T @ view.design / view.n


def local_max_eigenvalues(views: Sequence[ArmView]) -> np.ndarray:
    """``λ_max`` of each study's normalized Gram ``X′ᵀX′ / n_k``."""
    return np.array([max_eigenvalue(_normalized_gram(v)) for v in views])


def select_learning_rate(views: Sequence[ArmView], mode: str = "global_E1", local_steps: int = 1):
    """Learning rate from local largest eigenvalues.

    ``global_E1`` returns ``(2 / Σλ_k) / 10``. ``local_T1`` returns the
    vector ``2 / λ_k``. ``auto`` returns ``0.9 / Σ_k (n_k / n) λ_k`` when
    ``local_steps == 1`` and ``0.9 / max_k λ_k`` otherwise; both make the
    aggregated full-batch step a contraction.
    """
    lam = local_max_eigenvalues(views)
    return learning_rate_from_eigenvalues(lam, np.array([v.n for v in views], dtype=float), mode, local_steps)


def learning_rate_from_eigenvalues(lam, sizes, mode: str, local_steps: int = 1):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValidationError("local Gram matrices must be nonzero")
    if mode == "global_E1":
        return (2.0 / lam.sum()) / 10.0
    if mode == "local_T1":
        return 2.0 / lam
    if mode == "auto":
        if local_steps == 1:
            w = np.asarray(sizes, dtype=np.float64)
            return 0.9 / float((w / w.sum()) @ lam)
        return 0.9 / float(lam.max())
    raise ValidationError(f"unknown learning-rate mode {mode!r}")


def _minibatch_fedavg(views, weights, eta, theta, cfg: FedAvgConfig, guard: float, arm: int):
    tol = cfg.convergence_tol
    rng = cfg.rng if cfg.rng is not None else RngStream(0, 0)
    gens = [rng.child(arm).child(k).generator for k in range(len(views))]
    last, done, status = np.inf, 0, kernels.CONTINUING
    for t in range(cfg.T):
        new = np.zeros_like(theta)
        for k, v in enumerate(views):
            local = theta.copy()
            for _ in range(cfg.E):
                if cfg.B is None or cfg.B >= v.n:
                    Xb, yb = v.design, v.response
                else:
                    idx = gens[k].choice(v.n, size=cfg.B, replace=False)
                    Xb, yb = v.design[idx], v.response[idx]
                grad = -(2.0 / yb.size) * (Xb.T @ (yb - Xb @ local))
                local = local - eta[k] * grad
            new += weights[k] * local
        last = float(np.linalg.norm(new - theta))
        theta = new
        done = t + 1
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > guard:
            status = kernels.DIVERGED
            break
        if tol is not None and last <= tol:
            status = kernels.CONVERGED
            break
    return theta, done, status, last


def run_fedavg(views: Sequence[ArmView], cfg: FedAvgConfig, ledger: CommLedger | None = None,
               arm: int = 1, studies: Sequence[int] | None = None, first_round: int = 1,
               eta=None, record_loss: bool = False):
    """Federated averaging of per-study least-squares fits for one arm.

    Each round the server broadcasts ``θ``; every study takes ``E`` local
    gradient steps on ``(1/B)‖y_B − X_Bθ‖²`` and uploads the result with its
    row count; the server averages with weights ``n_k / n``.

    Parameters
    ----------
    views : sequence of ArmView
        One arm's rows for every participating study.
    cfg : FedAvgConfig
    ledger : CommLedger, optional
        Messages are appended here (a fresh ledger is created otherwise).
    arm : int
        Arm label, used for the trace and batch-sampling streams.
    studies : sequence of int, optional
        Study labels for the ledger (defaults to ``1..K``).
    first_round : int
        Ledger round number of the first FedAvg round.
    eta : float or array, optional
        Overrides ``cfg.eta`` (used when the rate was chosen beforehand).
    record_loss : bool
        Keep the pooled mean squared loss after every round (full batch).

    Returns
    -------
    theta : ndarray
    ledger : CommLedger
        ``ledger.traces[-1]`` reports rounds run and convergence.

    Raises
    ------
    Divergence
        If ``‖θ‖`` exceeds the guard.
    """
    if not views:
        raise ValidationError("FedAvg needs at least one study")
    p = views[0].design.shape[1]
    if any(v.design.shape[1] != p for v in views):
        raise ValidationError("designs must share their column count")
    ledger = CommLedger() if ledger is None else ledger
    studies = list(range(1, len(views) + 1)) if studies is None else list(studies)
    sizes = np.array([v.n for v in views], dtype=np.float64)
    weights = sizes / sizes.sum()
    if eta is None:
        eta = cfg.eta
        if isinstance(eta, str):
            eta = select_learning_rate(views, eta, cfg.E)
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (len(views),)).copy()
    theta0 = np.zeros(p) if cfg.theta0 is None else np.array(cfg.theta0, dtype=np.float64)
    if theta0.shape != (p,):
        raise ValidationError("theta0 has the wrong length")
    tol = -1.0 if cfg.convergence_tol is None else float(cfg.convergence_tol)
    losses = np.empty(0)
    if cfg.B is None or all(cfg.B >= v.n for v in views):
        grams = np.stack([v.design.T @ v.design for v in views])
        xty = np.stack([v.design.T @ v.response for v in views])
        yty = np.array([v.response @ v.response for v in views]) if record_loss else None
        theta, done, status, last, losses = kernels.fedavg_full_batch(
            grams, xty, sizes, weights, eta, theta0, int(cfg.T), int(cfg.E), tol, DIVERGENCE_GUARD, yty)
    else:
        theta, done, status, last = _minibatch_fedavg(views, weights, eta, theta0, cfg, DIVERGENCE_GUARD, arm)
    for s in studies:
        ledger.record(first_round, "down", s, MessageKind.GLOBAL_THETA, p, count=done)
        ledger.record(first_round, "up", s, MessageKind.LOCAL_MODEL, p + 1, count=done)
    converged = status == kernels.CONVERGED or cfg.convergence_tol is None
    ledger.traces.append(FedAvgTrace(arm, int(done), bool(converged), float(last), eta, np.asarray(losses)))
    if status == kernels.DIVERGED:
        raise Divergence(f"FedAvg diverged after {done} rounds (eta={eta.max():.3g})")
    return np.asarray(theta, dtype=np.float64), ledger


def run_protocol(fed: FederatedDataset, estimator_id, fedavg: FedAvgConfig | None = None,
                 record_log: bool = True, study: int | None = None):
    """Run an estimator as explicit server/study message exchanges.

    Returns an :class:`~fedate.estimators.EstimateReport` whose ``comm``
    ledger holds every message; ``tau_hat`` is bit-identical to the direct
    estimator call.
    """
    from . import protocols  # imported late: protocols depends on estimators

    return protocols.run(fed, estimator_id, fedavg, record_log, study)
