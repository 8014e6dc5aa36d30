"""Server/study message exchanges for every estimator.

Studies only ever send aggregates (local estimates, parameter vectors, Gram
matrices, sizes, eigenvalues). The server combines them with the same
helpers the direct estimators use, so results are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .data import FederatedDataset, StudyDataset
from .errors import ValidationError
from .estimators import (
    EstimateReport,
    EstimatorId,
    aggregate_ivw,
    aggregate_sw,
    centered_gram,
    fit_study,
    g_formula,
    gd_tau,
    local_tau,
    one_shot_study_tau,
    parse_estimator,
    plugin_local_variance,
    pool_tau,
    federate_theta,
)
from .federation import CommLedger, FedAvgConfig, MessageKind

__all__ = ["run"]


def _dm(fed: FederatedDataset, ledger: CommLedger) -> float:
    msgs = []
    for s in fed.studies:
        m1, m0 = s.treatment == 1, s.treatment == 0
        msgs.append(ledger.send(1, "up", s.study_id, MessageKind.ARM_SUMS,
                                sums=[s.outcome[m0].sum(), s.outcome[m1].sum()],
                                counts=[m0.sum(), m1.sum()]))
    sums, counts = np.zeros(2), np.zeros(2)
    for m in msgs:
        for arm in (0, 1):
            sums[arm] += m.payload["sums"][arm]
            counts[arm] += m.payload["counts"][arm]
    return float(sums[1] / counts[1] - sums[0] / counts[0])


def _meta(fed: FederatedDataset, ivw: bool, ledger: CommLedger) -> tuple[float, float | None]:
    msgs = []
    for s in fed.studies:
        fits = fit_study(s)
        tau = g_formula(fits[0].theta_hat, fits[1].theta_hat, s.design())
        if ivw:
            msgs.append(ledger.send(1, "up", s.study_id, MessageKind.LOCAL_ATE,
                                    tau=tau, variance=plugin_local_variance(fits, s)))
        else:
            msgs.append(ledger.send(1, "up", s.study_id, MessageKind.LOCAL_ATE, tau=tau, n=s.n))
    taus = [float(m.payload["tau"]) for m in msgs]
    if ivw:
        return aggregate_ivw(taus, [float(m.payload["variance"]) for m in msgs])
    return aggregate_sw(taus, [float(m.payload["n"]) for m in msgs]), None


def _one_shot(fed: FederatedDataset, mode: str, adjusted: bool, ledger: CommLedger) -> float:
    fits = {s.study_id: fit_study(s) for s in fed.studies}
    uploads = {1: [], 0: []}
    for s in fed.studies:
        for idx, arm in ((0, 1), (1, 0)):
            f = fits[s.study_id][idx]
            param = f.theta_hat[1:] if adjusted else f.theta_hat
            if mode == "SW":
                m = ledger.send(1, "up", s.study_id, MessageKind.LOCAL_THETA, theta=param, n=f.n_arm)
            else:
                g = centered_gram(f.gram) if adjusted else f.gram
                m = ledger.send(1, "up", s.study_id, MessageKind.LOCAL_THETA, theta=param, gram=g)
            uploads[arm].append(m)
    fedparam = {}
    for arm in (1, 0):
        thetas = [m.payload["theta"] for m in uploads[arm]]
        if mode == "SW":
            fedparam[arm] = federate_theta(thetas, "SW", sizes=[float(m.payload["n"]) for m in uploads[arm]])
        else:
            fedparam[arm] = federate_theta(thetas, "IVW", grams=[m.payload["gram"] for m in uploads[arm]])
    replies = []
    for s in fed.studies:
        received = {}
        for arm in (1, 0):
            received[arm] = ledger.send(1, "down", s.study_id, MessageKind.GLOBAL_THETA,
                                        theta=fedparam[arm]).payload["theta"]
        tau = one_shot_study_tau(s, fits[s.study_id], received, adjusted)
        replies.append(ledger.send(2, "up", s.study_id, MessageKind.LOCAL_ATE, tau=tau, n=s.n))
    return aggregate_sw([float(m.payload["tau"]) for m in replies], [float(m.payload["n"]) for m in replies])


def run(fed: FederatedDataset, estimator_id, fedavg: FedAvgConfig | None = None,
        record_log: bool = True, study: int | None = None) -> EstimateReport:
    if not isinstance(estimator_id, EstimatorId):
        estimator_id, parsed = parse_estimator(estimator_id)
        study = parsed if parsed is not None else study
    E = EstimatorId
    ledger = CommLedger(record_log=record_log)
    if estimator_id is E.LOCAL:
        match = [s for s in fed.studies if s.study_id == study]
        if not match:
            raise ValidationError(f"no study with id {study}")
        rep = local_tau(match[0])
        rep.comm = ledger
        return rep
    if estimator_id in (E.POOL, E.POOL_ADJ):
        rep = pool_tau(fed, estimator_id is E.POOL_ADJ)
        rep.comm = ledger
        return rep
    if estimator_id is E.DM:
        return EstimateReport(E.DM, _dm(fed, ledger), None, ledger)
    if estimator_id in (E.META_SW, E.META_IVW):
        tau, var = _meta(fed, estimator_id is E.META_IVW, ledger)
        return EstimateReport(estimator_id, tau, var, ledger)
    if estimator_id in (E.ONE_SHOT_SW, E.ONE_SHOT_IVW, E.ONE_SHOT_SW_ADJ, E.ONE_SHOT_IVW_ADJ):
        mode = "SW" if estimator_id in (E.ONE_SHOT_SW, E.ONE_SHOT_SW_ADJ) else "IVW"
        adjusted = estimator_id.is_adjusted
        return EstimateReport(estimator_id, _one_shot(fed, mode, adjusted, ledger), None, ledger)
    if estimator_id in (E.GD, E.GD_ADJ):
        return gd_tau(fed, fedavg, estimator_id is E.GD_ADJ, record_log=record_log)
    raise ValidationError(f"unsupported estimator {estimator_id!r}")
