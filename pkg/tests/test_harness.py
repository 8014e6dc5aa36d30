import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedate.errors import IoError, ValidationError
from fedate.harness import (
    ExperimentPlan,
    Regeneration,
    ReplicationResults,
    SummaryRow,
    emit_replications,
    emit_report,
    read_report,
    run_bootstrap,
    run_monte_carlo,
    summarize,
)
from fedate.numerics import RngStream
from fedate.scenarios import STANDIN_P, generate, load_preset, standin_arm_params, standin_covariates

FAST = ("DM", "Pool", "MetaSW", "MetaIVW", "OneShotSW", "OneShotIVW")


def test_plan_validation():
    with pytest.raises(ValidationError):
        ExperimentPlan(load_preset("homog-small"), replications=0)
    with pytest.raises(ValidationError):
        ExperimentPlan(load_preset("homog-small"), estimators=())
    with pytest.raises(ValidationError):
        run_monte_carlo(ExperimentPlan(load_preset("homog-small"), estimators=("Pool", "Pool")))


def test_single_replication_has_zero_variance():
    plan = ExperimentPlan(load_preset("homog-small"), FAST, 1, 4)
    for row in run_monte_carlo(plan):
        assert row.variance == 0.0
        assert row.squared_bias == pytest.approx((row.mean + 1.1) ** 2)


def test_monte_carlo_deterministic():
    plan = ExperimentPlan(load_preset("homog-small"), FAST, 8, 21)
    assert run_monte_carlo(plan) == run_monte_carlo(plan)


def test_monte_carlo_independent_of_workers():
    plan = ExperimentPlan(load_preset("homog-small"), ("Pool", "MetaSW"), 6, 2)
    parallel = ExperimentPlan(load_preset("homog-small"), ("Pool", "MetaSW"), 6, 2, workers=2)
    assert run_monte_carlo(plan) == run_monte_carlo(parallel)


def test_homogeneous_means_near_truth():
    rows = run_monte_carlo(ExperimentPlan(load_preset("homog-large"), FAST, 200, 5))
    for r in rows:
        assert abs(r.mean + 1.1) <= 3 * np.sqrt(r.variance / r.replications), r.estimator_id


def test_failures_recorded_not_fatal():
    # Five rows per study cannot support 11-parameter local fits; pooled fits still work.
    cfg = load_preset("homog-small").replace(min_arm_size=5).with_studies(n=[10] * 5)
    rows = {r.estimator_id: r for r in run_monte_carlo(ExperimentPlan(cfg, ("Pool", "MetaSW", "DM"), 3, 0))}
    assert rows["MetaSW"].failures == 3 and np.isnan(rows["MetaSW"].mean)
    assert rows["Pool"].failures == 0 and rows["DM"].failures == 0


def test_local_estimator_labels():
    rows = run_monte_carlo(ExperimentPlan(load_preset("homog-small"), ("Local:1", "Local:3"), 2, 0))
    assert [r.estimator_id for r in rows] == ["Local:1", "Local:3"]


def test_adjusted_flag_maps_estimator():
    plan = ExperimentPlan(load_preset("homog-small"), ("Pool",), 2, 0, adjusted={"Pool": True})
    assert run_monte_carlo(plan)[0].estimator_id == "PoolAdj"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(-10, 10))
def test_rmse_decomposition(values, truth):
    t = np.array(values)[:, None]
    raw = ReplicationResults(("X",), t, np.zeros_like(t), np.zeros_like(t), np.full(len(values), truth))
    row = summarize(raw)[0]
    assert row.rmse**2 == pytest.approx(row.squared_bias + row.variance, rel=1e-9, abs=1e-12)


def _standin(mode="linear", sizes=(300, 200, 150)):
    fed = standin_covariates(RngStream(1), d=6, sizes=sizes)
    t1, t0 = standin_arm_params(6, mode, RngStream(2))
    return fed, Regeneration(mode, t1, t0, STANDIN_P[: len(sizes)], 1.0, 8)


def test_bootstrap_zero_noise_is_exact():
    fed, g = _standin()
    g0 = Regeneration(g.mode, g.theta1, g.theta0, g.p_by_study, 0.0, g.min_arm_size)
    rows = run_bootstrap(fed, ExperimentPlan(None, FAST[1:], 5, 3, regeneration=g0))
    for r in rows:
        assert r.failures == 0
        # the sample ATE of each resample differs from the original covariates' ATE
        assert r.rmse < 0.05


def test_bootstrap_zero_noise_matches_resample_truth():
    from fedate.scenarios import bootstrap_resample, regenerate_outcomes, regenerated_ate
    from fedate.estimators import estimate
    fed, g = _standin()
    rng = RngStream(3, 0)
    sample = regenerate_outcomes(bootstrap_resample(fed, rng.child(0)), g.mode, (g.theta1, g.theta0),
                                 g.p_by_study, 0.0, rng.child(1), g.min_arm_size, True)
    truth = regenerated_ate(sample, g.mode, (g.theta1, g.theta0))
    # inverse-variance weights target a different average of study effects
    for eid in ("Pool", "MetaSW", "OneShotSW", "OneShotIVW"):
        assert estimate(sample, eid).tau_hat == pytest.approx(truth, abs=1e-9)


def test_bootstrap_more_resamples_same_estimators():
    fed, g = _standin()
    few = run_bootstrap(fed, ExperimentPlan(None, FAST[1:], 10, 3, regeneration=g))
    many = run_bootstrap(fed, ExperimentPlan(None, FAST[1:], 60, 3, regeneration=g))
    assert [r.estimator_id for r in few] == [r.estimator_id for r in many]
    assert all(r.replications == 60 for r in many)


def test_bootstrap_without_truth_requires_value():
    fed = generate(load_preset("homog-small"), RngStream(9))
    with pytest.raises(ValidationError):
        run_bootstrap(fed, ExperimentPlan(None, ("Pool",), 2, 0))
    rows = run_bootstrap(fed, ExperimentPlan(None, ("Pool",), 2, 0, truth=0.0))
    assert rows[0].squared_bias == pytest.approx(rows[0].mean**2)


def _rows():
    return [SummaryRow("Pool", -1.1, 0.01, 1e-6, 0.1000049998750, 0.0, 0.0, 0, 10),
            SummaryRow("GD", -1.1000001, 0.01, 2e-6, 0.1, 2500.5, 12345.0, 1, 10)]


def test_emit_csv_one_row(tmp_path):
    path = emit_report(_rows()[:1], "csv", tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == "estimator_id,mean,variance,squared_bias,rmse,mean_rounds,mean_floats,failures,replications"


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_report_round_trip(tmp_path, fmt):
    rows = _rows()
    path = emit_report(rows, fmt, tmp_path / f"r.{fmt}")
    assert read_report(path) == rows


def test_report_deterministic_bytes(tmp_path):
    a = emit_report(_rows(), "json", tmp_path / "a.json").read_bytes()
    b = emit_report(_rows(), "json", tmp_path / "b.json").read_bytes()
    assert a == b


def test_report_missing_directory(tmp_path):
    with pytest.raises(IoError):
        emit_report(_rows(), "csv", tmp_path / "nope" / "r.csv")
    with pytest.raises(ValidationError):
        emit_report([], "csv", tmp_path / "r.csv")


def test_replication_dump(tmp_path):
    rows, raw = run_monte_carlo(ExperimentPlan(load_preset("homog-small"), ("Pool", "DM"), 3, 0), return_raw=True)
    path = emit_replications(raw, tmp_path / "reps.csv")
    recs = list(csv.DictReader(path.open()))
    assert len(recs) == 6
    pool = [float(r["tau_hat"]) for r in recs if r["estimator_id"] == "Pool"]
    assert np.mean(pool) == pytest.approx(rows[0].mean)
