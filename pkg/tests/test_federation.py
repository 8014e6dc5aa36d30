import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedate import _kernels_py, kernels
from fedate.data import ArmView, pooled_arm
from fedate.errors import Divergence, ValidationError
from fedate.estimators import EstimatorId, _arm_views, estimate, fit_arm
from fedate.federation import (
    CommLedger,
    FedAvgConfig,
    MessageKind,
    learning_rate_from_eigenvalues,
    run_fedavg,
    run_protocol,
    select_learning_rate,
)
from fedate.numerics import RngStream
from fedate.scenarios import generate, load_preset

from conftest import random_federation


def _views(fed, arm):
    return _arm_views(fed, arm)[0]


def test_single_sample_one_round():
    view = ArmView(np.array([[1.0]]), np.array([2.0]))
    theta, ledger = run_fedavg([view], FedAvgConfig(T=1, E=1, B=1, eta=0.1, convergence_tol=None, rng=RngStream(0)))
    assert theta == pytest.approx([0.4])
    assert ledger.rounds == 1


def test_pooled_solution_is_fixed_point(gen):
    fed = random_federation(gen, 3, 3)
    views = _views(fed, 1)
    pool = fit_arm(pooled_arm(fed, 1)).theta_hat
    theta, _ = run_fedavg(views, FedAvgConfig(T=50, eta="global_E1", convergence_tol=None, theta0=pool))
    np.testing.assert_allclose(theta, pool, atol=1e-12)


def test_fixed_rate_small_preset_reaches_pooled_fit():
    # Fixed learning rate 1e-2, E=1, at most 4000 rounds, on the Small preset.
    fed = generate(load_preset("homog-small"), RngStream(0))
    for arm in (1, 0):
        views = _views(fed, arm)
        theta, _ = run_fedavg(views, FedAvgConfig(T=4000, E=1, eta=1e-2, convergence_tol=1e-12), arm=arm)
        pool = fit_arm(pooled_arm(fed, arm)).theta_hat
        assert np.linalg.norm(theta - pool) <= 1e-6


def test_auto_rate_small_preset_reaches_pooled_fit():
    fed = generate(load_preset("homog-small"), RngStream(0))
    for arm in (1, 0):
        views = _views(fed, arm)
        theta, ledger = run_fedavg(views, FedAvgConfig(T=4000, E=1, eta="auto"), arm=arm)
        pool = fit_arm(pooled_arm(fed, arm)).theta_hat
        assert np.linalg.norm(theta - pool) <= 1e-6
        assert ledger.traces[-1].rounds_run <= 4000


def test_global_rate_examples():
    view = ArmView(np.eye(2) * np.sqrt(2.0), np.zeros(2))  # normalized Gram = I
    assert select_learning_rate([view], "global_E1") == pytest.approx(0.2)
    assert learning_rate_from_eigenvalues([3.0, 1.0], [10, 10], "global_E1") == pytest.approx(0.05)
    np.testing.assert_allclose(learning_rate_from_eigenvalues([4.0, 1.0], [1, 1], "local_T1"), [0.5, 2.0])
    assert learning_rate_from_eigenvalues([3.0, 1.0], [10, 30], "auto") == pytest.approx(0.9 / 1.5)
    assert learning_rate_from_eigenvalues([3.0, 1.0], [10, 30], "auto", local_steps=5) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        learning_rate_from_eigenvalues([1.0], [1], "bogus")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["global_E1", "auto"]))
def test_selected_rate_never_diverges_and_loss_decreases(seed, mode):
    gen = np.random.default_rng(seed)
    fed = random_federation(gen, int(gen.integers(1, 5)), int(gen.integers(1, 6)))
    views = _views(fed, 1)
    _, ledger = run_fedavg(views, FedAvgConfig(T=300, eta=mode, convergence_tol=None), record_loss=True)
    losses = ledger.traces[-1].losses
    assert np.all(np.isfinite(losses))
    assert np.all(np.diff(losses) <= 1e-12 * np.maximum(1.0, np.abs(losses[:-1])))


def test_huge_rate_diverges(gen):
    fed = random_federation(gen, 2, 2)
    with pytest.raises(Divergence):
        run_fedavg(_views(fed, 1), FedAvgConfig(T=5000, eta=50.0))


def test_minibatch_reproducible(gen):
    fed = random_federation(gen, 2, 2, n_min=40, n_max=40)
    cfg = FedAvgConfig(T=200, B=5, E=2, eta=0.01, convergence_tol=None, rng=RngStream(3))
    a, _ = run_fedavg(_views(fed, 1), cfg)
    b, _ = run_fedavg(_views(fed, 1), cfg)
    assert np.array_equal(a, b)
    pool = fit_arm(pooled_arm(fed, 1)).theta_hat
    assert np.linalg.norm(a - pool) < 0.5 * np.linalg.norm(pool)


def test_config_validation():
    with pytest.raises(ValidationError):
        FedAvgConfig(T=0)
    with pytest.raises(ValidationError):
        FedAvgConfig(eta=-1.0)
    with pytest.raises(ValidationError):
        FedAvgConfig(eta="fast")
    with pytest.raises(ValidationError):
        FedAvgConfig(B=0)


def test_kernel_backends_agree(gen):
    fed = random_federation(gen, 3, 4)
    views = _views(fed, 0)
    grams = np.stack([v.design.T @ v.design for v in views])
    xty = np.stack([v.design.T @ v.response for v in views])
    sizes = np.array([v.n for v in views], dtype=float)
    args = (grams, xty, sizes, sizes / sizes.sum(), np.full(3, 0.01), np.zeros(5), 500, 2, 1e-10, 1e12)
    ref = _kernels_py.fedavg_full_batch(*args)
    got = kernels.fedavg_full_batch(*args)
    np.testing.assert_allclose(got[0], ref[0], rtol=1e-12, atol=1e-14)
    assert got[1:3] == ref[1:3]
    assert got[3] == pytest.approx(ref[3], rel=1e-9)


# ------------------------------------------------------------- protocols


@pytest.fixture
def fed10():
    return generate(load_preset("homog-large").with_studies(n=[120] * 5), RngStream(4))


def test_meta_one_round(fed10):
    for eid in ("MetaSW", "MetaIVW"):
        rep = run_protocol(fed10, eid)
        assert rep.comm.rounds == 1
        assert rep.comm.floats_up_per_study == 2 and rep.comm.floats_down_per_study == 0


def test_one_shot_ivw_round_one_upload(fed10):
    rep = run_protocol(fed10, "OneShotIVW")
    d = fed10.d
    round1 = [m for m in rep.comm.messages if m.round == 1 and m.direction == "up" and m.study == 1]
    per_arm = [m.payload_floats for m in round1]
    assert per_arm == [(d + 1) + (d + 1) ** 2] * 2 == [132, 132]
    assert rep.comm.rounds == 2


def test_gd_fixed_t_rounds(fed10):
    rep = run_protocol(fed10, "GD", FedAvgConfig(T=100, eta=1e-3, convergence_tol=None))
    assert rep.comm.rounds == 101
    p = fed10.d + 1
    assert rep.comm.floats_up_per_study == 200 * (p + 1) + 2
    assert rep.comm.floats_down_per_study == 200 * p + 2 * p


def test_gd_auto_rate_adds_setup_round(fed10):
    rep = run_protocol(fed10, "GD", FedAvgConfig(T=100, eta="auto", convergence_tol=None))
    assert rep.comm.rounds == 102
    setup = [e for e in rep.comm.log if e.round == 1 and e.study == 1]
    assert sorted(e.kind.value for e in setup) == ["LearningRate"] * 2 + ["LocalEigen"] * 2
    assert all(e.payload_floats == 1 for e in setup)


def test_ledger_totals_equal_log(fed10):
    for eid in EstimatorId:
        study = 1 if eid is EstimatorId.LOCAL else None
        fedavg = FedAvgConfig(T=30, convergence_tol=None) if eid in (EstimatorId.GD, EstimatorId.GD_ADJ) else None
        led = run_protocol(fed10, eid, fedavg, study=study).comm
        for s in range(1, fed10.K + 1):
            up = sum(e.payload_floats for e in led.log if e.study == s and e.direction == "up")
            down = sum(e.payload_floats for e in led.log if e.study == s and e.direction == "down")
            assert up == led.up.get(s, 0) and down == led.down.get(s, 0)
        assert led.rounds == max((e.round for e in led.log), default=0)


def test_payloads_never_carry_rows():
    # Payload sizes depend only on d and K, never on the row counts.
    small = generate(load_preset("homog-large").with_studies(n=[60] * 5), RngStream(1))
    large = generate(load_preset("homog-large").with_studies(n=[300] * 5), RngStream(1))
    allowed = set(MessageKind)
    for eid in ("DM", "MetaSW", "MetaIVW", "OneShotSW", "OneShotIVW", "OneShotSWAdj", "OneShotIVWAdj"):
        a, b = run_protocol(small, eid).comm, run_protocol(large, eid).comm
        assert [m.payload_floats for m in a.messages] == [m.payload_floats for m in b.messages]
        assert {m.kind for m in a.messages} <= allowed


@pytest.mark.parametrize("eid", [e for e in EstimatorId])
def test_protocol_bit_identical_to_direct(fed10, eid):
    study = 2 if eid is EstimatorId.LOCAL else None
    fedavg = FedAvgConfig(T=20000)
    direct = estimate(fed10, eid, fedavg, study)
    proto = run_protocol(fed10, eid, fedavg, study=study)
    assert proto.tau_hat == direct.tau_hat
    assert proto.comm.rounds == direct.comm.rounds
    assert proto.comm.floats_up_per_study == direct.comm.floats_up_per_study
    assert proto.comm.floats_down_per_study == direct.comm.floats_down_per_study


def test_ledger_to_dict_schema(fed10):
    out = run_protocol(fed10, "OneShotSW").comm.to_dict("OneShotSW")
    assert set(out) == {"estimator", "rounds", "floats_up_per_study", "floats_down_per_study", "log"}
    assert out["log"][0].keys() == {"round", "direction", "study", "kind", "floats"}


def test_ledger_rejects_bad_direction():
    with pytest.raises(ValidationError):
        CommLedger().record(1, "sideways", 1, MessageKind.LOCAL_ATE, 1)
