import json

import numpy as np
import pytest

from fedate.cli import main, parse_fedavg
from fedate.data import emit_csv
from fedate.errors import ValidationError
from fedate.numerics import RngStream
from fedate.scenarios import generate, load_preset


@pytest.fixture
def data_csv(tmp_path):
    fed = generate(load_preset("homog-small"), RngStream(0))
    path = tmp_path / "fed.csv"
    emit_csv(fed, path)
    return path


def test_advise_json(capsys):
    assert main(["advise", "--local-full-rank", "--same-x-dist"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == {"recommendation": ["OneShotIVW"], "dm_biased": False}
    assert main(["advise", "--federated-full-rank", "--study-effects"]) == 0
    assert json.loads(capsys.readouterr().out) == {"recommendation": ["GDAdj"], "dm_biased": True}
    assert main(["advise"]) == 0
    assert json.loads(capsys.readouterr().out)["recommendation"] == ["GatherMoreData"]


def test_estimate_writes_report(tmp_path, data_csv):
    out = tmp_path / "est.json"
    assert main(["estimate", "--data", str(data_csv), "--estimator", "OneShotIVW", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["estimator"] == "OneShotIVW"
    assert rep["comm"]["rounds"] == 2
    assert len(rep["comm"]["log"]) > 0
    assert main(["estimate", "--data", str(data_csv), "--estimator", "Pool", "--adjusted", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["estimator"] == "PoolAdj"


def test_estimate_gd_with_fedavg_spec(tmp_path, data_csv, capsys):
    assert main(["estimate", "--data", str(data_csv), "--estimator", "GD", "--fedavg", "T=20000,E=1,eta=auto"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["comm"]["rounds"] > 2


def test_exit_code_validation(tmp_path, data_csv, capsys):
    assert main(["estimate", "--data", str(data_csv), "--estimator", "Bogus"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("study_id,w,y,x1\n1,3,0,0\n")
    assert main(["estimate", "--data", str(bad), "--estimator", "Pool"]) == 2
    assert main(["estimate", "--data", str(tmp_path / "missing.csv"), "--estimator", "Pool"]) == 2
    assert main(["simulate", "--scenario", "unknown", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["simulate", "--scenario", "homog-small", "--reps", "1",
                 "--out", str(tmp_path / "no" / "x.csv")]) == 2


def test_exit_code_numerical(tmp_path, capsys):
    # Both arms hold three rows: too few for the 11-parameter local fits.
    fed = generate(load_preset("homog-small").replace(min_arm_size=3).with_studies(n=[6] * 5), RngStream(0))
    path = tmp_path / "tiny.csv"
    emit_csv(fed, path)
    assert main(["estimate", "--data", str(path), "--estimator", "MetaSW"]) == 3


def test_simulate_outputs(tmp_path):
    out, dump = tmp_path / "r.json", tmp_path / "d.csv"
    assert main(["simulate", "--scenario", "homog-small", "--estimators", "Pool,MetaSW,Local:2", "--reps", "3",
                 "--seed", "1", "--out", str(out), "--dump-reps", str(dump)]) == 0
    rows = json.loads(out.read_text())
    assert [r["estimator_id"] for r in rows] == ["Pool", "MetaSW", "Local:2"]
    assert len(dump.read_text().splitlines()) == 1 + 9


def test_simulate_scenario_file(tmp_path):
    from fedate.scenarios import scenario_to_dict
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps(scenario_to_dict(load_preset("homog-small"))))
    out = tmp_path / "r.csv"
    assert main(["simulate", "--scenario", str(spec), "--estimators", "DM", "--reps", "2", "--out", str(out)]) == 0
    assert out.read_text().startswith("estimator_id,")


def test_bench_ledgers(capsys):
    assert main(["bench", "--estimator", "OneShotIVW", "--d", "10"]) == 0
    led = json.loads(capsys.readouterr().out)
    assert led["rounds"] == 2 and led["floats_up_per_study"] == 2 * (11 + 121) + 2
    assert main(["bench", "--estimator", "GD", "--d", "3", "--T", "100", "--eta", "0.001", "--log"]) == 0
    led = json.loads(capsys.readouterr().out)
    assert led["rounds"] == 101 and led["log"]
    assert main(["bench", "--estimator", "MetaSW", "--d", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["rounds"] == 1


def test_parse_fedavg():
    cfg = parse_fedavg("T=500,E=2,B=16,eta=0.01,seed=4")
    assert (cfg.T, cfg.E, cfg.B, cfg.eta) == (500, 2, 16, 0.01)
    assert parse_fedavg("eta=auto,B=full").B is None
    assert parse_fedavg(None) is None
    with pytest.raises(ValidationError):
        parse_fedavg("T=abc")
    with pytest.raises(ValidationError):
        parse_fedavg("Q=1")
