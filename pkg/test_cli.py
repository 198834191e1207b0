"""
Tests for the command line: exit codes, output files and round trips.
"""
import json
import math

import pytest
from click.testing import CliRunner

from spinlab.cli import EXIT_CAP, EXIT_ERROR, EXIT_INVALID_STATE, EXIT_NOT_EQUIVALENT, cli
from spinlab.file_utils import load_dataset, load_pair, read_trace

PAIR = {
    "n": 2,
    "gamma": [1.0, 1.7],
    "couplings": [{"k": 1, "l": 2, "J": 0.9}],
    "initial_state": {"strings": [{"sites": [[1, "z"]], "coeff": 0.05}, {"sites": [[1, "z"], [2, "z"]], "coeff": 0.05}]},
}


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("SPINLAB_LOG_LEVEL", "SPINLAB_CLOSURE_CAP", "SPINLAB_SIMULATION_CAP", "SPINLAB_GRID",
                 "SPINLAB_WORKERS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def runner():
    return CliRunner()


def write(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def chain_model(n, with_state=True):
    payload = {
        "n": n,
        "gamma": [float(k) for k in range(1, n + 1)],
        "couplings": [{"k": k, "l": k + 1, "J": 1.0} for k in range(1, n)],
    }
    if with_state:
        payload["initial_state"] = {"strings": []}
    return payload


def test_simulate_mixed_state_gives_zero_traces(runner, tmp_path):
    model = write(tmp_path / "model.json", chain_model(2))
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 0.3, "ux": 1.0, "uy": -0.5}]})
    out = tmp_path / "trace.csv"
    result = runner.invoke(cli, ["simulate", "--model", model, "--schedule", schedule, "--grid", "0.1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.read_text().splitlines()[0] == "t,Mx,My,Mz"
    trace = read_trace(str(out))
    assert len(trace) == 4
    assert max(abs(v) for v in trace.as_array().ravel()) < 1e-12


def test_simulate_rabi_oscillation(runner, tmp_path):
    model = write(tmp_path / "model.json", {"n": 1, "gamma": [1.0],
                                            "initial_state": {"strings": [{"sites": [[1, "z"]], "coeff": 1.0}]}})
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 1.0, "ux": 2.0}]})
    out = tmp_path / "trace.csv"
    result = runner.invoke(cli, ["simulate", "--model", model, "--schedule", schedule, "--grid", "0.1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.read_text().splitlines()[1] == "0,0,0,0.5"
    trace = read_trace(str(out))
    for t, mx, my, mz in zip(trace.times, trace.mx, trace.my, trace.mz):
        assert mx == pytest.approx(0.0, abs=1e-12)
        assert my == pytest.approx(-0.5 * math.sin(2 * t), abs=1e-12)
        assert mz == pytest.approx(0.5 * math.cos(2 * t), abs=1e-12)


def test_simulate_missing_file(runner, tmp_path):
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 0.3}]})
    out = tmp_path / "trace.csv"
    result = runner.invoke(cli, ["simulate", "--model", str(tmp_path / "absent.json"), "--schedule", schedule,
                                 "--out", str(out)])
    assert result.exit_code == EXIT_ERROR
    assert "absent.json" in result.output
    assert not out.exists()


def test_simulate_invalid_state(runner, tmp_path):
    payload = chain_model(1, with_state=False)
    payload["initial_state"] = {"matrix": [[[1.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-0.5, 0.0]]]}
    model = write(tmp_path / "model.json", payload)
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 0.3}]})
    result = runner.invoke(cli, ["simulate", "--model", model, "--schedule", schedule])
    assert result.exit_code == EXIT_INVALID_STATE
    assert "invalid state" in result.output


def test_unknown_keys_are_parse_errors(runner, tmp_path):
    payload = chain_model(2)
    payload["temperature"] = 300
    model = write(tmp_path / "model.json", payload)
    result = runner.invoke(cli, ["analyze", "--model", model])
    assert result.exit_code == EXIT_ERROR
    assert "temperature" in result.output


def test_analyze_report(runner, tmp_path):
    model = write(tmp_path / "model.json", chain_model(2, with_state=False))
    out = tmp_path / "report.json"
    result = runner.invoke(cli, ["analyze", "--model", model, "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert report["controllable"] and report["observable"]
    assert report["lie_dimension"] == 15


def test_analyze_cap(runner, tmp_path):
    model = write(tmp_path / "model.json", chain_model(6, with_state=False))
    result = runner.invoke(cli, ["analyze", "--model", model])
    assert result.exit_code == EXIT_CAP
    assert "n <= 5" in result.output


def test_analyze_cap_follows_environment(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("SPINLAB_CLOSURE_CAP", "1")
    model = write(tmp_path / "model.json", chain_model(2, with_state=False))
    result = runner.invoke(cli, ["analyze", "--model", model])
    assert result.exit_code == EXIT_CAP


def test_partner_and_equivalence(runner, tmp_path):
    pair = write(tmp_path / "pair.json", PAIR)
    partner = tmp_path / "partner.json"
    result = runner.invoke(cli, ["partner", "--pair", pair, "--out", str(partner)])
    assert result.exit_code == 0, result.output
    assert "psd_ok: true" in result.output
    mirrored = load_pair(str(partner))
    assert mirrored.net.coupling(1, 2) == -0.9

    verdict = tmp_path / "verdict.json"
    result = runner.invoke(cli, ["equiv", "--pair-a", pair, "--pair-b", str(partner), "--trials", "3",
                                 "--grid", "0.05", "--out", str(verdict)])
    assert result.exit_code == 0, result.output
    payload = json.loads(verdict.read_text())
    assert payload["equivalent"] and payload["trials"] == 3


def test_equivalence_exit_code(runner, tmp_path):
    pair = write(tmp_path / "pair.json", PAIR)
    other = dict(PAIR, couplings=[{"k": 1, "l": 2, "J": 0.5}])
    other_path = write(tmp_path / "other.json", other)
    verdict = tmp_path / "verdict.json"
    result = runner.invoke(cli, ["equiv", "--pair-a", pair, "--pair-b", other_path, "--trials", "3",
                                 "--grid", "0.05", "--out", str(verdict)])
    assert result.exit_code == EXIT_NOT_EQUIVALENT
    payload = json.loads(verdict.read_text())
    assert not payload["equivalent"]
    assert payload["max_deviation"] > 1e-3


def test_dataset_and_identify_round_trip(runner, tmp_path):
    truth = write(tmp_path / "truth.json", PAIR)
    data_dir = tmp_path / "data"
    result = runner.invoke(cli, ["dataset", "--model", truth, "--out-dir", str(data_dir), "--count", "4",
                                 "--seed", "1", "--grid", "0.05"])
    assert result.exit_code == 0, result.output
    assert (data_dir / "hypothesis.json").exists() and (data_dir / "state.json").exists()
    assert sorted(p.name for p in data_dir.glob("trace_*.csv")) == [f"trace_{i}.csv" for i in range(4)]

    guess = write(tmp_path / "guess.json", {"n": 2, "gamma": [1.05, 1.65], "couplings": [{"k": 1, "l": 2, "J": 0.95}]})
    fit = tmp_path / "fit.json"
    result = runner.invoke(cli, ["identify", "--data-dir", str(data_dir), "--guess", guess, "--out", str(fit)])
    assert result.exit_code == 0, result.output
    payload = json.loads(fit.read_text())
    assert payload["branch"] == "J"
    assert payload["couplings"][0]["J"] == pytest.approx(0.9, abs=1e-6)
    assert payload["gamma"] == pytest.approx([1.0, 1.7], abs=1e-6)


def test_identify_malformed_dataset(runner, tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    result = runner.invoke(cli, ["identify", "--data-dir", str(data_dir)])
    assert result.exit_code == EXIT_ERROR
    assert "hypothesis.json" in result.output


def test_outputs_are_deterministic(runner, tmp_path):
    model = write(tmp_path / "model.json", PAIR)
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 0.4, "ux": 1.0}, {"duration": 0.2, "uz": -2.0}]})
    texts = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        result = runner.invoke(cli, ["simulate", "--model", model, "--schedule", schedule, "--out", str(out)])
        assert result.exit_code == 0, result.output
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]

    listings = []
    for name in ("d1", "d2"):
        result = runner.invoke(cli, ["dataset", "--model", model, "--out-dir", str(tmp_path / name), "--count", "2",
                                     "--grid", "0.1", "--noise", "1e-3"])
        assert result.exit_code == 0, result.output
        listings.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()})
    assert listings[0] == listings[1]


@pytest.mark.parametrize("command", ["simulate", "equiv", "dataset"])
def test_explicit_zero_grid_is_rejected(runner, tmp_path, command):
    pair = write(tmp_path / "pair.json", PAIR)
    schedule = write(tmp_path / "schedule.json", {"segments": [{"duration": 0.3}]})
    args = {
        "simulate": ["simulate", "--model", pair, "--schedule", schedule, "--out", str(tmp_path / "trace.csv")],
        "equiv": ["equiv", "--pair-a", pair, "--pair-b", pair, "--trials", "1", "--out", str(tmp_path / "v.json")],
        "dataset": ["dataset", "--model", pair, "--out-dir", str(tmp_path / "data"), "--count", "1"],
    }[command]
    result = runner.invoke(cli, args + ["--grid", "0"])
    assert result.exit_code == EXIT_ERROR
    assert "sample spacing must be positive" in result.output


def test_noisy_dataset_of_saturated_state(runner, tmp_path):
    model = write(tmp_path / "model.json", {"n": 1, "gamma": [1.0],
                                            "initial_state": {"strings": [{"sites": [[1, "z"]], "coeff": 1.0}]}})
    data_dir = tmp_path / "data"
    result = runner.invoke(cli, ["dataset", "--model", model, "--out-dir", str(data_dir), "--count", "3",
                                 "--grid", "0.1", "--noise", "1e-3"])
    assert result.exit_code == 0, result.output
    data, state = load_dataset(str(data_dir))
    assert len(data) == 3 and state is not None
    assert max(abs(record.trace.mz[0]) for record in data.records) == pytest.approx(0.5, abs=1e-2)
