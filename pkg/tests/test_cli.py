import csv
import json

import numpy as np
import pytest

from pollfluid import spec_to_dict, example_spec
from pollfluid.cli import main
from pollfluid.fluid import analyze, sample_trajectory


def write_spec(path, spec, **extra):
    doc = spec_to_dict(spec)
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def exh(tmp_path):
    return write_spec(tmp_path / "exh.json", example_spec())


@pytest.fixture
def gated(tmp_path):
    return write_spec(tmp_path / "gated.json", example_spec((1, 1, 1)))


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_analyze(capsys, exh):
    code, rep, _ = run_cli(capsys, "analyze", "--spec", exh)
    assert code == 0
    assert rep["theta"] == pytest.approx(3.7497, abs=5e-4)
    assert np.allclose(rep["derived"]["rho_lambda_cbar"], [0.4749, 0.5194, 0.8625], atol=5e-4)
    assert len(rep["Mk"]) == 3 and rep["warnings"]


def test_analyze_round_trip(capsys, exh, tmp_path):
    _, rep, _ = run_cli(capsys, "analyze", "--spec", exh)
    again = tmp_path / "again.json"
    again.write_text(json.dumps(rep["spec"]))
    _, rep2, _ = run_cli(capsys, "analyze", "--spec", str(again))
    assert rep2 == rep


def test_parse_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    code, _, err = run_cli(capsys, "analyze", "--spec", str(bad))
    assert code == 2 and "invalid JSON" in err
    doc = spec_to_dict(example_spec())
    doc["service"][2]["params"]["rate"] = "fast"
    bad.write_text(json.dumps(doc))
    code, _, err = run_cli(capsys, "analyze", "--spec", str(bad))
    assert code == 2 and "service[2].params.rate" in err
    code, _, _ = run_cli(capsys, "analyze", "--spec", str(tmp_path / "missing.json"))
    assert code == 2


def test_not_overloaded(capsys, tmp_path):
    spec = example_spec()
    doc = spec_to_dict(spec)
    doc["lambda"] = [0.1, 0.1, 0.1]
    path = tmp_path / "under.json"
    path.write_text(json.dumps(doc))
    code, _, err = run_cli(capsys, "analyze", "--spec", str(path))
    assert code == 3 and "not overloaded" in err


def test_fluid(capsys, gated, tmp_path):
    out = tmp_path / "fluid"
    code, rep, _ = run_cli(capsys, "fluid", "--spec", gated, "--out", str(out), "--window", "0:6:0.05")
    assert code == 0
    assert rep["beta"] == pytest.approx(1.329053703440936, abs=1e-12)
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["t", "x1", "x2", "x3", "total"]
    assert rows.shape == (121, 5)
    assert np.allclose(rows[:, 4], rows[:, 1:4].sum(axis=1))
    saved = json.loads((out / "skeleton.json").read_text())
    assert saved["bbar"] == rep["bbar"]
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "skeleton.json", "trajectory.csv"]


def test_fluid_grid_zero_and_xi(capsys, gated, tmp_path):
    out = tmp_path / "z"
    assert main(["fluid", "--spec", gated, "--out", str(out), "--window", "0"]) == 0
    _, rows = read_csv(out / "trajectory.csv")
    assert rows.shape == (1, 5) and np.all(rows == 0)
    out = tmp_path / "xi"
    assert main(["fluid", "--spec", gated, "--out", str(out), "--window", "0:4:0.1", "--xi", "1.2"]) == 0
    _, rows = read_csv(out / "trajectory.csv")
    sk = analyze(example_spec((1, 1, 1)))[3]
    # shortest round-trip formatting makes the CSV exact
    assert np.array_equal(rows[:, 1:4], sample_trajectory(sk, 1.2, rows[:, 0]))
    capsys.readouterr()


def test_simulate(capsys, exh, tmp_path):
    out = tmp_path / "sim"
    code, rep, _ = run_cli(capsys, "simulate", "--spec", exh, "--out", str(out), "--n", "1,5,8",
                           "--seeds", "3", "--seed", "9")
    assert code == 0
    scaled = sorted(p.name for p in out.glob("scaled_*.csv"))
    assert len(scaled) == 9
    assert len(list(out.glob("cycles_*.csv"))) == 9
    assert len(list(out.glob("manifest*.json"))) == 1
    theta = rep["theta"]
    assert all(r["ok"] and 1.0 <= r["xi_hat"] < theta for r in rep["runs"])
    header, _ = read_csv(out / "cycles_n5_rep0.csv")
    assert header == ["n", "t_cycle"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"] == rep["runs"]
    # same flags, same numbers
    out2 = tmp_path / "sim2"
    main(["simulate", "--spec", exh, "--out", str(out2), "--n", "1,5,8", "--seeds", "3", "--seed", "9"])
    capsys.readouterr()
    for name in scaled:
        assert (out / name).read_text() == (out2 / name).read_text()


def test_simulate_raw_path_and_errors(capsys, exh, tmp_path):
    out = tmp_path / "raw"
    code, rep, _ = run_cli(capsys, "simulate", "--spec", exh, "--out", str(out), "--n", "0",
                           "--window", "0.5:20:0.5")
    assert code == 0
    _, rows = read_csv(out / "scaled_n0_rep0.csv")
    assert np.array_equal(rows[:, 1:4], np.round(rows[:, 1:4]))
    code, _, err = run_cli(capsys, "simulate", "--spec", exh, "--window", "0")
    assert code == 2 and "empty grid" in err


def test_simulate_event_cap_is_per_run(capsys, exh):
    code, rep, _ = run_cli(capsys, "simulate", "--spec", exh, "--n", "1,8", "--event-cap", "5000")
    assert code == 0
    ok = {r["n"]: r["ok"] for r in rep["runs"]}
    assert ok == {1: True, 8: False}
    assert "horizon too large" in rep["runs"][1]["error"]
    code, _, _ = run_cli(capsys, "simulate", "--spec", exh, "--n", "8", "--event-cap", "5000")
    assert code == 4


def test_sim_section_in_spec(capsys, tmp_path):
    path = write_spec(tmp_path / "s.json", example_spec(), sim={"seed": 4, "n": [3], "seeds": 2, "window": "1:2:0.5"})
    code, rep, _ = run_cli(capsys, "simulate", "--spec", path)
    assert code == 0 and rep["seed"] == 4 and rep["n"] == [3] and len(rep["runs"]) == 2


def test_validate(capsys, exh):
    code, rep, _ = run_cli(capsys, "validate", "--spec", exh, "--n", "4", "--seeds", "1", "--seed", "2")
    assert code == 0
    assert len(rep["table"]) == 1
    assert rep["table"][0]["median_distance"] == rep["runs"][0]["fit_distance"]
    code, rep, _ = run_cli(capsys, "validate", "--spec", exh, "--n", "2,7", "--seeds", "5")
    assert rep["table"][1]["median_distance"] < rep["table"][0]["median_distance"]


def test_optimize(capsys, exh, tmp_path):
    code, rep, _ = run_cli(capsys, "optimize", "--spec", exh, "--candidates", "inf")
    assert code == 0 and rep["best"] == ["inf", "inf", "inf"]
    out = tmp_path / "ga"
    args = ["optimize", "--spec", exh, "--mode", "ga", "--seed", "5", "--kmax", "8", "--generations", "20"]
    code, a, _ = run_cli(capsys, *args, "--out", str(out))
    code, b, _ = run_cli(capsys, *args)
    assert a["history"] == b["history"] and len(a["history"]) == 21
    header, rows = read_csv(out / "history.csv")
    assert header == ["iteration", "best_beta"] and rows.shape == (21, 2)
    saved = json.loads((out / "optimize.json").read_text())
    assert saved["best"] == a["best"] and saved["beta"] == a["beta"]
    code, _, err = run_cli(capsys, "optimize", "--spec", exh, "--kmax", "200")
    assert code == 3


@pytest.mark.slow
def test_optimize_exhaustive_full(capsys, exh):
    code, rep, _ = run_cli(capsys, "optimize", "--spec", exh)
    assert code == 0 and rep["best"] == ["inf", "inf", 1]
