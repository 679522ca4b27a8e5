import csv
import json

import numpy as np
import pytest

from branchjump.cli import main
from branchjump.model import built_in_rabi, load_model_file


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_evolve_rabi(tmp_path):
    assert main(["evolve", "--builtin", "rabi", "--omega", "1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "weights.csv")
    assert list(rows[0]) == ["t", "branch_label", "weight"]
    at = {(float(r["t"]), r["branch_label"]): float(r["weight"]) for r in rows}
    t_half = min({t for t, _ in at}, key=lambda t: abs(t - np.pi / 2))
    assert t_half == pytest.approx(np.pi / 2, abs=1e-12)
    assert at[(t_half, "1")] == pytest.approx(1.0, abs=1e-9)


def test_evolve_measurement(tmp_path):
    assert main(["evolve", "--builtin", "measurement", "--c", "0.6,0.8", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "weights.csv")
    final = {r["branch_label"]: float(r["weight"]) for r in rows[-3:]}
    assert final["saw 1"] == pytest.approx(0.36, abs=1e-10)
    assert final["saw 2"] == pytest.approx(0.64, abs=1e-10)
    assert final["ready"] == pytest.approx(0.0, abs=1e-12)


def test_missing_scenario(tmp_path, capsys):
    assert main(["evolve", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert "file not found" in capsys.readouterr().err


def test_invalid_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim_c": 2}')
    assert main(["evolve", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "missing field" in capsys.readouterr().err


def test_bad_flags_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--builtin", "nonsense"])
    assert exc.value.code == 2
    assert main(["simulate", "--builtin", "rabi", "--n", "0", "--out", str(tmp_path)]) == 2


def test_dump_scenario_round_trip(tmp_path):
    dump = tmp_path / "rabi.json"
    assert main(["evolve", "--builtin", "rabi", "--omega", "2", "--dump-scenario", str(dump), "--out", str(tmp_path)]) == 0
    m = load_model_file(dump)
    ref = built_in_rabi(2.0)
    np.testing.assert_array_equal(m.schedule[0].hamiltonian.entries, ref.schedule[0].hamiltonian.entries)
    assert m.t_max == ref.t_max
    assert main(["evolve", "--scenario", str(dump), "--out", str(tmp_path / "again")]) == 0


def test_simulate_diagonal_has_no_jumps(tmp_path):
    assert main(["simulate", "--builtin", "diagonal", "--n", "200", "--dt", "0.01", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectories.jsonl").read_text().splitlines()
    assert len(lines) == 200
    for line in lines:
        rec = json.loads(line)
        assert rec["jumps"] == [] and "seed" in rec and "diagnostics" in rec
    rows = read_csv(tmp_path / "occupation.csv")
    assert list(rows[0]) == ["t", "branch_label", "frequency", "born_weight", "stderr"]


def test_simulate_deterministic_across_threads(tmp_path):
    outs = []
    for threads in ("1", "4"):
        out = tmp_path / threads
        args = ["simulate", "--builtin", "measurement", "--n", "2500", "--seed", "9", "--threads", threads]
        assert main(args + ["--out", str(out)]) == 0
        outs.append(out)
    for name in ("trajectories.jsonl", "occupation.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


@pytest.mark.slow
def test_simulate_rabi_reproducible_and_equivariant(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert main(["simulate", "--builtin", "rabi", "--n", "10000", "--seed", "42", "--out", str(out)]) == 0
        runs.append(out)
    for name in ("trajectories.jsonl", "occupation.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    rows = read_csv(runs[0] / "occupation.csv")
    ok = 0
    for r in rows:
        diff = abs(float(r["frequency"]) - float(r["born_weight"]))
        ok += diff <= 4 * float(r["stderr"])
    assert ok / len(rows) >= 0.99


def test_verify_rabi(tmp_path):
    assert main(["verify", "--builtin", "rabi", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "equivariance.json").read_text())
    assert doc["pass"] and doc["max_abs_deviation"] <= 1e-6
    assert (tmp_path / "equivariance.csv").exists()


def test_verify_no_rectify_fails(tmp_path):
    assert main(["verify", "--builtin", "rabi", "--no-rectify", "--out", str(tmp_path)]) == 4


@pytest.mark.slow
def test_verify_fuzz(tmp_path):
    assert main(["verify", "--fuzz", "20", "--dim", "8", "--seed", "7", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "equivariance.json").read_text())
    assert doc["n_models"] == 20
    assert all(r["pass"] for r in doc["reports"])


def test_rates_command(tmp_path):
    assert main(["rates", "--builtin", "rabi", "--points", "9", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "rates.csv")
    assert list(rows[0]) == ["t", "to_label", "from_label", "J", "T"]
    assert len(rows) == 9 * 2
    r = next(r for r in rows if r["to_label"] == "1" and abs(float(r["t"]) - np.pi / 4) < 1e-12)
    assert float(r["J"]) == pytest.approx(1.0, abs=1e-12)
    assert float(r["T"]) == pytest.approx(2.0, abs=1e-12)
