import csv
import json
import os

import pytest

from curvlab import cli
from curvlab.errors import NoConvergence


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_run_hopf_bolza(tmp_path, capsys):
    code, out, _ = run(["run", "hopf", "--model", "bolza", "--out", str(tmp_path)], capsys)
    assert code == 0
    with open(tmp_path / "hopf.csv") as fh:
        header = fh.readline()
        rows = list(csv.DictReader(fh))
    assert header.startswith("# curvlab ") and '"model": "bolza"' in header
    assert rows and all(r["U_u"] == "1.000000" for r in rows)
    doc = json.loads((tmp_path / "hopf.json").read_text())
    assert doc["passed"] and doc["config"]["model"] == "bolza"
    assert json.loads(out)["passed"]


def test_run_eup_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["run", "eup", "--n", "8", "--trials", "100", "--seed", "7", "--out", str(d)], capsys)[0] == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b)) and "eup.csv" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CURVLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["run", "surface-validate"], capsys)[0] == 0
    assert (tmp_path / "env" / "surface-validate.json").exists()


def test_config_file_overrides_preset(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\neup_trials = 5\neup_n = 4\n")
    assert run(["run", "eup", "--config", str(cfg), "--out", str(tmp_path)], capsys)[0] == 0
    doc = json.loads((tmp_path / "eup.json").read_text())
    assert doc["config"]["eup_trials"] == 5 and doc["checks"]["eup_random"]["trials"] == 5


def test_validation_error_exit_code(capsys):
    code, _, err = run(["surface", "validate", "--model", "no-such-model"], capsys)
    assert code == 2
    rec = json.loads(err)
    assert rec["error"] == "ValidationError" and rec["exit_code"] == 2


def test_combinatorial_guard_exit_code(tmp_path, capsys):
    roof = tmp_path / "r.ini"
    roof.write_text("[roof]\nK = 2\nf0.0 = 1/10 1/10\nf0.1 = 1/10 1/10\n")
    code, _, err = run(["symbolic", "words", "--roof", str(roof), "--T", "5", "--cap", "100"], capsys)
    assert code == 4 and json.loads(err)["error"] == "CombinatorialBlowup"


def test_nonconvergence_exit_code(monkeypatch, capsys):
    def fail(*a, **k):
        raise NoConvergence("horizon doubling did not converge", [0.1, 0.2])
    monkeypatch.setattr(cli, "hopf_unstable", fail)
    code, _, err = run(["riccati", "hopf", "--orbits", "1"], capsys)
    assert code == 3 and json.loads(err)["error"] == "NoConvergence"


def test_symbolic_words_jsonl(tmp_path, capsys):
    roof = tmp_path / "r.ini"
    roof.write_text("[roof]\nK = 2\nf0.0 = 1/5 1/5\nf0.1 = 1/5 1/5\n")
    code, out, _ = run(["symbolic", "words", "--roof", str(roof), "--T", "0.7"], capsys)
    lines = out.splitlines()
    assert code == 0 and json.loads(lines[0])["count"] == 64
    assert all(len(json.loads(ln)["word"]) == 6 for ln in lines[1:])


def test_entropy_commands(tmp_path, capsys):
    meas = tmp_path / "m.jsonl"
    rows = [{"K": 2, "max_depth": 3}]
    for d in (1, 2, 3):
        for i in range(2 ** d):
            w = [int(c) for c in format(i, f"0{d}b")]
            rows.append({"word": w, "mass": 0.5 ** d})
    meas.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    code, out, _ = run(["entropy", "estimate", "--measure", str(meas), "--n", "3"], capsys)
    assert code == 0 and json.loads(out)["estimate"] == pytest.approx(0.6931471805599453)
    code, out, _ = run(["entropy", "ruelle", "--h", "0", "--mean-uu", "1"], capsys)
    assert code == 0 and json.loads(out)["ruelle_slack"] == 1.0


def test_riccati_subcommands(capsys):
    code, out, _ = run(["riccati", "lyapunov", "--model", "flat-torus", "--orbits", "2", "--T", "5"], capsys)
    assert code == 0 and out.splitlines()[1] == "seed,orbit,T,riccati,tangent,gap"
    code, out, _ = run(["riccati", "growth-check", "--model", "bolza", "--orbits", "3"], capsys)
    assert code == 0 and all(line.endswith("True") for line in out.splitlines()[2:])


def test_quantum_eup_command(tmp_path, capsys):
    code, out, _ = run(["quantum", "eup", "--n", "4", "--trials", "10", "--out-csv", str(tmp_path / "e.csv")], capsys)
    assert code == 0 and json.loads(out)["passed"]
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 12


def test_version(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert "curvlab" in capsys.readouterr().out
