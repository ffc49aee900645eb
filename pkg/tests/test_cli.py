import csv
import json
import subprocess
import sys

import pytest

from lobmfg.cli import PRESETS, UsageError, main, parse_config, validate_document


def run(tmp_path, *args):
    return main(["run", *args, "--output", str(tmp_path)])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_presets_parse(preset):
    config, settings = parse_config(PRESETS[preset])
    assert config.n == round(config.q_max / config.h)
    assert settings["seed"] == 0


def test_full_run_writes_artifacts(tmp_path):
    assert run(tmp_path, "--preset", "test4", "--qmax", "12", "--events", "500") == 0
    names = {p.name for p in tmp_path.iterdir()}
    for f in ("values_u_II.csv", "values_v_II.csv", "decisions_II.csv", "measure.csv", "trajectory.csv",
              "frontier_M0.csv", "frontier_M1.csv", "frontier_numeric_P-C.csv", "frontier_numeric_C-P.csv",
              "metrics.json", "timings.json"):
        assert f in names
    rows = read_csv(tmp_path / "decisions_II.csv")
    assert len(rows) == 144 and {r["region"] for r in rows} <= {"++", "+-", "-+", "--"}
    assert len(read_csv(tmp_path / "trajectory.csv")) == 500
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["stages"]["solve"]["equilibrium_gap"] < 1e-8
    assert doc["metrics"]["classes"][0]["spread"] > 0
    assert sum(float(r["mass"]) for r in read_csv(tmp_path / "measure.csv")) == pytest.approx(1.0)


def test_two_class_run_labels_files(tmp_path):
    assert run(tmp_path, "--preset", "test6", "--qmax", "4", "--stage", "metrics") == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert [c["label"] for c in doc["metrics"]["classes"]] == ["II", "HFT"]
    assert "mix" in doc["metrics"]
    assert (tmp_path / "values_u_HFT.csv").exists()
    assert not (tmp_path / "trajectory.csv").exists()


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "--preset", "test1", "--qmax", "10", "--events", "300", "--seed", "3") == 0
    for f in a.iterdir():
        if f.name != "timings.json":
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_config_file_and_stage(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2, "c": 0.01}], "q_max": 8}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--stage", "solve", "--output", str(out)]) == 0
    assert (out / "values_u_class0.csv").exists() and not (out / "measure.csv").exists()


@pytest.mark.parametrize("doc, msg", [
    ({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2, "c": -1}], "q_max": 8}, "c"),
    ({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2, "c": 0.01}], "q_max": 8.5}, "q_max"),
    ({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2}], "q_max": 8}, "missing"),
    ({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2, "c": 0.01}], "q_max": 8, "bogus": 1}, "unknown"),
    ({"classes": [], "q_max": 8}, "classes"),
    ({"classes": [{"q": 1, "lam": 1, "lam_minus": 0.2, "c": 0.01}], "q_max": 8, "seed": -2}, "seed"),
])
def test_invalid_configs_are_usage_errors(tmp_path, doc, msg):
    with pytest.raises(UsageError, match=msg):
        parse_config(doc)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--output", str(out)]) == 2
    assert json.loads((out / "error.json").read_text())["error"] == "usage"


def test_unreadable_config(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "usage"


def test_validate_reports_suggested_lattice(capsys):
    assert main(["validate", "--preset", "test1", "--qmax", "20"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["classes"][0]["suggested_q_max"] == 40.0
    assert rep["warnings"]


def test_validate_notes_missing_curves():
    rep = validate_document(PRESETS["test5"])
    assert any("HFT" in n for n in rep["notes"])
    assert rep["lattice_step"] == 0.25


def test_module_entry_point_and_bad_arguments():
    r = subprocess.run([sys.executable, "-m", "lobmfg", "validate", "--preset", "test4"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["valid"]
    r = subprocess.run([sys.executable, "-m", "lobmfg", "run", "--preset", "nope"], capture_output=True, text=True)
    assert r.returncode == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    import lobmfg.cli as cli

    def boom(config):
        raise RuntimeError("no convergence")
    monkeypatch.setattr(cli, "solve_equilibrium", boom)
    assert run(tmp_path, "--preset", "test1", "--qmax", "6") == 1
    rec = json.loads((tmp_path / "error.json").read_text())
    assert rec == {"error": "RuntimeError", "message": "no convergence", "stage": "solve"}
