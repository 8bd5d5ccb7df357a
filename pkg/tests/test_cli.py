import csv
import json

import pytest

from qccdsim import cli


@pytest.fixture(autouse=True)
def _cache(char_cache, monkeypatch):
    monkeypatch.setenv("QCCDSIM_CACHE", str(char_cache))


def scenario(tmp_path, doc, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def header(path):
    with open(path, newline="") as f:
        return next(csv.reader(f))


def test_version_and_usage_errors(capsys):
    assert cli.main(["--version"]) == 0
    assert cli.main(["frobnicate"]) == 2
    assert cli.main([]) == 2


def test_validate_default_layout():
    assert cli.main(["validate"]) == 0


def test_validate_reports_pointer(tmp_path, capsys):
    bad = scenario(tmp_path, {"command": "compile", "goal": {"pair": [1, 1]}, "policy": {"beam": 0}})
    assert cli.main(["validate", str(bad)]) == 2
    out = capsys.readouterr().out
    assert "/policy/beam" in out
    dup = scenario(tmp_path, {"command": "compile", "start": {"3": 1, "4": 1}}, "dup.json")
    assert cli.main(["validate", str(dup)]) == 2
    assert "/start: ion 1 duplicated" in capsys.readouterr().out
    good = scenario(tmp_path, {"command": "compile", "goal": {"pair": [1, 2]}}, "good.json")
    assert cli.main(["validate", str(good)]) == 0


def test_malformed_json_is_a_parse_error(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{\"command\": ")
    assert cli.main(["compile", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    mism = scenario(tmp_path, {"command": "sweep"})
    assert cli.main(["compile", "--scenario", str(mism), "--out", str(tmp_path / "o")]) == 2


def test_characterize_is_reproducible(tmp_path, capsys):
    sc = scenario(tmp_path, {"command": "characterize", "primitive": "transport", "T_us": [8, 12],
                             "distance_um": 120})
    for d in ("a", "b"):
        assert cli.main(["characterize", "--scenario", str(sc), "--out", str(tmp_path / d)]) == 0
    for f in ("characterization.csv", "characterization.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert header(tmp_path / "a" / "characterization.csv") == \
        ["T_us", "mode", "n_inhom", "phase_rad", "det_theta", "f_in_Hz", "f_out_Hz"]
    doc = json.loads((tmp_path / "a" / "characterization.json").read_text())
    assert len(doc["records"]) == 2


def test_profile_scenario(tmp_path):
    sc = scenario(tmp_path, {"command": "characterize",
                             "profile": {"type": "tanh", "L_um": 200, "T_us": 10, "n_val": 5}})
    assert cli.main(["characterize", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "characterization.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1 and float(rows[0]["T_us"]) == pytest.approx(10)


def test_sweeps_write_unit_headers(tmp_path):
    sc = scenario(tmp_path, {"command": "sweep", "kind": "single_ion", "T_us": [4, 8], "distances_um": [100]})
    assert cli.main(["sweep", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 0
    assert header(tmp_path / "o" / "sweep_single_ion.csv") == ["T_us", "n_val", "distance_um", "n_bar"]
    sc = scenario(tmp_path, {"command": "sweep", "kind": "min_time", "nu_crit_kHz": [345], "n_val": [3.0]},
                  "mt.json")
    assert cli.main(["sweep", "--scenario", str(sc), "--out", str(tmp_path / "m")]) == 0
    assert header(tmp_path / "m" / "sweep_min_time.csv") == ["nu_crit_kHz", "n_val", "threshold", "T_us"]


def test_compile_outputs(tmp_path):
    sc = scenario(tmp_path, {"command": "compile", "goal": {"pair": [1, 2]}, "policy": {"objective": "moves"},
                             "noise": {"amplitude": 1e-13}})
    for d in ("a", "b"):
        assert cli.main(["compile", "--scenario", str(sc), "--out", str(tmp_path / d)]) == 0
    for f in ("compile.json", "compile_steps.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    h = header(tmp_path / "a" / "compile_steps.csv")
    assert h[:3] == ["step", "instruction", "t_us"]
    assert "n_ion8" in h and "n_anom_ion8" in h
    rep = json.loads((tmp_path / "a" / "compile.json").read_text())
    assert rep["moves"] == len([p for p in rep["path"] if not p.startswith("WAIT")])


def test_search_failure_is_a_physics_error(tmp_path, capsys):
    sc = scenario(tmp_path, {"command": "compile", "goal": {"pair": [1, 2]},
                             "policy": {"objective": "max_n_all", "threshold": 1e-12, "hard_bound": 1e-12,
                                        "soft_bound": 1e-12}})
    assert cli.main(["compile", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 3
    assert "physics error" in capsys.readouterr().err


def test_precondition_violation_is_a_parse_error(tmp_path, capsys):
    sc = scenario(tmp_path, {"command": "voltages", "operation": "split", "T_us": 2, "n_points": 10})
    assert cli.main(["voltages", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 2
    assert "budget" in capsys.readouterr().err
