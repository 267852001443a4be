import json
import subprocess
import sys
from pathlib import Path

import pytest

from flatness.cli import AnalysisConfig, ConfigError, growth_slope, main, parse_kind
from flatness.measure import DiscreteMeasure

FAST = {"h_rel": 1 / 16, "grid": False}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


def write_config(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc))
    return path


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_parse_kind():
    assert parse_kind("alpha2") == ("alpha", 2, "alpha2")
    assert parse_kind("beta1") == ("beta", 1, "beta1")
    assert parse_kind("bilateral_beta") == ("bilateral_beta2", 2, "bilateral_beta2")
    assert parse_kind({"kind": "alpha", "p": 1})[2] == "alpha1"
    with pytest.raises(ConfigError):
        parse_kind("gamma3")


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict({})
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict({"input": "missing.csv"}, tmp_path)
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict({"input": {"kind": "flat"}, "r0": 0})
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict({"input": {"kind": "flat"}, "depth": 0})
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict({"input": {"kind": "flat"}, "colour": "blue"})
    cfg = AnalysisConfig.from_dict({"input": {"kind": "flat"}, "scales": {"r0": 0.5, "depth": 3}})
    assert (cfg.r0, cfg.depth) == (0.5, 3)


def test_growth_slope():
    assert growth_slope([1.0]) is None
    assert growth_slope([0, 1, 2, 3, 4, 5]) == pytest.approx(1.0)
    assert growth_slope([0, 1, 1, 1, 1, 1]) == pytest.approx(0.0, abs=1e-12)


def test_generate(tmp_path, capsys):
    cfg = write_config(tmp_path / "spec.json", {"kind": "four_corner_cantor", "params": {"generation": 2}})
    code, doc = run(["generate", "--config", cfg, "--out", tmp_path / "gen"], capsys)
    assert code == 0 and doc["atoms"] == 16
    mu = DiscreteMeasure.from_csv((tmp_path / "gen" / "measure.csv").read_text())
    assert len(mu) == 16 and mu.mass == pytest.approx(1.0)
    meta = json.loads((tmp_path / "gen" / "metadata.json").read_text())
    assert meta["metadata"]["generation"] == 2
    code, doc = run(["generate", "--kind", "flat", "--format", "json", "--out", tmp_path / "g2"], capsys)
    assert code == 0
    DiscreteMeasure.from_json((tmp_path / "g2" / "measure.json").read_text())


def test_generate_invalid_spec(tmp_path, capsys):
    code, doc = run(["generate", "--kind", "spiral", "--out", tmp_path], capsys)
    assert code == 2 and doc["error"] == "InvalidSpec"


def test_malformed_csv_names_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("0.0,0.0,1.0\n0.5,0.1,1.0\n0.2,oops,1.0\n")
    code, doc = run(["analyze", "--input", bad, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert doc["error"] == "MeasureFormatError" and doc["row"] == 3
    assert not (tmp_path / "o" / "summary.json").exists()


def test_missing_input(tmp_path, capsys):
    code, doc = run(["analyze", "--input", tmp_path / "nope.csv", "--out", tmp_path / "o"], capsys)
    assert code == 2 and doc["error"] == "ConfigError"


def test_flat_alpha_profile_is_bounded(tmp_path, capsys):
    cfg = write_config(tmp_path / "a.json", {
        "input": {"kind": "flat", "params": {"count": 512, "extent": 2.0}},
        "centers": [[0.0, 0.0], [0.3, 0.0]], "r0": 1.0, "depth": 4,
        "kinds": ["alpha2", "beta2"], "search": FAST})
    code, summary = run(["analyze", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0 and summary["failures"] == []
    for label in ("alpha2", "beta2"):
        k = summary["kinds"][label]
        # quadrature error only; the Cantor profile below grows about ten times faster
        assert abs(k["growth_slope"]["max"]) < 5e-3
    files = tree_bytes(tmp_path / "o")
    assert "summary.json" in files
    assert "profiles/center000_alpha2.csv" in files and "plots/center001_beta2.dat" in files


def test_cantor_beta_grows(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {
        "input": {"kind": "four_corner_cantor", "params": {"generation": 5}},
        "centers": {"sample": 2, "seed": 1}, "r0": 0.5, "depth": 4, "kinds": ["beta1"]})
    code, summary = run(["analyze", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    assert summary["kinds"]["beta1"]["growth_slope"]["median"] > 0.01


def test_per_center_failures_recorded(tmp_path, capsys):
    cfg = write_config(tmp_path / "f.json", {
        "input": {"kind": "dirac_mix", "params": {"mass": 1.0}},
        "centers": [[0.0, 0.0], [50.0, 50.0]], "r0": 1.0, "depth": 2, "kinds": ["alpha2"],
        "search": FAST})
    code, summary = run(["analyze", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    # the far center sees an empty ball at every scale: alpha is undefined there
    assert summary["kinds"]["alpha2"]["undefined_values"] == 2
    assert (tmp_path / "o" / "profiles" / "center001_alpha2.csv").exists()


def test_idempotent_and_thread_independent(tmp_path, capsys):
    doc = {"input": {"kind": "lipschitz_graph", "seed": 2, "params": {"h": 1 / 128, "noise": 0.01}},
           "centers": {"sample": 3, "seed": 7}, "r0": 0.25, "depth": 3,
           "kinds": ["beta2", "alpha2"], "search": FAST}
    cfg = write_config(tmp_path / "i.json", doc)
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        code, _ = run(["analyze", "--config", cfg, "--out", tmp_path / name, "--threads", threads], capsys)
        assert code == 0
        outs.append(tree_bytes(tmp_path / name))
    assert outs[0] == outs[1] == outs[2]


def test_transport_subcommand(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("0,0,1\n")
    b.write_text("3,4,1\n")
    code, doc = run(["transport", a, b, "--p", 1], capsys)
    assert code == 0 and doc["distance"] == pytest.approx(5.0)
    b.write_text("3,4,2\n")
    code, doc = run(["transport", a, b], capsys)
    assert code == 2 and doc["error"] == "MassMismatch"
    code, doc = run(["transport", a, b, "--rescale", "--out", tmp_path / "t"], capsys)
    assert code == 0 and (tmp_path / "t" / "transport.json").exists()


def test_validate_whitney_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path / "w.json", {"graph": {"family": "random", "seed": 1},
                                              "floor_level": 6, "samples": 50})
    code, doc = run(["validate-whitney", "--config", cfg, "--out", tmp_path / "w"], capsys)
    assert code == 0 and doc["passed"] is True
    assert json.loads((tmp_path / "w" / "whitney_report.json").read_text())["passed"] is True


def test_tree_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path / "t.json", {
        "input": {"kind": "lipschitz_graph", "params": {"h": 2.0**-10}},
        "graph": {"family": "random", "seed": 0}, "depth": 5, "M": [10, 100, 1000]})
    code, doc = run(["tree", "--config", cfg, "--out", tmp_path / "t"], capsys)
    assert code == 0
    masses = [r["stop_mass"] for r in doc["sweep"]]
    assert masses == sorted(masses, reverse=True)
    assert doc["chosen_M"] is not None
    tree = json.loads((tmp_path / "t" / "tree.json").read_text())
    assert tree["chosen_M"] == doc["chosen_M"]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "flatness.cli", "generate", "--kind", "dirac_mix",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["atoms"] == 1
