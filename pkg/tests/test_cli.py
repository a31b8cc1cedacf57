from __future__ import annotations

import json
import os

import numpy as np
import pandas as pd
import pytest

from interference_lab import __version__
from interference_lab.cli import LOCK_NAME, main
from interference_lab.presets import fixture_path
from interference_lab.sem import Dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--n", 3000, "--oracle-draws", 20_000, "--seed", 5, "--out-dir", out) == 0
    return out


def test_simulate_reproduces_shipped_fixtures(tmp_path):
    assert run("simulate", "--preset", "golden", "--n", 0, "--oracle-draws", 1_000_000, "--out-dir", tmp_path) == 0
    assert (tmp_path / "oracle.csv").read_bytes() == fixture_path("golden_oracle.csv").read_bytes()
    assert (tmp_path / "config.json").read_bytes() == fixture_path("golden.json").read_bytes()
    assert (tmp_path / "dataset.csv").read_text().count("\n") == 1  # header only


def test_simulate_from_config_file(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", fixture_path("golden.json"), "--n", 50, "--oracle-draws", 0, "--out-dir", out) == 0
    d = Dataset.from_csv(out / "dataset.csv")
    assert d.n == 50 and d.m == 3


def test_simulate_rejects_mismatched_rules(tmp_path, capsys):
    assert run("simulate", "--n", 10, "--rules", "1100", "--out-dir", tmp_path) == 2
    assert "m=3" in capsys.readouterr().err


def test_simulate_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"m": 3,\n "p": }')
    assert run("simulate", "--config", bad, "--out-dir", tmp_path / "o") == 2
    assert "line 2" in capsys.readouterr().err
    bad.write_text('{"m": 3, "nonsense": 1}')
    assert run("simulate", "--config", bad, "--out-dir", tmp_path / "o") == 2


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("INTERFERENCE_LAB_SEED", "77")
    run("simulate", "--n", 20, "--oracle-draws", 0, "--out-dir", tmp_path / "env")
    run("simulate", "--n", 20, "--oracle-draws", 0, "--out-dir", tmp_path / "flag", "--seed", 77)
    run("simulate", "--n", 20, "--oracle-draws", 0, "--out-dir", tmp_path / "other", "--seed", 78)
    env = (tmp_path / "env" / "dataset.csv").read_bytes()
    assert env == (tmp_path / "flag" / "dataset.csv").read_bytes()
    assert env != (tmp_path / "other" / "dataset.csv").read_bytes()
    monkeypatch.setenv("INTERFERENCE_LAB_SEED", "abc")
    assert run("simulate", "--n", 5, "--out-dir", tmp_path / "x") == 2


def test_graph_outputs(tmp_path):
    assert run("graph", "--m", 3, "--intervention", "100", "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "graph.json").read_text())
    assert doc["ignorability"]["holds"] is True
    assert {"nodes", "edges"} <= set(doc["dag"]) and doc["swig"]["splits"]
    assert run("graph", "--m", 3, "--inject", "U->A2", "--out-dir", tmp_path / "bad") == 0
    assert json.loads((tmp_path / "bad" / "graph.json").read_text())["ignorability"]["holds"] is False
    assert run("graph", "--inject", "U-A2", "--out-dir", tmp_path / "x") == 2


def test_estimate_writes_table_and_metadata(sim_dir, tmp_path):
    out = tmp_path / "est"
    assert run("estimate", "--dataset", sim_dir / "dataset.csv", "--bootstrap", 50, "--k-folds", 1, "--out-dir", out) == 0
    t2 = pd.read_csv(out / "table2_aipw.csv")
    assert list(t2.columns) == ["position", "(1, 1, 1)", "(1, 1, 0)", "(1, 0, 0)", "(0, 0, 0)", "observed"]
    assert all("±" in v for v in t2["(1, 1, 0)"])
    doc = json.loads((out / "estimate.json").read_text())
    assert doc["meta"]["version"] == __version__
    assert doc["meta"]["settings"]["bootstrap"] == 50
    assert len(doc["meta"]["inputs"]["dataset"]) == 64
    eff = pd.read_csv(out / "effects.csv")
    assert set(eff["kind"]) == {"UE", "SE", "OE", "AOE"}
    means = pd.read_csv(out / "means.csv", dtype={"rule": str})
    assert len(means) == 36 and set(means["estimator"]) == {"aipw", "gformula", "ipw"}


def test_estimate_rejects_invalid_rule(sim_dir, tmp_path, capsys):
    assert run("estimate", "--dataset", sim_dir / "dataset.csv", "--rules", "011", "--out-dir", tmp_path) == 2
    assert "Bottom block cannot precede" in capsys.readouterr().err


def test_estimate_missing_dataset_points_to_simulate(tmp_path, capsys):
    assert run("estimate", "--dataset", tmp_path / "nope.csv", "--out-dir", tmp_path) == 2
    assert "simulate" in capsys.readouterr().err


def test_corrupt_dataset_reports_row(sim_dir, tmp_path, capsys):
    df = pd.read_csv(sim_dir / "dataset.csv").head(20)
    df.loc[6, ["a1", "a2", "a3"]] = [0, 1, 0]
    path = tmp_path / "bad.csv"
    df.to_csv(path, index=False)
    assert run("estimate", "--dataset", path, "--out-dir", tmp_path / "o") == 2
    assert "row 7" in capsys.readouterr().err


def test_one_rule_dataset_all_estimators_equal_mean(sim_dir, tmp_path):
    d = Dataset.from_csv(sim_dir / "dataset.csv")
    one = d.subset(np.flatnonzero(d.rule_idx == 1))
    path = tmp_path / "one.csv"
    one.to_csv(path)
    out = tmp_path / "o"
    argv = ["estimate", "--dataset", path, "--rules", "110", "--smoothing", 0, "--k-folds", 1, "--bootstrap", 0]
    assert run(*argv, "--out-dir", out) == 0
    means = pd.read_csv(out / "means.csv", dtype={"rule": str})
    for i in (1, 2, 3):
        vals = means[means.position == i]["psi"].to_numpy()
        assert np.allclose(vals, one.y[:, i - 1].mean(), atol=1e-8)


def test_config_file_and_flag_precedence(sim_dir, tmp_path):
    cfg = tmp_path / "est.json"
    cfg.write_text(json.dumps({"bootstrap": 0, "k-folds": 1, "estimators": "gformula"}))
    out = tmp_path / "o"
    assert run("estimate", "--dataset", sim_dir / "dataset.csv", "--config", cfg, "--estimators", "ipw", "--out-dir", out) == 0
    doc = json.loads((out / "estimate.json").read_text())
    assert doc["meta"]["settings"]["bootstrap"] == 0
    assert doc["meta"]["settings"]["estimators"] == "ipw"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("estimate", "--dataset", sim_dir / "dataset.csv", "--config", cfg, "--out-dir", out) == 2


def test_discover_and_predict_eval(sim_dir, tmp_path):
    out = tmp_path / "o"
    assert run("discover", "--dataset", sim_dir / "dataset.csv", "--out-dir", out) == 0
    doc = json.loads((out / "parents.json").read_text())
    assert [t["target"] for t in doc["targets"]] == ["y1", "y2", "y3"]
    trace = pd.read_csv(out / "trace_y1.csv")
    assert {"x", "conditioning", "p_value"} <= set(trace.columns)
    assert run("predict-eval", "--dataset", sim_dir / "dataset.csv", "--parents", out / "parents.json", "--out-dir", out) == 0
    auc = pd.read_csv(out / "auc.csv")
    assert set(auc["variant"]) == {"baseline", "block", "block-cross", "full", "discovered"}
    assert (auc[auc.variant == "baseline"]["rel_diff_pct"] == 0).all()


def test_report_flags_and_is_reproducible(sim_dir, tmp_path):
    out = tmp_path / "r"
    run("estimate", "--dataset", sim_dir / "dataset.csv", "--bootstrap", 0, "--k-folds", 1, "--out-dir", out)
    oracle = pd.read_csv(sim_dir / "oracle.csv", dtype={"rule": str})
    oracle.loc[0, "psi"] = 0.99  # far outside any interval
    oracle.to_csv(out / "oracle.csv", index=False)
    assert run("report", "--out-dir", out) == 0
    first = (out / "report.txt").read_bytes()
    assert b"CI EXCLUDES ORACLE" in first
    assert run("report", "--out-dir", out) == 0
    assert (out / "report.txt").read_bytes() == first
    assert b"sha256=" in first


def test_report_missing_artifact_names_producer(tmp_path, capsys):
    assert run("report", "--sections", "estimate,discover", "--out-dir", tmp_path) == 2
    err = capsys.readouterr().err
    assert "interference-lab estimate" in err and "interference-lab discover" in err


def test_locked_output_dir(tmp_path, capsys):
    (tmp_path / LOCK_NAME).write_text("123")
    assert run("graph", "--out-dir", tmp_path) == 3
    assert "locked" in capsys.readouterr().err
    os.remove(tmp_path / LOCK_NAME)
    assert run("graph", "--out-dir", tmp_path) == 0
    assert not (tmp_path / LOCK_NAME).exists()


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--k-folds", "two"])
    assert exc.value.code == 2
