import json
import subprocess
import sys

import numpy as np
import pytest

from velcomp import pitchcontrol as pc
from velcomp.cli import main

SMALL = """\
synth: {n_matches: 4, match_seconds: 240}
split: [2, 1, 1]
ingest: {k: 3}
train: {max_epochs: 2, batch_size: 16, lr: 0.001}
model: {hidden_dim: 8}
eval: {n_inferences: 2}
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> ingest -> train (grnn) on a small config, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(SMALL)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "raw")]) == 0
    assert main(["ingest", "--config", str(cfg), "--input", str(root / "raw"), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--arch", "grnn", "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root, cfg


def test_pipeline_outputs(pipeline, capsys):
    root, cfg = pipeline
    assert sorted(p.name for p in (root / "raw").glob("match_000_*")) == [
        "match_000_events.csv", "match_000_roster.csv", "match_000_tracking.csv", "match_000_truth.npz"]
    data_manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert data_manifest["k"] == 3 and "config_hash" in data_manifest
    assert (root / "run" / "checkpoint.npz").exists() and (root / "run" / "train_log.csv").exists()
    code, out, _ = run(capsys, "eval", "--config", cfg, "--arch", "grnn", "--checkpoint", root / "run" / "checkpoint.npz",
                       "--data", root / "data", "--out", root / "ev")
    assert code == 0
    report = json.loads((root / "ev" / "eval_report.json").read_text())
    assert report["rmse"] == json.loads(out)["rmse"] and report["n_inferences"] == 2
    for d in ("raw", "data", "run", "ev"):
        m = json.loads((root / d / "manifest.json").read_text())
        run_info = m.get("run", m)
        assert {"config_hash", "seed", "versions"} <= set(run_info)


def test_rule_based_eval_needs_no_checkpoint(pipeline, capsys):
    root, cfg = pipeline
    code, out, err = run(capsys, "eval", "--config", cfg, "--arch", "rule_based", "--data", root / "data",
                         "--out", root / "ev_rule")
    assert code == 0 and err == ""
    assert json.loads(out)["rmse"] > 0


def test_reruns_give_identical_manifests(pipeline, capsys, tmp_path):
    root, cfg = pipeline
    for name in ("a", "b"):
        assert run(capsys, "ingest", "--config", cfg, "--input", root / "raw", "--out", tmp_path / name)[0] == 0
        assert run(capsys, "train", "--config", cfg, "--arch", "mlp", "--data", tmp_path / name,
                   "--out", tmp_path / f"run_{name}")[0] == 0
    for sub in ("", "run_"):
        a = (tmp_path / f"{sub}a" / "manifest.json").read_bytes()
        b = (tmp_path / f"{sub}b" / "manifest.json").read_bytes()
        assert a == b
    assert (tmp_path / "a" / "D_test.jsonl").read_bytes() == (tmp_path / "b" / "D_test.jsonl").read_bytes()


def test_ppcf_obso_heatmap(pipeline, capsys):
    root, cfg = pipeline
    first = json.loads((root / "data" / "D_test.jsonl").read_text().splitlines()[0])
    ev = first["event_index"]
    for source in ("true", "rule"):
        code, out, _ = run(capsys, "ppcf", "--config", cfg, "--data", root / "data", "--event", ev,
                           "--velocity", source, "--out", root / f"pp_{source}")
        assert code == 0 and json.loads(out)["velocity"] == source
    grid = pc.read_grid_csv(root / "pp_true" / "ppcf.csv")
    assert grid.values.shape == (32, 50) and np.all((grid.values >= 0) & (grid.values <= 1))
    code, out, _ = run(capsys, "obso", "--config", cfg, "--data", root / "data", "--event", ev, "--velocity", "model",
                       "--arch", "grnn", "--checkpoint", root / "run" / "checkpoint.npz", "--out", root / "ob")
    assert code == 0 and 0 <= json.loads(out)["obso_total"] <= 1
    code, _, _ = run(capsys, "heatmap", "--grid", root / "pp_true" / "ppcf.csv", "--out", root / "hm", "--cell-px", 2)
    assert code == 0
    assert pc.read_ppm(root / "hm" / "ppcf.ppm").shape == (64, 100, 3)


def test_compare_report(pipeline, capsys):
    root, cfg = pipeline
    code, out, _ = run(capsys, "compare", "--config", cfg, "--arch", "grnn", "--checkpoint",
                       root / "run" / "checkpoint.npz", "--data", root / "data", "--out", root / "cmp")
    assert code == 0
    summary = json.loads((root / "cmp" / "comparison_summary.json").read_text())
    n = summary["summary"]["n_events"]
    for w in summary["wins"].values():
        assert w["model"] + w["rule"] + w["ties"] == n
    lines = (root / "cmp" / "comparison.csv").read_text().splitlines()
    assert lines[0] == "event_index,er_ppcf_rule,er_ppcf_model,er_obso_rule,er_obso_model" and len(lines) == n + 1


def _error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_unknown_arch_lists_valid_names(pipeline, capsys):
    root, cfg = pipeline
    code, _, err = run(capsys, "eval", "--arch", "lstm", "--data", root / "data", "--out", root / "x")
    e = _error(err)
    assert code != 0 and e["error"] == "unknown_arch" and "gvrnn_dec_add" in e["message"]


def test_missing_checkpoint_names_the_path(pipeline, capsys, tmp_path):
    root, cfg = pipeline
    missing = tmp_path / "nowhere" / "ckpt.npz"
    code, _, err = run(capsys, "eval", "--arch", "grnn", "--checkpoint", missing, "--data", root / "data",
                       "--out", tmp_path / "x")
    e = _error(err)
    assert code != 0 and e["error"] == "missing_checkpoint" and str(missing) in e["message"]
    code, _, err = run(capsys, "eval", "--arch", "grnn", "--data", root / "data", "--out", tmp_path / "x")
    assert code != 0 and _error(err)["error"] == "missing_checkpoint"


def test_other_errors_are_single_json_lines(pipeline, capsys, tmp_path):
    root, cfg = pipeline
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {nope: 1}\n")
    cases = [
        ("config", ["train", "--config", bad, "--data", root / "data", "--out", tmp_path / "x"]),
        ("usage", ["frobnicate"]),
        ("usage", ["train", "--arch", "mlp"]),
        ("missing_input", ["eval", "--arch", "rule_based", "--data", tmp_path / "none", "--out", tmp_path / "x"]),
        ("unknown_event", ["ppcf", "--data", root / "data", "--event", 10**6, "--out", tmp_path / "x"]),
        ("nothing_to_train", ["train", "--arch", "rule_based", "--data", root / "data", "--out", tmp_path / "x"]),
    ]
    for kind, argv in cases:
        code, _, err = run(capsys, *argv)
        assert code != 0 and _error(err)["error"] == kind


def test_help_documents_every_flag():
    res = subprocess.run([sys.executable, "-m", "velcomp.cli", "eval", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--config", "--arch", "--seed", "--out", "--checkpoint", "--data", "--split"):
        assert flag in res.stdout
    res = subprocess.run([sys.executable, "-m", "velcomp.cli", "ppcf", "--help"], capture_output=True, text=True)
    assert "--event" in res.stdout and "--velocity" in res.stdout
