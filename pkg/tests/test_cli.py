"""End-to-end CLI: synth -> run -> pairwise -> sweep -> analyze -> report.

Everything runs in-process through main(argv) so exit codes are return
values and tmp dirs stay isolated.
"""

import filecmp
import json
import os

import pytest
import yaml

from clvqa import cli
from clvqa.data.io import load_manifest
from clvqa.errors import NumericError, StatError

SYNTH = {"n_tasks": 3, "classes_per_task": 3, "samples_per_task": 40,
         "val_per_task": 0, "test_per_task": 20, "img_dim": 6, "q_dim": 6,
         "seed": 9}
RUN = {"hidden": [8], "lr": 0.01, "batch_size": 16, "steps_per_task": 30,
       "seed": 0}


def write_cfg(path, **extra):
    doc = {"data": {"synth": dict(SYNTH)}, "run": dict(RUN)}
    for section, content in extra.items():
        doc.setdefault(section, {}).update(content)
    path.write_text(yaml.safe_dump(doc))
    return str(path)


@pytest.fixture(scope="module")
def root(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cfg_path(root):
    return write_cfg(root / "exp.yaml")


@pytest.fixture(scope="module")
def run_dir(root, cfg_path):
    out = root / "run0"
    assert cli.main(["run", "-c", cfg_path, "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def pairwise_dir(root, cfg_path):
    out = root / "pw"
    assert cli.main(["pairwise", "-c", cfg_path, "-o", str(out)]) == 0
    return out


def test_synth_round_trip(root, cfg_path, capsys):
    out = root / "seq"
    assert cli.main(["synth", "-c", cfg_path, "-o", str(out)]) == 0
    assert "wrote 3 tasks" in capsys.readouterr().out
    seq = load_manifest(out / "manifest.json")
    assert seq.n_tasks == 3
    assert len(seq.tasks[0].train) == 40
    assert len(seq.tasks[2].test) == 20


def test_run_artifacts(run_dir, capsys):
    for name in ("run_config.json", "accuracy_matrix.csv",
                 "predictions.jsonl", "metrics.json", "metrics.csv",
                 "vocab.json", "sidecar.json"):
        assert (run_dir / name).exists(), name
    for t in range(3):
        assert (run_dir / "checkpoints" / f"after_task_{t}.json").exists()
    doc = json.loads((run_dir / "metrics.json").read_text())
    assert doc["strategy"] == "finetune" and doc["seed"] == 0
    assert 0.0 <= doc["metrics"]["final_accuracy"] <= 1.0


def test_run_prints_metrics(root, cfg_path, capsys):
    out = root / "run_print"
    assert cli.main(["run", "-c", cfg_path, "-o", str(out)]) == 0
    text = capsys.readouterr().out
    assert "final_accuracy =" in text and "bwt =" in text


def test_rerun_is_byte_identical(root, cfg_path, run_dir):
    out = root / "run1"
    assert cli.main(["run", "-c", cfg_path, "-o", str(out)]) == 0
    names = ["run_config.json", "accuracy_matrix.csv", "predictions.jsonl",
             "metrics.json", "metrics.csv", "vocab.json"]
    names += [os.path.join("checkpoints", f"after_task_{t}.json")
              for t in range(3)]
    for name in names:  # sidecar.json is wall-clock, excluded on purpose
        assert filecmp.cmp(run_dir / name, out / name, shallow=False), name


def test_run_from_manifest(root, cfg_path, run_dir):
    seq_dir = root / "seq_for_manifest"
    assert cli.main(["synth", "-c", cfg_path, "-o", str(seq_dir)]) == 0
    mcfg = root / "manifest.yaml"
    mcfg.write_text(yaml.safe_dump({
        "data": {"manifest": str(seq_dir / "manifest.json")},
        "run": dict(RUN),
    }))
    out = root / "run_manifest"
    assert cli.main(["run", "-c", str(mcfg), "-o", str(out)]) == 0
    # same samples, same seed: identical accuracy matrix
    assert filecmp.cmp(run_dir / "accuracy_matrix.csv",
                       out / "accuracy_matrix.csv", shallow=False)


def test_run_baseline_modes(root, cfg_path):
    out = root / "run_joint"
    cfg = write_cfg(root / "joint.yaml", run={"strategy": "joint"})
    assert cli.main(["run", "-c", cfg, "-o", str(out)]) == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["strategy"] == "joint"
    rows = (out / "accuracy_matrix.csv").read_text().strip().splitlines()
    assert len(rows) == 2 and rows[1].startswith("joint,")


def test_pairwise_artifacts(pairwise_dir, capsys):
    rows = [json.loads(line) for line in
            (pairwise_dir / "pairwise_results.jsonl").read_text().splitlines()]
    assert len(rows) == 6  # 3 tasks, ordered pairs, no self
    assert {(r["a"], r["b"]) for r in rows} == \
        {(a, b) for a in range(3) for b in range(3) if a != b}
    assert all(r["acc_before"] > 0 for r in rows)
    assert (pairwise_dir / "pairwise_drops.csv").exists()


def test_sweep(root, cfg_path, capsys):
    out = root / "sweep"
    cfg = write_cfg(root / "sweep.yaml", sweep={"seeds": [0, 1]})
    assert cli.main(["sweep", "-c", cfg, "-o", str(out)]) == 0
    text = capsys.readouterr().out
    assert "final_accuracy" in text and "(n=2)" in text
    runs = [json.loads(line) for line in
            (out / "sweep_runs.jsonl").read_text().splitlines()]
    assert len(runs) == 2
    assert all(r["status"] == "ok" for r in runs)
    assert (out / "sweep_aggregate.csv").exists()
    assert (out / "sweep_aggregate.json").exists()


def test_sweep_random_orders(root):
    cfg = write_cfg(root / "sweep_orders.yaml",
                    sweep={"n_orders": 2, "order_seed": 3})
    out = root / "sweep_orders"
    assert cli.main(["sweep", "-c", cfg, "-o", str(out)]) == 0
    runs = [json.loads(line) for line in
            (out / "sweep_runs.jsonl").read_text().splitlines()]
    assert len(runs) == 2
    assert all(sorted(r["order"]) == [0, 1, 2] for r in runs)


def test_analyze_factors_only(root, cfg_path, capsys):
    out = root / "an_plain"
    assert cli.main(["analyze", "-c", cfg_path, "-o", str(out)]) == 0
    for f in ("factor_answer_divergence.csv", "factor_image_distance.csv",
              "factor_question_distance.csv"):
        assert (out / f).exists(), f
    assert not (out / "cka_hidden.csv").exists()


def test_analyze_full(root, cfg_path, run_dir, pairwise_dir, capsys):
    out = root / "an_full"
    rc = cli.main(["analyze", "-c", cfg_path, "-o", str(out),
                   "--run-dir", str(run_dir),
                   "--pairwise", str(pairwise_dir / "pairwise_results.jsonl")])
    assert rc == 0
    for f in ("factor_joint_distance.csv", "cka_hidden.csv", "cka_image.csv",
              "cka_question.csv", "cka_input.csv", "correlations.csv"):
        assert (out / f).exists(), f
    text = capsys.readouterr().out
    assert "rho=" in text
    header = (out / "correlations.csv").read_text().splitlines()[0]
    assert header == "factor,spearman_rho,p_value,n"


def test_report(root, run_dir, capsys):
    out = root / "report.csv"
    assert cli.main(["report", str(run_dir), str(run_dir),
                     "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("strategy,n_runs,")
    assert lines[1].startswith("finetune,2,")


def test_exit_2_missing_config(capsys):
    assert cli.main(["run", "-c", "/no/such.yaml"]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_2_no_data_section(root, capsys):
    p = root / "nodata.yaml"
    p.write_text(yaml.safe_dump({"run": dict(RUN)}))
    assert cli.main(["run", "-c", str(p)]) == 2


def test_exit_3_missing_manifest(root, capsys):
    p = root / "badmanifest.yaml"
    p.write_text(yaml.safe_dump({
        "data": {"manifest": str(root / "nope" / "manifest.json")},
        "run": dict(RUN),
    }))
    assert cli.main(["run", "-c", str(p)]) == 3
    assert "error" in capsys.readouterr().err


def test_exit_3_runtime_error(root, cfg_path, monkeypatch, capsys):
    monkeypatch.setattr(cli, "cmd_run",
                        lambda args: (_ for _ in ()).throw(StatError("flat")))
    assert cli.main(["run", "-c", cfg_path]) == 3


def test_exit_4_numeric_error(root, cfg_path, monkeypatch, capsys):
    monkeypatch.setattr(
        cli, "cmd_run",
        lambda args: (_ for _ in ()).throw(NumericError("loss diverged")))
    assert cli.main(["run", "-c", cfg_path]) == 4
    assert "numeric failure" in capsys.readouterr().err
