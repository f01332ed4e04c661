"""Artifact writers.

All run outputs are deterministic for a given (config, seed): CSV floats
use repr (shortest round-trip), JSON keys are sorted, and rows follow a
fixed order.  Wall-clock facts (timestamps, duration, backend) go only
into sidecar.json, which is excluded from the determinism contract.
"""

import datetime
import json
import math
import os

import numpy as np

from clvqa import kernels
from clvqa.ioutil import write_csv, write_json, write_jsonl
from clvqa.model import save_checkpoint


def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return float(v)


def write_matrix_csv(path, matrix, task_names, row_labels):
    rows = []
    for label, row in zip(row_labels, np.asarray(matrix)):
        rows.append([label] + [_cell(v) for v in row])
    write_csv(path, ["after_task"] + list(task_names), rows)


def write_run_artifacts(result, cfg_dict, out_dir, strategy_name, seed,
                        img_dim=None):
    """Writes every artifact of one run; returns the list of paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def p(name):
        paths.append(os.path.join(out_dir, name))
        return paths[-1]

    write_json(p("run_config.json"), cfg_dict)
    n_rows = result.matrix.shape[0]
    labels = (result.task_names if n_rows == len(result.task_names)
              else ["joint"])
    write_matrix_csv(p("accuracy_matrix.csv"), result.matrix,
                     result.task_names, labels)
    write_jsonl(p("predictions.jsonl"), result.predictions.to_rows())
    scalars = {k: v for k, v in result.metrics.items()
               if isinstance(v, (int, float))}
    write_json(p("metrics.json"), {
        "metrics": result.metrics,
        "task_names": result.task_names,
        "strategy": strategy_name,
        "seed": seed,
    })
    keys = sorted(scalars)
    write_csv(p("metrics.csv"), keys, [[scalars[k] for k in keys]])
    write_json(p("vocab.json"), result.vocab.to_dict())
    if result.curve:
        write_csv(p("curve.csv"), ["task", "step", "mean_seen_accuracy"],
                  [[t, s, a] for t, s, a in result.curve])
    if "sbwt_per_task" in result.metrics:
        write_csv(p("sbwt_per_task.csv"), ["task", "sbwt"],
                  [[result.task_names[i], v]
                   for i, v in enumerate(result.metrics["sbwt_per_task"])])
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    for t, model in enumerate(result.checkpoints):
        name = f"after_task_{t}.json"
        meta = {"task_index": t}
        if img_dim is not None:
            meta["img_dim"] = img_dim
        save_checkpoint(model, os.path.join(ckpt_dir, name), meta=meta)
        paths.append(os.path.join(ckpt_dir, name))
    return paths


def write_sidecar(out_dir, started, finished, extra=None):
    doc = {
        "started": started.isoformat(timespec="seconds"),
        "finished": finished.isoformat(timespec="seconds"),
        "duration_s": round((finished - started).total_seconds(), 3),
        "kernel_backend": kernels.BACKEND_NAME,
    }
    doc.update(extra or {})
    write_json(os.path.join(out_dir, "sidecar.json"), doc)


def now():
    return datetime.datetime.now(datetime.timezone.utc)


def write_pairwise_artifacts(results, task_names, out_dir, include_self):
    """results: {(a, b): PairwiseResult}.  Writes the drop matrix (rows =
    first task, cols = second task, empty diagonal unless include_self) and
    a lossless JSONL."""
    os.makedirs(out_dir, exist_ok=True)
    n = len(task_names)
    rows = []
    for a in range(n):
        row = [task_names[a]]
        for b in range(n):
            r = results.get((a, b))
            row.append(None if r is None else r.rel_drop)
        rows.append(row)
    matrix_path = os.path.join(out_dir, "pairwise_drops.csv")
    write_csv(matrix_path, ["first_task"] + list(task_names), rows)
    jl = [{
        "a": a, "b": b, "task_a": r.task_a, "task_b": r.task_b,
        "acc_before": r.acc_before, "acc_after": r.acc_after,
        "rel_drop": r.rel_drop,
    } for (a, b), r in sorted(results.items())]
    jsonl_path = os.path.join(out_dir, "pairwise_results.jsonl")
    write_jsonl(jsonl_path, jl)
    return [matrix_path, jsonl_path]


def write_sweep_artifacts(sweep_result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    runs_path = os.path.join(out_dir, "sweep_runs.jsonl")
    write_jsonl(runs_path, sweep_result["runs"])
    agg = sweep_result["aggregate"]
    agg_csv = os.path.join(out_dir, "sweep_aggregate.csv")
    write_csv(agg_csv, ["metric", "mean", "std", "n"],
              [[k, agg[k]["mean"], agg[k]["std"], agg[k]["n"]]
               for k in sorted(agg)])
    agg_json = os.path.join(out_dir, "sweep_aggregate.json")
    write_json(agg_json, agg)
    return [runs_path, agg_csv, agg_json]


def load_run_metrics(run_dir):
    with open(os.path.join(run_dir, "metrics.json"), encoding="utf-8") as f:
        return json.load(f)
