"""Command-line entry point.

Subcommands: run, synth, pairwise, sweep, analyze, report.  All of them
take -c/--config (YAML, see clvqa.config); artifacts land in output.dir
unless -o overrides it.  Exit codes: 0 success, 2 bad configuration or
input data, 3 runtime failure, 4 numeric failure.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from clvqa.analysis import (
    answer_distribution,
    cka_timeline,
    forgetting_correlation,
    mean_embedding_distance,
    skew_divergence,
)
from clvqa.config import load_config
from clvqa.data.io import load_manifest, write_sequence
from clvqa.data.embeddings import load_embeddings
from clvqa.data.samples import feature_matrix
from clvqa.data.synth import synth_sequence
from clvqa.errors import (
    ClvqaError,
    ConfigError,
    DataError,
    EmbeddingError,
    NumericError,
)
from clvqa.ioutil import write_csv, write_json
from clvqa.model import load_checkpoint
from clvqa.reporting import (
    load_run_metrics,
    now,
    write_pairwise_artifacts,
    write_run_artifacts,
    write_sidecar,
    write_sweep_artifacts,
)
from clvqa.runner import pairwise_matrix, run_fixed, run_joint, run_sequence, sweep


def _load_sequence(cfg):
    if cfg.data["manifest"] is not None:
        return load_manifest(cfg.data["manifest"])
    if cfg.data["synth"] is not None:
        return synth_sequence(cfg.synth_config())
    raise ConfigError("config needs data.manifest or data.synth")


def _load_embeddings(cfg):
    path = cfg.data["embeddings"]
    return load_embeddings(path) if path else None


def _out_dir(cfg, args):
    return args.out if args.out else cfg.output["dir"]


def cmd_synth(args):
    cfg = load_config(args.config)
    seq = synth_sequence(cfg.synth_config())
    out = _out_dir(cfg, args)
    manifest = write_sequence(seq, out)
    n = sum(len(t.train) + len(t.val) + len(t.test) for t in seq.tasks)
    print(f"wrote {seq.n_tasks} tasks, {n} samples, "
          f"{len(seq.vocab)} answers -> {manifest}")
    return 0


def cmd_run(args):
    cfg = load_config(args.config)
    seq = _load_sequence(cfg)
    if cfg.run["order"] is not None:
        seq = seq.reordered(cfg.run["order"])
    embeddings = _load_embeddings(cfg)
    rc = cfg.run_config()
    strategy_name = cfg.run["strategy"]
    started = now()
    if strategy_name == "fixed":
        result = run_fixed(seq, rc)
    elif strategy_name == "joint":
        result = run_joint(seq, rc)
    else:
        result = run_sequence(seq, rc, embeddings=embeddings)
    finished = now()
    out = _out_dir(cfg, args)
    paths = write_run_artifacts(result, cfg.to_dict(), out, strategy_name,
                                rc.seed, img_dim=seq.img_dim)
    write_sidecar(out, started, finished, {"command": "run"})
    for k in sorted(result.metrics):
        v = result.metrics[k]
        if isinstance(v, (int, float)):
            print(f"{k} = {v:.6f}")
    print(f"wrote {len(paths)} artifacts -> {out}")
    return 0


def cmd_pairwise(args):
    cfg = load_config(args.config)
    seq = _load_sequence(cfg)
    rc = cfg.run_config()
    pw = cfg.pairwise
    started = now()
    results = pairwise_matrix(
        seq.tasks, rc,
        finetune_steps=pw["finetune_steps"],
        finetune_batch=pw["finetune_batch"],
        finetune_lr=pw["finetune_lr"],
        include_self=pw["include_self"],
    )
    finished = now()
    out = _out_dir(cfg, args)
    paths = write_pairwise_artifacts(results, [t.name for t in seq.tasks],
                                     out, pw["include_self"])
    write_sidecar(out, started, finished, {"command": "pairwise"})
    drops = [r.rel_drop for r in results.values()]
    print(f"{len(results)} pairs, mean relative drop "
          f"{float(np.mean(drops)):.4f}")
    print(f"wrote {len(paths)} artifacts -> {out}")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    seq = _load_sequence(cfg)
    rc = cfg.run_config()
    sw = cfg.sweep
    orders = sw["orders"]
    if orders is None:
        if sw["n_orders"] == 1:
            orders = [list(range(seq.n_tasks))]
        else:
            rng = np.random.default_rng(sw["order_seed"])
            orders = [list(map(int, rng.permutation(seq.n_tasks)))
                      for _ in range(sw["n_orders"])]
    for o in orders:
        if sorted(o) != list(range(seq.n_tasks)):
            raise ConfigError(f"sweep order {o} is not a permutation of "
                              f"0..{seq.n_tasks - 1}")
    started = now()
    result = sweep(seq, rc, orders=orders, seeds=sw["seeds"],
                   workers=sw["workers"])
    finished = now()
    out = _out_dir(cfg, args)
    paths = write_sweep_artifacts(result, out)
    write_sidecar(out, started, finished, {"command": "sweep"})
    failed = [r for r in result["runs"] if r["status"] != "ok"]
    for r in failed:
        print(f"run order={r['order']} seed={r['seed']} failed: {r['error']}",
              file=sys.stderr)
    for k in sorted(result["aggregate"]):
        a = result["aggregate"][k]
        print(f"{k} = {a['mean']:.6f} +- {a['std']:.6f} (n={a['n']})")
    print(f"wrote {len(paths)} artifacts -> {out}")
    if failed and len(failed) == len(result["runs"]):
        print("all sweep runs failed", file=sys.stderr)
        return 3
    return 0


def _load_checkpoints(run_dir):
    pattern = os.path.join(run_dir, "checkpoints", "after_task_*.json")
    files = sorted(glob.glob(pattern),
                   key=lambda p: int(p.rsplit("_", 1)[1].split(".")[0]))
    if not files:
        raise DataError(f"no checkpoints under {run_dir}")
    return [load_checkpoint(f) for f in files]


def cmd_analyze(args):
    cfg = load_config(args.config)
    seq = _load_sequence(cfg)
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    names = [t.name for t in seq.tasks]
    paths = []
    started = now()

    dists = [answer_distribution(t) for t in seq.tasks]
    factor_matrices = {
        "answer_divergence": lambda a, b: skew_divergence(dists[a], dists[b]),
    }
    if seq.img_dim > 0:
        factor_matrices["image_distance"] = lambda a, b: \
            mean_embedding_distance(seq.tasks[a].train, seq.tasks[b].train,
                                    which="image")
    if seq.q_dim > 0:
        factor_matrices["question_distance"] = lambda a, b: \
            mean_embedding_distance(seq.tasks[a].train, seq.tasks[b].train,
                                    which="question")

    checkpoints = None
    if args.run_dir:
        checkpoints = _load_checkpoints(args.run_dir)
        ref_model = checkpoints[0][0]
        factor_matrices["joint_distance"] = lambda a, b: \
            mean_embedding_distance(seq.tasks[a].train, seq.tasks[b].train,
                                    which="joint", model=ref_model)

    factors = {}
    for fname, fn in factor_matrices.items():
        mat = [[fn(a, b) if a != b else None for b in range(seq.n_tasks)]
               for a in range(seq.n_tasks)]
        factors[fname] = mat
        path = os.path.join(out, f"factor_{fname}.csv")
        write_csv(path, ["first_task"] + names,
                  [[names[a]] + mat[a] for a in range(seq.n_tasks)])
        paths.append(path)

    if checkpoints is not None:
        probe = feature_matrix(seq.tasks[0].test[:256])
        models = [m for m, _meta in checkpoints]
        img_dim = checkpoints[0][1].get("img_dim", seq.img_dim)
        for variant in ("hidden", "image", "question", "input"):
            tl = cka_timeline(models, probe, img_dim, variant=variant)
            header = ["checkpoint"] + [f"layer{i}" for i in
                                       range(tl.shape[1])]
            rows = [[t] + [float(v) for v in tl[t]]
                    for t in range(tl.shape[0])]
            path = os.path.join(out, f"cka_{variant}.csv")
            write_csv(path, header, rows)
            paths.append(path)

    if args.pairwise:
        with open(args.pairwise, encoding="utf-8") as f:
            pair_rows = [json.loads(line) for line in f if line.strip()]
        if not pair_rows:
            raise DataError(f"{args.pairwise}: no pairwise results")
        pair_rows = [r for r in pair_rows if r["a"] != r["b"]]
        drops = [r["rel_drop"] for r in pair_rows]
        aligned = {
            fname: [factors[fname][r["a"]][r["b"]] for r in pair_rows]
            for fname in factors
        }
        corr = forgetting_correlation(drops, aligned)
        path = os.path.join(out, "correlations.csv")
        write_csv(path, ["factor", "spearman_rho", "p_value", "n"],
                  [[k, corr[k][0], corr[k][1], len(drops)]
                   for k in sorted(corr)])
        paths.append(path)
        for k in sorted(corr):
            rho, p = corr[k]
            print(f"{k}: rho={rho:.4f} p={p:.4g}")

    write_sidecar(out, started, now(), {"command": "analyze"})
    print(f"wrote {len(paths)} artifacts -> {out}")
    return 0


def cmd_report(args):
    groups = {}
    for run_dir in args.runs:
        doc = load_run_metrics(run_dir)
        strategy = doc.get("strategy", "?")
        groups.setdefault(strategy, []).append(doc)
    rows = []
    metric_keys = set()
    for docs in groups.values():
        for d in docs:
            metric_keys.update(k for k, v in d["metrics"].items()
                               if isinstance(v, (int, float)))
    metric_keys = sorted(metric_keys)
    for strategy in sorted(groups):
        docs = groups[strategy]
        row = [strategy, len(docs)]
        for k in metric_keys:
            vals = [d["metrics"][k] for d in docs if k in d["metrics"]]
            if vals:
                row.extend([float(np.mean(vals)),
                            float(np.std(vals, ddof=0))])
            else:
                row.extend([None, None])
        rows.append(row)
    header = ["strategy", "n_runs"]
    for k in metric_keys:
        header.extend([f"{k}_mean", f"{k}_std"])
    out = args.out or "report.csv"
    write_csv(out, header, rows)
    print(f"wrote report for {len(args.runs)} runs -> {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clvqa",
        description="continual-learning experiments on task sequences with "
                    "a growing answer head",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("-c", "--config", required=True,
                           help="YAML config path")
        p.add_argument("-o", "--out", default=None,
                       help="output directory (default: output.dir)")
        p.set_defaults(fn=fn)
        return p

    add("synth", cmd_synth, "generate a synthetic task sequence")
    add("run", cmd_run, "train one model through the task sequence")
    add("pairwise", cmd_pairwise, "train/finetune every ordered task pair")
    add("sweep", cmd_sweep, "run the config across task orders and seeds")
    p_an = add("analyze", cmd_analyze, "task dissimilarity factors, CKA "
               "timelines, forgetting correlations")
    p_an.add_argument("--run-dir", default=None,
                      help="run directory with checkpoints/")
    p_an.add_argument("--pairwise", default=None,
                      help="pairwise_results.jsonl for correlations")
    p_rep = sub.add_parser("report", help="aggregate metrics across runs")
    p_rep.add_argument("runs", nargs="+", help="run directories")
    p_rep.add_argument("-o", "--out", default=None, help="report CSV path")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except (ConfigError, DataError, EmbeddingError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ClvqaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
