"""Experiment execution: sequential runs, baselines, pairwise protocol,
seed/order sweeps.

A run trains one model through a task sequence: grow the head by the
task's new classes, train steps_per_task minibatch steps with the chosen
strategy's hooks, snapshot a checkpoint, evaluate the seen tasks.
Everything is driven by named substreams of the run seed, so a (config,
seed) pair fully determines every artifact.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from clvqa import kernels
from clvqa.data.samples import TaskDataset, build_sequence, feature_matrix
from clvqa.errors import ConfigError, NumericError, StatError
from clvqa.metrics import (
    PredictionLog,
    bwt,
    final_accuracy,
    learned_accuracy,
    sbwt,
    vqa_accuracy,
)
from clvqa.model import backward, expand_head, flatten, forward, init_model
from clvqa.optim import make_optimizer
from clvqa.strategies import TaskArrays, TaskContext, dense_targets, make_strategy

EVAL_CHUNK = 2048


@dataclass
class RunConfig:
    """One run's knobs.  Defaults follow the reference regime (batch 512,
    lr 8e-5, regularizer weights as published); desk-scale experiments
    override them."""

    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    head_init: str = "zeros"
    optimizer: str = "adam"
    lr: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    trunk_lr_scale: float = 1.0
    head_lr_scale: float = 1.0
    batch_size: int = 512
    steps_per_task: int = 500
    seed: int = 0
    strategy: str = "finetune"
    ewc_lambda: float = 400.0
    fisher_samples: int = None
    lwf_lambda: float = 1.0
    memory_capacity: int = 500
    replay_ratio: int = 3
    agem_ref_batch: int = None
    eval_every: int = None  # optional within-task curve cadence
    eval_future: bool = False  # also evaluate tasks not yet trained

    def strategy_cfg(self):
        return {
            "ewc_lambda": self.ewc_lambda,
            "fisher_samples": self.fisher_samples,
            "lwf_lambda": self.lwf_lambda,
            "memory_capacity": self.memory_capacity,
            "replay_ratio": self.replay_ratio,
            "agem_ref_batch": self.agem_ref_batch,
        }

    def check(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps_per_task < 1:
            raise ConfigError(f"steps_per_task must be >= 1, got "
                              f"{self.steps_per_task}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        return self


@dataclass
class RunResult:
    matrix: np.ndarray  # [rows, T] accuracies, NaN where not evaluated
    predictions: PredictionLog
    vocab: object
    checkpoints: list
    task_names: list
    metrics: dict
    curve: list  # (task, step, mean accuracy over seen tasks)


def _rng_streams(seed, names):
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _predict(model, x):
    out = []
    for start in range(0, len(x), EVAL_CHUNK):
        logits, _ = forward(model, x[start : start + EVAL_CHUNK])
        out.append(logits)
    return np.concatenate(out, axis=0)


def evaluate_task(model, task, vocab, log=None, checkpoint=None,
                  task_index=None, access_log=None):
    """Mean accuracy on the task's test split; optionally logs per-sample
    predictions under (checkpoint, task_index)."""
    if access_log is not None:
        access_log.append(("test", task_index, checkpoint))
    x = feature_matrix(task.test)
    logits = _predict(model, x)
    pred_ids = np.argmax(logits, axis=1)
    accs = np.empty(len(task.test))
    for j, s in enumerate(task.test):
        answer = vocab.answer_of(int(pred_ids[j]))
        accs[j] = vqa_accuracy(answer, s.soft_targets)
        if log is not None:
            log.add(checkpoint, task_index, s.sample_id, int(pred_ids[j]),
                    answer, accs[j])
    return float(accs.mean())


def _train_on_arrays(model, arrays, strategy, cfg, batch_rng,
                     curve_hook=None):
    """The inner loop: steps_per_task minibatch updates on one task."""
    opt = make_optimizer(model, cfg.optimizer, cfg.lr, cfg.beta1, cfg.beta2,
                         cfg.eps, cfg.trunk_lr_scale, cfg.head_lr_scale)
    n = len(arrays.x)
    for step in range(cfg.steps_per_task):
        idx = batch_rng.choice(n, size=cfg.batch_size,
                               replace=cfg.batch_size > n)
        x = arrays.x[idx]
        targets = arrays.targets[idx]
        x, targets = strategy.mix_batch(x, targets)
        logits, trace = forward(model, x)
        loss, dlogits = kernels.bce_soft(logits, targets)
        extra_loss, extra_dl = strategy.logit_terms(model, x, logits)
        if extra_dl is not None:
            loss += extra_loss
            dlogits = dlogits + extra_dl
        grad = backward(model, trace, dlogits)
        pen_loss, pen_grad = strategy.penalty(flatten(model), model.layout())
        if pen_grad is not None:
            loss += pen_loss
            grad = grad + pen_grad
        if not math.isfinite(loss):
            raise NumericError(
                f"non-finite loss at task {arrays.task_index}, step {step}"
            )
        grad = strategy.transform_grad(model, grad)
        opt.step(model, grad)
        if curve_hook is not None and cfg.eval_every is not None \
                and (step + 1) % cfg.eval_every == 0:
            curve_hook(step + 1)


def _task_arrays(seq, t, n_classes, n_old, access_log=None):
    task = seq.tasks[t]
    if access_log is not None:
        access_log.append(("train", t))
    return TaskArrays(
        x=feature_matrix(task.train),
        targets=dense_targets(task.train, seq.vocab, n_classes),
        samples=task.train,
        task_index=t,
        n_classes=n_classes,
        n_old_classes=n_old,
        img_dim=seq.img_dim,
        vocab=seq.vocab,
    )


def run_sequence(seq, cfg, strategy=None, embeddings=None, access_log=None):
    """Train through all tasks in order; returns a RunResult.

    If `embeddings` (an EmbeddingTable) is given, the semantic backward
    transfer metric is included.
    """
    cfg.check()
    rngs = _rng_streams(cfg.seed, ["init", "batch", "strategy"])
    if strategy is None:
        strategy = make_strategy(cfg.strategy, cfg.strategy_cfg())
    strategy.bind(rngs["strategy"])
    n_tasks = seq.n_tasks
    vocab = seq.vocab
    model = init_model(seq.input_dim, cfg.hidden, vocab.n_after_task(0),
                       activation=cfg.activation, head_init=cfg.head_init,
                       rng=rngs["init"])
    matrix = np.full((n_tasks, n_tasks), np.nan)
    log = PredictionLog()
    checkpoints = []
    curve = []
    prev_model = None
    for t in range(n_tasks):
        n_old = model.n_classes if t > 0 else 0
        if t > 0:
            grow = vocab.n_after_task(t) - model.n_classes
            expand_head(model, grow, init=cfg.head_init, rng=rngs["init"])
        arrays = _task_arrays(seq, t, model.n_classes, n_old, access_log)
        ctx = TaskContext(arrays=arrays, prev_model=prev_model,
                          batch_size=cfg.batch_size)
        strategy.prepare_task(model, ctx)

        def curve_point(step, _t=t):
            seen = [evaluate_task(model, seq.tasks[i], vocab) for i in
                    range(_t + 1)]
            curve.append((_t, step, float(np.mean(seen))))

        _train_on_arrays(model, arrays, strategy, cfg, rngs["batch"],
                         curve_hook=curve_point if cfg.eval_every else None)
        strategy.end_task(model, ctx)
        prev_model = model.copy()
        checkpoints.append(prev_model)
        upto = n_tasks if cfg.eval_future else t + 1
        for i in range(upto):
            matrix[t, i] = evaluate_task(model, seq.tasks[i], vocab, log=log,
                                         checkpoint=t, task_index=i,
                                         access_log=access_log)
    metrics = {"final_accuracy": final_accuracy(matrix),
               "learned_accuracy": learned_accuracy(matrix)}
    if n_tasks > 1:
        metrics["bwt"] = bwt(matrix)
        if embeddings is not None:
            value, per_task, n_oov = sbwt(log, n_tasks, embeddings)
            metrics["sbwt"] = value
            metrics["sbwt_per_task"] = per_task
            metrics["sbwt_oov_pairs"] = n_oov
    return RunResult(matrix=matrix, predictions=log, vocab=vocab,
                     checkpoints=checkpoints,
                     task_names=[t.name for t in seq.tasks],
                     metrics=metrics, curve=curve)


def run_fixed(seq, cfg, access_log=None):
    """Baseline: train on the first task only, then freeze.  Every row of
    the accuracy matrix is the frozen model evaluated on all tasks."""
    cfg.check()
    rngs = _rng_streams(cfg.seed, ["init", "batch", "strategy"])
    vocab = seq.vocab
    model = init_model(seq.input_dim, cfg.hidden, vocab.n_after_task(0),
                       activation=cfg.activation, head_init=cfg.head_init,
                       rng=rngs["init"])
    strategy = make_strategy("finetune").bind(rngs["strategy"])
    arrays = _task_arrays(seq, 0, model.n_classes, 0, access_log)
    strategy.prepare_task(model, TaskContext(arrays, None, cfg.batch_size))
    _train_on_arrays(model, arrays, strategy, cfg, rngs["batch"])
    n_tasks = seq.n_tasks
    matrix = np.full((n_tasks, n_tasks), np.nan)
    log = PredictionLog()
    frozen = model.copy()
    row = np.array([
        evaluate_task(frozen, seq.tasks[i], vocab, log=log, checkpoint=0,
                      task_index=i, access_log=access_log)
        for i in range(n_tasks)
    ])
    matrix[0] = row
    for t in range(1, n_tasks):
        matrix[t] = row
        for i in range(n_tasks):
            for sid, rec in log.at(0, i).items():
                log.add(t, i, sid, rec["pred_id"], rec["pred"], rec["acc"])
    metrics = {"final_accuracy": final_accuracy(matrix),
               "learned_accuracy": float(row[0])}
    if n_tasks > 1:
        metrics["bwt"] = bwt(matrix)
    return RunResult(matrix=matrix, predictions=log, vocab=vocab,
                     checkpoints=[frozen],
                     task_names=[t.name for t in seq.tasks],
                     metrics=metrics, curve=[])


def run_joint(seq, cfg, access_log=None):
    """Upper bound: one model trained on the union of all train splits for
    the same total step budget (steps_per_task * n_tasks), evaluated per
    task.  The matrix is a single row."""
    cfg.check()
    rngs = _rng_streams(cfg.seed, ["init", "batch", "strategy"])
    vocab = seq.vocab
    n_tasks = seq.n_tasks
    n_classes = vocab.n_after_task(n_tasks - 1)
    model = init_model(seq.input_dim, cfg.hidden, n_classes,
                       activation=cfg.activation, head_init=cfg.head_init,
                       rng=rngs["init"])
    pool = []
    for t in range(n_tasks):
        if access_log is not None:
            access_log.append(("train", t))
        pool.extend(seq.tasks[t].train)
    arrays = TaskArrays(
        x=feature_matrix(pool),
        targets=dense_targets(pool, vocab, n_classes),
        samples=pool,
        task_index=0,
        n_classes=n_classes,
        n_old_classes=0,
        img_dim=seq.img_dim,
        vocab=vocab,
    )
    strategy = make_strategy("finetune").bind(rngs["strategy"])
    strategy.prepare_task(model, TaskContext(arrays, None, cfg.batch_size))
    joint_cfg = replace(cfg, steps_per_task=cfg.steps_per_task * n_tasks)
    _train_on_arrays(model, arrays, strategy, joint_cfg, rngs["batch"])
    matrix = np.full((1, n_tasks), np.nan)
    log = PredictionLog()
    for i in range(n_tasks):
        matrix[0, i] = evaluate_task(model, seq.tasks[i], vocab, log=log,
                                     checkpoint=0, task_index=i,
                                     access_log=access_log)
    metrics = {"final_accuracy": float(matrix[0].mean())}
    return RunResult(matrix=matrix, predictions=log, vocab=vocab,
                     checkpoints=[model.copy()],
                     task_names=[t.name for t in seq.tasks],
                     metrics=metrics, curve=[])


@dataclass
class PairwiseResult:
    task_a: str
    task_b: str
    acc_before: float  # task a right after training task a
    acc_after: float  # task a after finetuning on task b
    rel_drop: float  # (after - before) / before


def pairwise_protocol(task_a, task_b, cfg, finetune_steps=400,
                      finetune_batch=512, finetune_lr=5e-5):
    """Train on task_a, finetune on task_b for a fixed budget, measure the
    relative accuracy drop on task_a.

    The finetune phase defaults (400 steps, batch 512, lr 5e-5) follow the
    reference regime; desk-scale runs pass their own.  task_b may be
    task_a itself (self-pair control).
    """
    cfg.check()
    if task_b is task_a:
        task_b = TaskDataset(name=task_a.name + "+again",
                             train=task_a.train, val=task_a.val,
                             test=task_a.test)
    seq = build_sequence([task_a, task_b])
    rngs = _rng_streams(cfg.seed, ["init", "batch", "strategy"])
    vocab = seq.vocab
    model = init_model(seq.input_dim, cfg.hidden, vocab.n_after_task(0),
                       activation=cfg.activation, head_init=cfg.head_init,
                       rng=rngs["init"])
    strategy = make_strategy("finetune").bind(rngs["strategy"])
    arrays = _task_arrays(seq, 0, model.n_classes, 0)
    strategy.prepare_task(model, TaskContext(arrays, None, cfg.batch_size))
    _train_on_arrays(model, arrays, strategy, cfg, rngs["batch"])
    acc_before = evaluate_task(model, seq.tasks[0], vocab)
    if acc_before == 0.0:
        raise StatError(
            f"task {task_a.name}: zero accuracy after training, relative "
            "drop undefined"
        )
    grow = vocab.n_after_task(1) - model.n_classes
    expand_head(model, grow, init=cfg.head_init, rng=rngs["init"])
    ft_cfg = replace(cfg, steps_per_task=finetune_steps,
                     batch_size=finetune_batch, lr=finetune_lr)
    arrays_b = _task_arrays(seq, 1, model.n_classes, vocab.n_after_task(0))
    strategy.prepare_task(model, TaskContext(arrays_b, model.copy(),
                                             ft_cfg.batch_size))
    _train_on_arrays(model, arrays_b, strategy, ft_cfg, rngs["batch"])
    acc_after = evaluate_task(model, seq.tasks[0], vocab)
    return PairwiseResult(
        task_a=task_a.name,
        task_b=task_b.name,
        acc_before=acc_before,
        acc_after=acc_after,
        rel_drop=(acc_after - acc_before) / acc_before,
    )


def pairwise_matrix(tasks, cfg, finetune_steps=400, finetune_batch=512,
                    finetune_lr=5e-5, include_self=False):
    """PairwiseResult for every ordered task pair; the diagonal is skipped
    unless include_self."""
    out = {}
    for a in range(len(tasks)):
        for b in range(len(tasks)):
            if a == b and not include_self:
                continue
            out[(a, b)] = pairwise_protocol(
                tasks[a], tasks[a] if a == b else tasks[b], cfg,
                finetune_steps, finetune_batch, finetune_lr,
            )
    return out


def _sweep_worker(args):
    seq, cfg, order, order_idx, seed = args
    run_cfg = replace(cfg, seed=seed)
    try:
        result = run_sequence(seq.reordered(order), run_cfg)
        metrics = {k: v for k, v in result.metrics.items()
                   if isinstance(v, (int, float))}
        return {"order_index": order_idx, "order": list(order), "seed": seed,
                "status": "ok", "metrics": metrics}
    except Exception as e:  # propagate per-run failures without aborting
        return {"order_index": order_idx, "order": list(order), "seed": seed,
                "status": "failed", "error": f"{type(e).__name__}: {e}"}


def sweep(seq, cfg, orders=None, seeds=(0,), workers=1):
    """Run the config across task orders x seeds; aggregate metrics.

    Returns {"runs": [...], "aggregate": {metric: {"mean": m, "std": s}}}
    with population std over successful runs.  Failures are recorded per
    run and do not abort the sweep.  Results are ordered by (order, seed)
    regardless of worker scheduling.
    """
    if orders is None:
        orders = [list(range(seq.n_tasks))]
    jobs = [(seq, cfg, order, oi, seed)
            for oi, order in enumerate(orders) for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    results.sort(key=lambda r: (r["order_index"], r["seed"]))
    ok = [r for r in results if r["status"] == "ok"]
    aggregate = {}
    if ok:
        keys = sorted(set().union(*(r["metrics"] for r in ok)))
        for k in keys:
            vals = np.array([r["metrics"][k] for r in ok if k in r["metrics"]])
            aggregate[k] = {"mean": float(vals.mean()),
                            "std": float(vals.std(ddof=0)),
                            "n": int(len(vals))}
    return {"runs": results, "aggregate": aggregate}
