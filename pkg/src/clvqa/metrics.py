"""Accuracy bookkeeping and the continual-learning metrics.

Conventions: the accuracy matrix A is [T, T] with A[t][i] = accuracy on
task i's test split after finishing task t; unevaluated cells are NaN.
Checkpoints are numbered by the task just finished (0-based).

Metrics:
  final_accuracy    mean of the last row
  learned_accuracy  mean of the diagonal
  bwt               mean over i < T-1 of A[T-1][i] - A[i][i]
  sbwt              semantic variant: per-sample accuracy deltas weighted
                    by the cosine distance between the answer embeddings
                    of the final and the just-learned prediction
"""

import numpy as np

from clvqa.data.embeddings import answer_embedding
from clvqa.errors import LogError, StatError


def vqa_accuracy(pred_answer, soft_targets):
    """Consensus-style accuracy: the target score of the predicted answer,
    0.0 when the answer is not in the target map."""
    return float(soft_targets.get(pred_answer, 0.0))


class PredictionLog:
    """Per-sample predictions at every checkpoint.

    One record per (checkpoint, task, sample): the predicted answer id and
    string plus the accuracy it scored.
    """

    def __init__(self):
        self.records = []
        self._by_key = {}

    def add(self, checkpoint, task, sample_id, pred_id, pred_answer, accuracy):
        rec = {
            "checkpoint": int(checkpoint),
            "task": int(task),
            "sample": sample_id,
            "pred_id": int(pred_id),
            "pred": pred_answer,
            "acc": float(accuracy),
        }
        self.records.append(rec)
        self._by_key.setdefault((checkpoint, task), {})[sample_id] = rec

    def at(self, checkpoint, task):
        """{sample_id: record} for one (checkpoint, task) evaluation."""
        try:
            return self._by_key[(checkpoint, task)]
        except KeyError:
            raise LogError(
                f"log has no evaluation of task {task} at checkpoint "
                f"{checkpoint}"
            ) from None

    def to_rows(self):
        return list(self.records)

    @classmethod
    def from_rows(cls, rows):
        log = cls()
        for r in rows:
            log.add(r["checkpoint"], r["task"], r["sample"], r["pred_id"],
                    r["pred"], r["acc"])
        return log


def _check_square(matrix):
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StatError(f"accuracy matrix must be square, got {a.shape}")
    return a


def final_accuracy(matrix):
    a = _check_square(matrix)
    row = a[-1]
    if np.isnan(row).any():
        raise StatError("final row of the accuracy matrix is not fully "
                        "evaluated")
    return float(row.mean())


def learned_accuracy(matrix):
    a = _check_square(matrix)
    d = np.diag(a)
    if np.isnan(d).any():
        raise StatError("accuracy matrix diagonal is not fully evaluated")
    return float(d.mean())


def bwt(matrix):
    a = _check_square(matrix)
    t = a.shape[0]
    if t < 2:
        raise StatError("backward transfer needs at least 2 tasks")
    deltas = a[-1, : t - 1] - np.diag(a)[: t - 1]
    if np.isnan(deltas).any():
        raise StatError("accuracy matrix is missing cells needed for BWT")
    return float(deltas.mean())


def sbwt_pair(log, task, checkpoint_then, checkpoint_final, table):
    """Semantic backward transfer for one task: mean over its test samples
    of (1 - cos(e_final, e_then)) * (acc_final - acc_then).

    Identical predictions contribute 0; answers without any embedding get
    cosine 0 (weight 1) and are counted as oov.  Returns (value, n_oov).
    """
    then = log.at(checkpoint_then, task)
    final = log.at(checkpoint_final, task)
    missing = set(then) ^ set(final)
    if missing:
        raise LogError(
            f"task {task}: checkpoints {checkpoint_then} and "
            f"{checkpoint_final} cover different samples "
            f"(e.g. {sorted(missing)[0]!r})"
        )
    if not then:
        raise LogError(f"task {task}: no logged samples")
    total = 0.0
    n_oov = 0
    cache = {}

    def embed(ans):
        if ans not in cache:
            cache[ans] = answer_embedding(ans, table)
        return cache[ans]

    for sid, rec_then in then.items():
        rec_final = final[sid]
        delta = rec_final["acc"] - rec_then["acc"]
        if rec_final["pred"] == rec_then["pred"]:
            continue
        v_final, oov_f = embed(rec_final["pred"])
        v_then, oov_t = embed(rec_then["pred"])
        if oov_f or oov_t:
            n_oov += 1
            cos = 0.0
        else:
            denom = np.linalg.norm(v_final) * np.linalg.norm(v_then)
            cos = float(v_final @ v_then / denom) if denom > 1e-12 else 0.0
        total += (1.0 - cos) * delta
    return total / len(then), n_oov


def sbwt(log, n_tasks, table):
    """Returns (sbwt, per_task list of S_{T,i} for i < T-1, total_oov).

    Needs the log to contain checkpoint-i and checkpoint-(T-1) predictions
    for every test sample of each task i < T-1.
    """
    if n_tasks < 2:
        raise StatError("semantic backward transfer needs at least 2 tasks")
    per_task = []
    total_oov = 0
    for i in range(n_tasks - 1):
        value, n_oov = sbwt_pair(log, i, i, n_tasks - 1, table)
        per_task.append(value)
        total_oov += n_oov
    return float(np.mean(per_task)), per_task, total_oov
