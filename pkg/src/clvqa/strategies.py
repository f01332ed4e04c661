"""Continual-learning strategies.

Each strategy plugs into the training loop at four points:

    prepare_task(model, ctx)   after head growth, before the first step
    mix_batch(x, targets)      may replace part of the current batch
    logit_terms(model, x, logits)  extra (loss, dlogits) on the batch
    penalty(theta, layout)     extra (loss, grad) on the parameters
    transform_grad(model, grad)    may project the gradient
    end_task(model, ctx)       after the last step (snapshot memory etc.)

The no-op base class is plain finetuning.  Free functions implement the
individual mechanisms (er_batch, ewc_penalty, estimate_fisher, lwf_loss,
agem_project, pseudo_retrieve, pseudo_label) so they can be tested and
reused directly.
"""

import math
from dataclasses import dataclass

import numpy as np

from clvqa import kernels
from clvqa.data.samples import feature_matrix
from clvqa.errors import ConfigError, ShapeError
from clvqa.model import backward, expand_flat, flatten, forward


def dense_targets(samples, vocab, n_classes):
    """[N, n_classes] soft-target matrix from samples' target maps.
    Answers with ids >= n_classes (not yet in the head) are dropped."""
    out = np.zeros((len(samples), n_classes))
    for i, s in enumerate(samples):
        for a, score in s.soft_targets.items():
            j = vocab.id_of(a)
            if j < n_classes:
                out[i, j] = score
    return out


@dataclass
class TaskArrays:
    """Per-task training data in matrix form."""

    x: np.ndarray  # [N, D]
    targets: np.ndarray  # [N, C_t]
    samples: list
    task_index: int
    n_classes: int
    n_old_classes: int
    img_dim: int
    vocab: object


@dataclass
class TaskContext:
    arrays: TaskArrays
    prev_model: object  # frozen ModelState from the end of the previous task
    batch_size: int


class MemoryBuffer:
    """Per-task episodic memory: after each task a uniform random subset of
    its train split is stored; later tasks never evict earlier ones."""

    def __init__(self, capacity_per_task):
        if capacity_per_task < 1:
            raise ConfigError(f"memory capacity must be >= 1, got "
                              f"{capacity_per_task}")
        self.capacity_per_task = capacity_per_task
        self._stores = {}  # task_index -> list[Sample]

    def __len__(self):
        return sum(len(v) for v in self._stores.values())

    @property
    def tasks(self):
        return sorted(self._stores)

    def update(self, task_index, samples, rng):
        n = min(self.capacity_per_task, len(samples))
        idx = rng.choice(len(samples), size=n, replace=False)
        self._stores[task_index] = [samples[int(i)] for i in sorted(idx)]

    def all_samples(self):
        out = []
        for t in sorted(self._stores):
            out.extend(self._stores[t])
        return out


def er_counts(batch_size, ratio):
    """(n_current, n_memory) for a new:old mixing ratio of `ratio`:1."""
    n_mem = batch_size // (ratio + 1)
    n_cur = int(math.ceil(batch_size * ratio / (ratio + 1)))
    return n_cur, n_mem


def er_batch(x_cur, t_cur, x_mem, t_mem, ratio, rng):
    """Mix a current batch with memory samples at ratio:1 (new:old).

    Keeps the first ceil(B*ratio/(ratio+1)) current rows and appends
    floor(B/(ratio+1)) memory rows drawn uniformly from the whole memory.
    Empty memory returns the current batch unchanged.
    """
    if len(x_mem) == 0:
        return x_cur, t_cur
    bsz = len(x_cur)
    n_cur, n_mem = er_counts(bsz, ratio)
    pick = rng.choice(len(x_mem), size=n_mem, replace=len(x_mem) < n_mem)
    x = np.concatenate([x_cur[:n_cur], x_mem[pick]], axis=0)
    t = np.concatenate([t_cur[:n_cur], t_mem[pick]], axis=0)
    return x, t


def ewc_penalty(theta, anchors, lam):
    """Quadratic penalty over stored anchors.

    anchors: list of (theta_star, fisher) flat vectors matching theta.
    Returns (loss, grad) with loss = (lam/2) * sum_k sum_i F_ki *
    (theta_i - theta*_ki)^2 and grad its exact derivative.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    loss = 0.0
    for theta_star, fisher in anchors:
        if theta_star.shape != theta.shape or fisher.shape != theta.shape:
            raise ShapeError("anchor/fisher shape does not match theta")
        loss += kernels.ewc_penalty_grad(theta, theta_star, fisher, lam, grad)
    return loss, grad


def estimate_fisher(model, x, targets, max_samples=None, rng=None):
    """Diagonal Fisher: mean over examples of the squared per-example
    gradient of the BCE loss."""
    n = len(x)
    idx = np.arange(n)
    if max_samples is not None and max_samples < n:
        if rng is None:
            raise ConfigError("fisher subsampling needs an rng")
        idx = np.sort(rng.choice(n, size=max_samples, replace=False))
    fisher = np.zeros(model.num_params)
    for i in idx:
        logits, trace = forward(model, x[i : i + 1])
        _, dlogits = kernels.bce_soft(logits, targets[i : i + 1])
        g = backward(model, trace, dlogits)
        fisher += g * g
    fisher /= len(idx)
    return fisher


def lwf_loss(student_logits, teacher_logits, lam):
    """Distillation on the old-class columns.

    teacher_logits [B, C_old] come from the frozen previous model; targets
    are sigmoid(teacher).  Returns (loss, dlogits_full) where dlogits_full
    matches student_logits' shape and is zero on new-class columns.
    """
    n_old = teacher_logits.shape[1]
    if n_old > student_logits.shape[1]:
        raise ShapeError(
            f"teacher has {n_old} classes, student only "
            f"{student_logits.shape[1]}"
        )
    student_old = np.ascontiguousarray(student_logits[:, :n_old])
    soft = kernels.sigmoid(np.ascontiguousarray(teacher_logits))
    loss, dl = kernels.bce_soft(student_old, soft)
    dlogits = np.zeros_like(student_logits)
    dlogits[:, :n_old] = lam * dl
    return lam * loss, dlogits


def agem_project(grad, ref_grad, eps=1e-24):
    """Project grad so it does not conflict with ref_grad.

    If grad . ref < 0 returns grad - (grad.ref / ref.ref) * ref, else grad
    unchanged.  Degenerate ref (norm^2 < eps) passes grad through.
    """
    dot = float(grad @ ref_grad)
    if dot >= 0.0:
        return grad
    denom = float(ref_grad @ ref_grad)
    if denom < eps:
        return grad
    return grad - (dot / denom) * ref_grad


class PseudoReplayStore:
    """Stores only question-side data (features, tags, text) per task."""

    def __init__(self, capacity_per_task):
        if capacity_per_task < 1:
            raise ConfigError(f"pseudo store capacity must be >= 1, got "
                              f"{capacity_per_task}")
        self.capacity_per_task = capacity_per_task
        self._stores = {}  # task_index -> list of (q_features, tags, text)

    def __len__(self):
        return sum(len(v) for v in self._stores.values())

    def update(self, task_index, samples, rng):
        n = min(self.capacity_per_task, len(samples))
        idx = rng.choice(len(samples), size=n, replace=False)
        self._stores[task_index] = [
            (samples[int(i)].question_features.copy(),
             frozenset(samples[int(i)].object_tags),
             samples[int(i)].question_text)
            for i in sorted(idx)
        ]

    def all_entries(self):
        out = []
        for t in sorted(self._stores):
            out.extend(self._stores[t])
        return out


def pseudo_retrieve(sample, entries, rng):
    """Pick a stored question whose tags intersect the sample's tags.
    Returns an entry or None when nothing matches."""
    tags = set(sample.object_tags)
    candidates = [e for e in entries if tags & e[1]]
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


def pseudo_label(prev_model, x):
    """Soft targets for pseudo-samples: the frozen previous model's sigmoid
    outputs over the classes it knows."""
    logits, _ = forward(prev_model, x)
    return kernels.sigmoid(logits)


class Strategy:
    """Plain finetuning; base class for everything else."""

    name = "finetune"

    def bind(self, rng):
        self.rng = rng
        return self

    def prepare_task(self, model, ctx):
        pass

    def mix_batch(self, x, targets):
        return x, targets

    def logit_terms(self, model, x, logits):
        return 0.0, None

    def penalty(self, theta, layout):
        return 0.0, None

    def transform_grad(self, model, grad):
        return grad

    def end_task(self, model, ctx):
        pass


class EwcStrategy(Strategy):
    """Multi-anchor diagonal-Fisher quadratic regularization."""

    name = "ewc"

    def __init__(self, lam, fisher_samples=None):
        if lam < 0:
            raise ConfigError(f"ewc lambda must be >= 0, got {lam}")
        self.lam = float(lam)
        self.fisher_samples = fisher_samples
        self._anchors = []  # (theta_star, fisher, layout)

    def prepare_task(self, model, ctx):
        # re-embed anchors into the grown layout; new coordinates carry
        # zero Fisher, so they are unconstrained
        layout = model.layout()
        self._current = [
            (expand_flat(theta, anchor_layout, layout),
             expand_flat(fisher, anchor_layout, layout, fill=0.0))
            for theta, fisher, anchor_layout in self._anchors
        ]

    def penalty(self, theta, layout):
        if not self._anchors:
            return 0.0, None
        return ewc_penalty(theta, self._current, self.lam)

    def end_task(self, model, ctx):
        fisher = estimate_fisher(
            model, ctx.arrays.x, ctx.arrays.targets,
            max_samples=self.fisher_samples, rng=self.rng,
        )
        self._anchors.append((flatten(model), fisher, model.layout()))


class LwfStrategy(Strategy):
    """Distill the previous model's old-class responses on current data."""

    name = "lwf"

    def __init__(self, lam):
        if lam < 0:
            raise ConfigError(f"lwf lambda must be >= 0, got {lam}")
        self.lam = float(lam)
        self._teacher = None

    def prepare_task(self, model, ctx):
        self._teacher = ctx.prev_model

    def logit_terms(self, model, x, logits):
        if self._teacher is None or self.lam == 0.0:
            return 0.0, None
        teacher_logits, _ = forward(self._teacher, x)
        return lwf_loss(logits, teacher_logits, self.lam)


class _ReplayBase(Strategy):
    """Shared memory handling for ER and A-GEM."""

    def __init__(self, capacity):
        self.memory = MemoryBuffer(capacity)
        self._x_mem = np.zeros((0, 0))
        self._t_mem = np.zeros((0, 0))

    def prepare_task(self, model, ctx):
        samples = self.memory.all_samples()
        if samples:
            self._x_mem = feature_matrix(samples)
            self._t_mem = dense_targets(samples, ctx.arrays.vocab,
                                        ctx.arrays.n_classes)
        else:
            self._x_mem = np.zeros((0, ctx.arrays.x.shape[1]))
            self._t_mem = np.zeros((0, ctx.arrays.n_classes))

    def end_task(self, model, ctx):
        self.memory.update(ctx.arrays.task_index, ctx.arrays.samples, self.rng)


class ErStrategy(_ReplayBase):
    """Experience replay: mix stored samples into every batch."""

    name = "er"

    def __init__(self, capacity, ratio=3):
        super().__init__(capacity)
        if ratio < 1:
            raise ConfigError(f"er ratio must be >= 1, got {ratio}")
        self.ratio = int(ratio)

    def mix_batch(self, x, targets):
        if len(self._x_mem) == 0:
            return x, targets
        return er_batch(x, targets, self._x_mem, self._t_mem, self.ratio,
                        self.rng)


class AgemStrategy(_ReplayBase):
    """Gradient projection against a reference gradient from memory."""

    name = "agem"

    def __init__(self, capacity, ref_batch=None):
        super().__init__(capacity)
        self.ref_batch = ref_batch

    def prepare_task(self, model, ctx):
        super().prepare_task(model, ctx)
        self._ref_batch = self.ref_batch or ctx.batch_size

    def transform_grad(self, model, grad):
        n_mem = len(self._x_mem)
        if n_mem == 0:
            return grad
        pick = self.rng.choice(n_mem, size=min(self._ref_batch, n_mem),
                               replace=False)
        logits, trace = forward(model, self._x_mem[pick])
        _, dlogits = kernels.bce_soft(logits, self._t_mem[pick])
        ref = backward(model, trace, dlogits)
        return agem_project(grad, ref)


class PseudoReplayStrategy(Strategy):
    """Replay without stored images: stored past questions are paired with
    current images and labeled by the frozen previous model."""

    name = "pseudo_replay"

    def __init__(self, capacity, ratio=3):
        if ratio < 1:
            raise ConfigError(f"pseudo ratio must be >= 1, got {ratio}")
        self.store = PseudoReplayStore(capacity)
        self.ratio = int(ratio)
        self._teacher = None
        self._entries = []
        self._arrays = None

    def prepare_task(self, model, ctx):
        self._teacher = ctx.prev_model
        self._entries = self.store.all_entries()
        self._arrays = ctx.arrays

    def mix_batch(self, x, targets):
        if self._teacher is None or not self._entries:
            return x, targets
        arrays = self._arrays
        bsz = len(x)
        n_cur, n_mem = er_counts(bsz, self.ratio)
        xs = [x[:n_cur]]
        ts = [targets[:n_cur]]
        img_dim = arrays.img_dim
        n_classes = arrays.n_classes
        pseudo_x = []
        fallback_rows = []
        for row in range(n_cur, bsz):
            donor = int(self.rng.integers(len(arrays.samples)))
            entry = pseudo_retrieve(arrays.samples[donor], self._entries,
                                    self.rng)
            if entry is None:
                fallback_rows.append(row)
                continue
            pseudo_x.append(np.concatenate([arrays.x[donor][:img_dim],
                                            entry[0]]))
        if fallback_rows:
            xs.append(x[fallback_rows])
            ts.append(targets[fallback_rows])
        if pseudo_x:
            px = np.stack(pseudo_x)
            soft = pseudo_label(self._teacher, px)
            pt = np.zeros((len(px), n_classes))
            pt[:, : soft.shape[1]] = soft
            xs.append(px)
            ts.append(pt)
        return np.concatenate(xs, axis=0), np.concatenate(ts, axis=0)

    def end_task(self, model, ctx):
        self.store.update(ctx.arrays.task_index, ctx.arrays.samples, self.rng)


STRATEGIES = {
    "finetune": Strategy,
    "ewc": EwcStrategy,
    "lwf": LwfStrategy,
    "er": ErStrategy,
    "agem": AgemStrategy,
    "pseudo_replay": PseudoReplayStrategy,
}


def make_strategy(name, cfg=None):
    """Build a strategy from a config section (see config.STRATEGY_DEFAULTS
    for the knobs)."""
    cfg = cfg or {}
    if name == "finetune":
        return Strategy()
    if name == "ewc":
        return EwcStrategy(cfg.get("ewc_lambda", 400.0),
                           cfg.get("fisher_samples"))
    if name == "lwf":
        return LwfStrategy(cfg.get("lwf_lambda", 1.0))
    if name == "er":
        return ErStrategy(cfg.get("memory_capacity", 500),
                          cfg.get("replay_ratio", 3))
    if name == "agem":
        return AgemStrategy(cfg.get("memory_capacity", 500),
                            cfg.get("agem_ref_batch"))
    if name == "pseudo_replay":
        return PseudoReplayStrategy(cfg.get("memory_capacity", 500),
                                    cfg.get("replay_ratio", 3))
    raise ConfigError(f"unknown strategy {name!r}")
