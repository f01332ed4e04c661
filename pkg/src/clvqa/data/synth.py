"""Synthetic task sequences with controllable drift.

Each task is a Gaussian-cluster classification problem in feature space:
task t has an input center mu_t at distance ~ input_shift from the origin,
every answer class c has a planted direction w_c, and a sample of class c
is  x = mu_t + signal * w_c + noise * eps.  Soft targets mimic consensus
scoring: the true class scores 1.0 and, with probability secondary_prob,
one other in-task class scores 1/3.

answer_overlap in [0, 1] controls the fraction of each task's class set
carried over from the previous task (a chain), so consecutive tasks share
round(answer_overlap * classes_per_task) answers and farther-apart tasks
share fewer.  overlap 0 gives pairwise-disjoint class sets.

shared_structure in [0, 1] blends each fresh class's direction with a
fixed per-slot basis vector (slot = the class's position within its task),
so tasks can share feature structure without sharing answers: at 0 every
class direction is independent, near 1 the j-th class of every task needs
nearly the same features.  Sequential models then transfer trunk features
to later tasks, which is what separates them from a model frozen after the
first task.

Identical (config, seed) produces identical sequences; writing them via
clvqa.data.io.write_sequence is byte-stable.
"""

import math
from dataclasses import dataclass

import numpy as np

from clvqa.data.samples import Sample, TaskDataset, build_sequence
from clvqa.errors import ConfigError


@dataclass
class SynthConfig:
    n_tasks: int = 5
    classes_per_task: int = 8
    answer_overlap: float = 0.0
    input_shift: float = 1.0
    samples_per_task: int = 400
    val_per_task: int = 40
    test_per_task: int = 100
    img_dim: int = 16
    q_dim: int = 16
    noise: float = 0.5
    signal: float = 1.5
    shared_structure: float = 0.0
    secondary_prob: float = 0.3
    tag_pool: int = 12
    seed: int = 0

    def check(self):
        if self.n_tasks < 1:
            raise ConfigError(f"n_tasks must be >= 1, got {self.n_tasks}")
        if self.classes_per_task < 2:
            raise ConfigError("classes_per_task must be >= 2, got "
                              f"{self.classes_per_task}")
        if not 0.0 <= self.answer_overlap <= 1.0:
            raise ConfigError("answer_overlap must be in [0, 1], got "
                              f"{self.answer_overlap}")
        carried = int(round(self.answer_overlap * self.classes_per_task))
        if 0.0 < self.answer_overlap < 1.0 and carried in (0, self.classes_per_task):
            raise ConfigError(
                f"answer_overlap {self.answer_overlap} with "
                f"{self.classes_per_task} classes carries {carried} answers; "
                "pick values that carry some but not all"
            )
        if self.input_shift < 0.0:
            raise ConfigError(f"input_shift must be >= 0, got {self.input_shift}")
        if self.samples_per_task < 1 or self.test_per_task < 1:
            raise ConfigError("samples_per_task and test_per_task must be >= 1")
        if self.val_per_task < 0:
            raise ConfigError("val_per_task must be >= 0")
        if self.img_dim < 0 or self.q_dim < 0 or self.img_dim + self.q_dim < 1:
            raise ConfigError("need img_dim + q_dim >= 1 with both >= 0")
        if self.noise < 0.0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if not 0.0 <= self.shared_structure <= 1.0:
            raise ConfigError("shared_structure must be in [0, 1], got "
                              f"{self.shared_structure}")
        if not 0.0 <= self.secondary_prob < 1.0:
            raise ConfigError("secondary_prob must be in [0, 1), got "
                              f"{self.secondary_prob}")
        if self.tag_pool < 1:
            raise ConfigError(f"tag_pool must be >= 1, got {self.tag_pool}")
        return self


def _unit(rng, dim):
    v = rng.normal(size=dim)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=dim)
        n = np.linalg.norm(v)
    return v / n


def synth_sequence(cfg):
    """Generate a TaskSequence from a SynthConfig."""
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.img_dim + cfg.q_dim
    k = cfg.classes_per_task
    carried_n = int(round(cfg.answer_overlap * k))

    slots = [_unit(rng, dim) for _ in range(k)]
    class_dirs = {}  # global class index -> planted direction

    def new_class(slot):
        idx = len(class_dirs)
        fresh = _unit(rng, dim)
        s = cfg.shared_structure
        v = s * slots[slot] + (1.0 - s) * fresh
        n = np.linalg.norm(v)
        class_dirs[idx] = v / n if n > 1e-12 else fresh
        return idx

    task_classes = []
    for t in range(cfg.n_tasks):
        if t == 0:
            classes = [new_class(j) for j in range(k)]
        else:
            prev = task_classes[-1]
            keep = sorted(rng.choice(len(prev), size=carried_n, replace=False)) \
                if carried_n else []
            classes = [prev[i] for i in keep]
            classes += [new_class(j) for j in range(len(classes), k)]
        task_classes.append(classes)

    def answer_name(idx):
        return f"ans{idx:03d}"

    def class_tag(idx):
        return f"obj{idx % cfg.tag_pool}"

    tasks = []
    for t in range(cfg.n_tasks):
        center = cfg.input_shift * _unit(rng, dim) if cfg.input_shift > 0 \
            else np.zeros(dim)
        classes = task_classes[t]

        def make_samples(split, count):
            out = []
            for i in range(count):
                c = classes[int(rng.integers(len(classes)))]
                x = center + cfg.signal * class_dirs[c] \
                    + cfg.noise * rng.normal(size=dim)
                targets = {answer_name(c): 1.0}
                if len(classes) > 1 and rng.random() < cfg.secondary_prob:
                    others = [o for o in classes if o != c]
                    c2 = others[int(rng.integers(len(others)))]
                    targets[answer_name(c2)] = 1.0 / 3.0
                tags = [class_tag(c)]
                if rng.random() < 0.5:
                    extra = f"obj{int(rng.integers(cfg.tag_pool))}"
                    if extra not in tags:
                        tags.append(extra)
                sid = f"task{t}-{split}-{i:05d}"
                out.append(Sample(
                    sample_id=sid,
                    image_features=x[:cfg.img_dim].copy(),
                    question_features=x[cfg.img_dim:].copy(),
                    soft_targets=targets,
                    object_tags=tuple(tags),
                    question_text=f"what {class_tag(c)} does sample {i} of "
                                  f"group {t} show?",
                ))
            return out

        tasks.append(TaskDataset(
            name=f"task{t}",
            train=make_samples("train", cfg.samples_per_task),
            val=make_samples("val", cfg.val_per_task),
            test=make_samples("test", cfg.test_per_task),
        ))
    return build_sequence(tasks)
