"""Core data types: samples, task datasets, task sequences, vocabulary.

A sample carries separate image and question feature vectors (either may
be empty, not both), soft answer targets (answer string -> score in (0,1]),
object tags, and optional question text.  A task is three disjoint splits
of samples; a sequence is an ordered list of tasks sharing one growing
answer vocabulary.
"""

from dataclasses import dataclass, field

import numpy as np

from clvqa.errors import DataError, VocabularyError


@dataclass(eq=False)
class Sample:
    sample_id: str
    image_features: np.ndarray
    question_features: np.ndarray
    soft_targets: dict  # answer string -> score in (0, 1]
    object_tags: tuple = ()
    question_text: str = None

    def top_answer(self):
        """Highest-scoring answer; ties broken by lexicographic order so the
        result never depends on dict ordering."""
        return min(self.soft_targets, key=lambda a: (-self.soft_targets[a], a))


def features_of(sample):
    return np.concatenate([sample.image_features, sample.question_features])


def feature_matrix(samples):
    """[N, img_dim + q_dim] float64 matrix."""
    return np.stack([features_of(s) for s in samples])


@dataclass
class TaskDataset:
    name: str
    train: list
    val: list
    test: list

    def split(self, name):
        if name not in ("train", "val", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def class_list(self):
        """Answer strings in deterministic first-seen order across
        train, then val, then test."""
        seen = []
        known = set()
        for part in (self.train, self.val, self.test):
            for s in part:
                for a in s.soft_targets:
                    if a not in known:
                        known.add(a)
                        seen.append(a)
        return seen

    @property
    def class_set(self):
        return frozenset(self.class_list())

    def check(self):
        ids = {}
        for split_name in ("train", "val", "test"):
            for s in self.split(split_name):
                if s.sample_id in ids:
                    raise DataError(
                        f"task {self.name}: sample id {s.sample_id!r} appears "
                        f"in both {ids[s.sample_id]} and {split_name}"
                    )
                ids[s.sample_id] = split_name
        return self


class AnswerVocabulary:
    """Global answer string <-> id map grown task by task.

    Ids are assigned first-seen and never reassigned; the new ids of task t
    form one contiguous block appended after task t-1's block.
    """

    def __init__(self):
        self.answers = []
        self._index = {}
        self.task_blocks = []  # (start, stop) of each task's new-id block

    def __len__(self):
        return len(self.answers)

    def __contains__(self, answer):
        return answer in self._index

    def add_task(self, class_list):
        """Register a task's answers (first-seen order); returns new ids."""
        start = len(self.answers)
        new_ids = []
        for a in class_list:
            if a not in self._index:
                self._index[a] = len(self.answers)
                self.answers.append(a)
                new_ids.append(self._index[a])
        self.task_blocks.append((start, len(self.answers)))
        return new_ids

    def id_of(self, answer):
        try:
            return self._index[answer]
        except KeyError:
            raise VocabularyError(f"unknown answer {answer!r}") from None

    def answer_of(self, idx):
        if not 0 <= idx < len(self.answers):
            raise VocabularyError(f"answer id {idx} out of range 0..{len(self)-1}")
        return self.answers[idx]

    def n_after_task(self, t):
        """Vocabulary size once tasks 0..t have been registered."""
        if not 0 <= t < len(self.task_blocks):
            raise VocabularyError(f"no task {t} in vocabulary")
        return self.task_blocks[t][1]

    def to_dict(self):
        return {"answers": list(self.answers),
                "task_blocks": [list(b) for b in self.task_blocks]}

    @classmethod
    def from_dict(cls, doc):
        vocab = cls()
        vocab.answers = list(doc["answers"])
        vocab._index = {a: i for i, a in enumerate(vocab.answers)}
        vocab.task_blocks = [tuple(b) for b in doc["task_blocks"]]
        return vocab


@dataclass
class TaskSequence:
    tasks: list
    vocab: AnswerVocabulary
    img_dim: int
    q_dim: int

    @property
    def n_tasks(self):
        return len(self.tasks)

    @property
    def input_dim(self):
        return self.img_dim + self.q_dim

    def reordered(self, order):
        """New sequence visiting the same tasks in a different order (the
        vocabulary is rebuilt, so ids follow the new order)."""
        if sorted(order) != list(range(self.n_tasks)):
            raise DataError(f"order {order} is not a permutation of "
                            f"0..{self.n_tasks - 1}")
        return build_sequence([self.tasks[i] for i in order])


def build_sequence(tasks):
    """Validate tasks and assemble a TaskSequence with a shared vocabulary."""
    if not tasks:
        raise DataError("a task sequence needs at least one task")
    names = set()
    for t in tasks:
        if t.name in names:
            raise DataError(f"duplicate task name {t.name!r}")
        names.add(t.name)
        t.check()
        if not t.train:
            raise DataError(f"task {t.name}: empty train split")
        if not t.test:
            raise DataError(f"task {t.name}: empty test split")
    img_dim = q_dim = None
    for t in tasks:
        for split_name in ("train", "val", "test"):
            for s in t.split(split_name):
                if img_dim is None:
                    img_dim = len(s.image_features)
                    q_dim = len(s.question_features)
                if len(s.image_features) != img_dim or len(s.question_features) != q_dim:
                    raise DataError(
                        f"task {t.name}, sample {s.sample_id!r}: feature dims "
                        f"({len(s.image_features)}, {len(s.question_features)}) "
                        f"differ from the sequence's ({img_dim}, {q_dim})"
                    )
    if img_dim + q_dim == 0:
        raise DataError("both image and question features are empty")
    vocab = AnswerVocabulary()
    for t in tasks:
        vocab.add_task(t.class_list())
    return TaskSequence(tasks=list(tasks), vocab=vocab, img_dim=img_dim, q_dim=q_dim)
