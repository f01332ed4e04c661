"""Reading and writing task data.

Samples live in JSONL files, one JSON object per line:

    {"id": "q1", "img": [..], "q": [..], "targets": {"cat": 1.0},
     "tags": ["animal"], "text": "what is this?"}

`text` is optional, everything else is required; unknown keys are
rejected.  A sequence is described by a JSON manifest:

    {"tasks": [{"name": "a", "train": "a.train.jsonl",
                "val": "a.val.jsonl", "test": "a.test.jsonl"}, ...]}

with paths relative to the manifest's directory (`val` may be omitted).
Schema violations raise ParseError naming the file, line, and field.
"""

import json
import math
import os

import numpy as np

from clvqa.data.samples import Sample, TaskDataset, build_sequence
from clvqa.errors import DataError, ParseError
from clvqa.ioutil import atomic_write_text, write_json

SAMPLE_KEYS = {"id", "img", "q", "targets", "tags", "text"}


def _feature_array(value, path, line, fieldname):
    if not isinstance(value, list):
        raise ParseError(path, line, fieldname, "must be a list of numbers")
    out = np.empty(len(value), dtype=np.float64)
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(path, line, fieldname, f"entry {i} is not a number")
        if not math.isfinite(v):
            raise ParseError(path, line, fieldname, f"entry {i} is not finite")
        out[i] = float(v)
    return out


def parse_sample(obj, path="<memory>", line=0):
    if not isinstance(obj, dict):
        raise ParseError(path, line, "<line>", "not a JSON object")
    unknown = set(obj) - SAMPLE_KEYS
    if unknown:
        raise ParseError(path, line, sorted(unknown)[0], "unknown key")
    for key in ("id", "img", "q", "targets", "tags"):
        if key not in obj:
            raise ParseError(path, line, key, "missing required key")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ParseError(path, line, "id", "must be a non-empty string")
    img = _feature_array(obj["img"], path, line, "img")
    q = _feature_array(obj["q"], path, line, "q")
    if len(img) == 0 and len(q) == 0:
        raise ParseError(path, line, "img", "img and q cannot both be empty")
    targets = obj["targets"]
    if not isinstance(targets, dict) or not targets:
        raise ParseError(path, line, "targets", "must be a non-empty object")
    clean_targets = {}
    for a, score in targets.items():
        if not isinstance(a, str) or not a:
            raise ParseError(path, line, "targets", "answer keys must be "
                             "non-empty strings")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ParseError(path, line, "targets", f"score for {a!r} is not "
                             "a number")
        if not 0.0 < float(score) <= 1.0:
            raise ParseError(path, line, "targets", f"score for {a!r} must be "
                             "in (0, 1]")
        clean_targets[a] = float(score)
    tags = obj["tags"]
    if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
        raise ParseError(path, line, "tags", "must be a list of strings")
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ParseError(path, line, "text", "must be a string")
    return Sample(
        sample_id=obj["id"],
        image_features=img,
        question_features=q,
        soft_targets=clean_targets,
        object_tags=tuple(tags),
        question_text=text,
    )


def load_samples_jsonl(path):
    samples = []
    seen_ids = set()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(path, lineno, "<line>", f"bad JSON: {e}") from e
            s = parse_sample(obj, path, lineno)
            if s.sample_id in seen_ids:
                raise ParseError(path, lineno, "id",
                                 f"duplicate sample id {s.sample_id!r}")
            seen_ids.add(s.sample_id)
            samples.append(s)
    return samples


def load_task_jsonl(name, train_path, test_path, val_path=None):
    """Load one task from per-split JSONL files."""
    train = load_samples_jsonl(train_path)
    test = load_samples_jsonl(test_path)
    val = load_samples_jsonl(val_path) if val_path else []
    if not train:
        raise DataError(f"task {name}: empty train split ({train_path})")
    if not test:
        raise DataError(f"task {name}: empty test split ({test_path})")
    return TaskDataset(name=name, train=train, val=val, test=test).check()


def load_manifest(path):
    """Load a sequence manifest; returns a TaskSequence."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise DataError(f"{path}: manifest must be an object with a 'tasks' list")
    if not doc["tasks"]:
        raise DataError(f"{path}: manifest lists no tasks")
    base = os.path.dirname(os.path.abspath(path))
    tasks = []
    for i, entry in enumerate(doc["tasks"]):
        if not isinstance(entry, dict):
            raise DataError(f"{path}: tasks[{i}] is not an object")
        for key in ("name", "train", "test"):
            if not isinstance(entry.get(key), str):
                raise DataError(f"{path}: tasks[{i}] is missing {key!r}")
        val = entry.get("val")
        tasks.append(
            load_task_jsonl(
                entry["name"],
                os.path.join(base, entry["train"]),
                os.path.join(base, entry["test"]),
                os.path.join(base, val) if val else None,
            )
        )
    return build_sequence(tasks)


def sample_to_dict(s):
    # target key order is preserved: the answer vocabulary is built
    # first-seen, so reordering keys here would change class ids on reload
    doc = {
        "id": s.sample_id,
        "img": [float(v) for v in s.image_features],
        "q": [float(v) for v in s.question_features],
        "targets": {a: float(v) for a, v in s.soft_targets.items()},
        "tags": list(s.object_tags),
    }
    if s.question_text is not None:
        doc["text"] = s.question_text
    return doc


def write_samples_jsonl(path, samples):
    lines = [json.dumps(sample_to_dict(s)) for s in samples]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def write_manifest(path, task_entries):
    write_json(path, {"tasks": task_entries})


def write_sequence(seq, out_dir):
    """Write a sequence as manifest + per-split JSONL files; returns the
    manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for t in seq.tasks:
        entry = {"name": t.name}
        for split_name in ("train", "val", "test"):
            samples = t.split(split_name)
            if split_name == "val" and not samples:
                continue
            fname = f"{t.name}.{split_name}.jsonl"
            write_samples_jsonl(os.path.join(out_dir, fname), samples)
            entry[split_name] = fname
        entries.append(entry)
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, entries)
    return manifest_path
