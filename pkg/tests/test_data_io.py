import json

import numpy as np
import pytest

from clvqa.data.io import (load_manifest, load_samples_jsonl, parse_sample,
                           write_manifest, write_samples_jsonl, write_sequence)
from clvqa.data.samples import (AnswerVocabulary, Sample, TaskDataset,
                                build_sequence, feature_matrix)
from clvqa.errors import DataError, ParseError, VocabularyError


def good_obj(**over):
    obj = {"id": "s1", "img": [1.0, 2.0], "q": [0.5],
           "targets": {"cat": 1.0, "dog": 0.3}, "tags": ["animal"]}
    obj.update(over)
    return obj


def test_parse_sample_happy():
    s = parse_sample(good_obj(text="what animal?"))
    assert s.sample_id == "s1"
    assert np.array_equal(s.image_features, [1.0, 2.0])
    assert s.soft_targets == {"cat": 1.0, "dog": 0.3}
    assert s.object_tags == ("animal",)
    assert s.question_text == "what animal?"


@pytest.mark.parametrize("mutate,field", [
    (lambda o: o.pop("id"), "id"),
    (lambda o: o.pop("targets"), "targets"),
    (lambda o: o.update(id=""), "id"),
    (lambda o: o.update(extra=1), "extra"),
    (lambda o: o.update(img="nope"), "img"),
    (lambda o: o.update(img=[1.0, float("nan")]), "img"),
    (lambda o: o.update(img=[True]), "img"),
    (lambda o: o.update(targets={}), "targets"),
    (lambda o: o.update(targets={"cat": 0.0}), "targets"),
    (lambda o: o.update(targets={"cat": 1.5}), "targets"),
    (lambda o: o.update(targets={"cat": "high"}), "targets"),
    (lambda o: o.update(targets={"": 1.0}), "targets"),
    (lambda o: o.update(tags="animal"), "tags"),
    (lambda o: o.update(tags=[1]), "tags"),
    (lambda o: o.update(text=7), "text"),
])
def test_parse_sample_errors_carry_field(mutate, field):
    obj = good_obj()
    mutate(obj)
    with pytest.raises(ParseError) as ei:
        parse_sample(obj, path="f.jsonl", line=3)
    assert ei.value.field == field
    assert ei.value.line == 3
    assert "f.jsonl" in str(ei.value)


def test_parse_sample_both_features_empty():
    with pytest.raises(ParseError):
        parse_sample(good_obj(img=[], q=[]))


def test_load_samples_jsonl_reports_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps(good_obj()) + "\n\n{broken\n")
    with pytest.raises(ParseError) as ei:
        load_samples_jsonl(p)
    assert ei.value.line == 3


def test_load_samples_jsonl_duplicate_id(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps(good_obj()) + "\n" + json.dumps(good_obj()) + "\n")
    with pytest.raises(ParseError) as ei:
        load_samples_jsonl(p)
    assert "duplicate" in str(ei.value)


def test_samples_round_trip(tmp_path, small_seq):
    p = tmp_path / "t.jsonl"
    originals = small_seq.tasks[0].train
    write_samples_jsonl(p, originals)
    loaded = load_samples_jsonl(p)
    assert len(loaded) == len(originals)
    for a, b in zip(originals, loaded):
        assert a.sample_id == b.sample_id
        assert np.array_equal(a.image_features, b.image_features)
        assert np.array_equal(a.question_features, b.question_features)
        assert a.soft_targets == b.soft_targets
        assert a.object_tags == b.object_tags


def test_manifest_round_trip(tmp_path, small_seq):
    out = tmp_path / "seq"
    manifest_path = write_sequence(small_seq, out)
    seq2 = load_manifest(manifest_path)
    assert [t.name for t in seq2.tasks] == [t.name for t in small_seq.tasks]
    assert seq2.vocab.answers == small_seq.vocab.answers
    np.testing.assert_array_equal(feature_matrix(seq2.tasks[1].test),
                                  feature_matrix(small_seq.tasks[1].test))


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("[]")
    with pytest.raises(DataError):
        load_manifest(p)
    p.write_text("{\"tasks\": []}")
    with pytest.raises(DataError):
        load_manifest(p)
    p.write_text("{\"tasks\": [{\"name\": \"a\"}]}")
    with pytest.raises(DataError):
        load_manifest(p)


def test_top_answer_tie_break():
    s = Sample("x", np.zeros(2), np.zeros(1),
               {"zebra": 0.9, "apple": 0.9, "mango": 0.5})
    assert s.top_answer() == "apple"


def test_task_duplicate_ids_across_splits():
    s1 = Sample("a", np.zeros(2), np.zeros(1), {"x": 1.0})
    s2 = Sample("a", np.zeros(2), np.zeros(1), {"y": 1.0})
    t = TaskDataset("t", train=[s1], val=[], test=[s2])
    with pytest.raises(DataError):
        t.check()


def test_vocabulary_growth(small_seq):
    vocab = small_seq.vocab
    n = [vocab.n_after_task(i) for i in range(len(small_seq.tasks))]
    assert n[0] >= 1 and n == sorted(n)
    assert n[-1] == len(vocab.answers)
    # ids are stable and dense
    assert sorted(vocab.id_of(a) for a in vocab.answers) == list(range(n[-1]))
    with pytest.raises(VocabularyError):
        vocab.id_of("definitely-not-an-answer")
    v2 = AnswerVocabulary.from_dict(vocab.to_dict())
    assert v2.answers == vocab.answers
    assert [v2.n_after_task(i) for i in range(len(small_seq.tasks))] == n


def test_sequence_reorder(small_seq):
    seq2 = small_seq.reordered([2, 0, 1])
    assert [t.name for t in seq2.tasks] == [small_seq.tasks[i].name
                                            for i in (2, 0, 1)]
    # vocab is rebuilt in the new arrival order
    first_block = set(seq2.vocab.answers[:seq2.vocab.n_after_task(0)])
    assert first_block <= small_seq.tasks[2].class_set
    with pytest.raises(DataError):
        small_seq.reordered([0, 0, 1])
    with pytest.raises(DataError):
        small_seq.reordered([0, 1])


def test_build_sequence_validations():
    a = Sample("a", np.zeros(2), np.zeros(1), {"x": 1.0})
    b = Sample("b", np.zeros(3), np.zeros(1), {"y": 1.0})
    t1 = TaskDataset("t1", [a], [], [a])
    with pytest.raises(DataError):
        build_sequence([t1, TaskDataset("t2", [b], [], [b])])  # dim mismatch
    with pytest.raises(DataError):
        build_sequence([])
    with pytest.raises(DataError):
        build_sequence([t1, TaskDataset("t1", [a], [], [a])])  # name clash
