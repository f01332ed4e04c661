from clvqa.data.samples import (
    AnswerVocabulary,
    Sample,
    TaskDataset,
    TaskSequence,
    build_sequence,
    feature_matrix,
    features_of,
)
from clvqa.data.io import (
    load_manifest,
    load_samples_jsonl,
    load_task_jsonl,
    write_manifest,
    write_samples_jsonl,
    write_sequence,
)
from clvqa.data.embeddings import EmbeddingTable, answer_embedding, load_embeddings
from clvqa.data.synth import SynthConfig, synth_sequence
from clvqa.data.splits import build_object_split, build_question_split

__all__ = [
    "AnswerVocabulary",
    "EmbeddingTable",
    "Sample",
    "SynthConfig",
    "TaskDataset",
    "TaskSequence",
    "answer_embedding",
    "build_object_split",
    "build_question_split",
    "build_sequence",
    "feature_matrix",
    "features_of",
    "load_embeddings",
    "load_manifest",
    "load_samples_jsonl",
    "load_task_jsonl",
    "synth_sequence",
    "write_manifest",
    "write_samples_jsonl",
    "write_sequence",
]
