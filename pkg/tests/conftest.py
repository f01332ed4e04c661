import os
from pathlib import Path

import pytest

from clvqa.data.embeddings import load_embeddings

DATA_DIR = Path(__file__).resolve().parent / "data"


def embedding_path():
    """The committed 300d fixture, unless GLOVE_300D_PATH points at a real
    dump with the same vocabulary."""
    override = os.environ.get("GLOVE_300D_PATH")
    if override:
        return Path(override)
    return DATA_DIR / "mini_glove_300d.txt"


@pytest.fixture(scope="session")
def table():
    return load_embeddings(embedding_path())


@pytest.fixture(scope="session")
def small_seq():
    from clvqa.data.synth import SynthConfig, synth_sequence

    cfg = SynthConfig(n_tasks=3, classes_per_task=4, answer_overlap=0.25,
                      samples_per_task=60, val_per_task=10, test_per_task=20,
                      img_dim=8, q_dim=8, seed=5)
    return synth_sequence(cfg)
