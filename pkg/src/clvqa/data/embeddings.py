"""Word embedding tables in the classic text format.

Each line is `token v1 v2 ... vd`, whitespace-separated, one fixed
dimension for the whole file.  Lookups are case-folded.  answer_embedding
averages per-word vectors for multi-word answers and reports an oov flag
when no word is covered.
"""

import warnings

import numpy as np

from clvqa.errors import EmbeddingError


class EmbeddingTable:
    def __init__(self, dim):
        if dim < 1:
            raise EmbeddingError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self._vecs = {}

    def __len__(self):
        return len(self._vecs)

    def __contains__(self, token):
        return token.lower() in self._vecs

    def add(self, token, vec):
        token = token.lower()
        if token in self._vecs:
            warnings.warn(f"duplicate embedding token {token!r}; keeping the "
                          "first occurrence", stacklevel=2)
            return
        self._vecs[token] = vec

    def get(self, token):
        """Vector for a single token, or None if missing."""
        return self._vecs.get(token.lower())


def load_embeddings(path, expected_dim=None):
    table = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.rstrip("\n")
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) < 2:
                raise EmbeddingError(f"{path}:{lineno}: no vector entries")
            token = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise EmbeddingError(f"{path}:{lineno}: bad float: {e}") from e
            if not np.isfinite(vec).all():
                raise EmbeddingError(f"{path}:{lineno}: non-finite entry")
            if table is None:
                if expected_dim is not None and len(vec) != expected_dim:
                    raise EmbeddingError(
                        f"{path}:{lineno}: dim {len(vec)} != expected "
                        f"{expected_dim}"
                    )
                table = EmbeddingTable(len(vec))
            elif len(vec) != table.dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: dim {len(vec)} != table dim {table.dim}"
                )
            table.add(token, vec)
    if table is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    return table


def answer_embedding(answer, table):
    """Embedding for an answer string; returns (vector, oov_flag).

    Multi-word answers average the vectors of their in-vocabulary words.
    If no word is covered the vector is zero and oov_flag is True.
    """
    words = answer.lower().split()
    found = [table.get(w) for w in words]
    found = [v for v in found if v is not None]
    if not found:
        return np.zeros(table.dim), True
    return np.mean(found, axis=0), False
