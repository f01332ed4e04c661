#!/usr/bin/env python3
"""Regenerate tests/data/mini_glove_300d.txt.

The test suite needs a 300-d word-embedding file with known cosine
similarities between a handful of answer words (skateboarding/skateboard,
sheep/goat, ...).  Shipping a real embedding dump is hundreds of MB, so we
construct a small one: pick the target cosine for every constrained pair,
fill the rest of the Gram matrix with a flat background similarity, factor
it, and rotate the factors into 300 dimensions.  Cosines survive rotation
and per-vector scaling exactly; the only error comes from eigenvalue
clipping and the 5-decimal text format, both well under the 0.005 we
verify at the end.

Usage: python3 scripts/make_embedding_fixture.py [out_path]
"""

import sys
from pathlib import Path

import numpy as np

WORDS = [
    "skateboarding", "skateboard", "snowboarding", "skiing", "winter",
    "breakfast", "sandwich", "food", "meat", "toothbrush",
    "carrots", "carrot", "sheep", "goat", "cloudy", "overcast",
    "black", "white", "gray", "brown", "and",
    "one", "two", "three", "four",
    "red", "blue", "green",
    "what", "color", "is", "the", "how", "many", "man", "person",
    "wearing", "doing", "dog", "cat", "water", "table", "frisbee",
    "kitchen", "room",
]

# Target cosines.  The first block is load-bearing (tests assert them);
# the rest just make the neighborhood structure look sane.
PAIRS = {
    ("skateboarding", "skateboard"): 0.836,
    ("skateboarding", "black"): 0.164,
    ("snowboarding", "skiing"): 0.866,
    ("snowboarding", "winter"): 0.471,
    ("breakfast", "sandwich"): 0.660,
    ("breakfast", "one"): 0.145,
    ("food", "meat"): 0.680,
    ("food", "toothbrush"): 0.168,
    ("carrots", "carrot"): 0.86714,
    ("carrots", "three"): 0.182,
    ("sheep", "goat"): 0.71857,
    ("sheep", "white"): 0.324,
    ("cloudy", "overcast"): 0.78429,
    ("cloudy", "gray"): 0.423,
    ("black", "brown"): 0.731,
    # chosen so cos(black, mean(black, and, white)) comes out 0.864
    ("black", "white"): 0.700,
    ("black", "and"): 0.4545,
    ("and", "white"): 0.4545,
    # plausible neighborhoods, not asserted anywhere
    ("skateboarding", "snowboarding"): 0.55,
    ("skiing", "winter"): 0.52,
    ("white", "gray"): 0.55,
    ("red", "blue"): 0.71,
    ("red", "green"): 0.66,
    ("blue", "green"): 0.69,
    ("black", "red"): 0.65,
    ("one", "two"): 0.78,
    ("two", "three"): 0.82,
    ("three", "four"): 0.80,
    ("one", "three"): 0.70,
    ("two", "four"): 0.74,
    ("dog", "cat"): 0.68,
    ("breakfast", "food"): 0.58,
    ("sandwich", "food"): 0.55,
    ("carrot", "food"): 0.45,
}

BACKGROUND = 0.2
DIM = 300
SEED = 300


def build_gram():
    n = len(WORDS)
    idx = {w: i for i, w in enumerate(WORDS)}
    g = np.full((n, n), BACKGROUND)
    np.fill_diagonal(g, 1.0)
    for (a, b), c in PAIRS.items():
        g[idx[a], idx[b]] = c
        g[idx[b], idx[a]] = c
    return g


def factor(gram):
    # alternating projections: clip the spectrum to PSD, then restore the
    # unit diagonal and the constrained entries; repeat until both hold
    idx = {w: i for i, w in enumerate(WORDS)}
    g = gram.copy()
    for _ in range(200):
        vals, vecs = np.linalg.eigh(g)
        vals = np.clip(vals, 0.0, None)
        g = (vecs * vals) @ vecs.T
        np.fill_diagonal(g, 1.0)
        for (a, b), c in PAIRS.items():
            g[idx[a], idx[b]] = c
            g[idx[b], idx[a]] = c
        if np.linalg.eigvalsh(g)[0] > -1e-10:
            break
    vals, vecs = np.linalg.eigh(g)
    vals = np.clip(vals, 1e-12, None)
    x = vecs * np.sqrt(vals)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x


def to_300d(x, rng):
    n, r = x.shape
    q, _ = np.linalg.qr(rng.normal(size=(DIM, r)))
    out = x @ q.T  # [n, DIM], same Gram matrix
    norms = rng.uniform(4.0, 7.0, size=n)  # word-vector norms, GloVe-ish
    # multi-word answers average raw vectors, so the black/and/white mean
    # needs these three on a common scale for its cosine target to hold
    for w in ("black", "and", "white"):
        norms[WORDS.index(w)] = 5.5
    return out * norms[:, None]


def main():
    out_path = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "tests" / "data"
        / "mini_glove_300d.txt")
    rng = np.random.default_rng(SEED)
    vecs = to_300d(factor(build_gram()), rng)

    lines = []
    for w, v in zip(WORDS, vecs):
        lines.append(w + " " + " ".join(f"{x:.5f}" for x in v))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")

    # verify from the written file, through the real loader
    sys.path.insert(0, str(out_path.parents[2] / "src"))
    from clvqa.data.embeddings import load_embeddings, answer_embedding

    table = load_embeddings(out_path)
    worst = 0.0
    for (a, b), target in PAIRS.items():
        va, vb = table.get(a), table.get(b)
        c = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
        worst = max(worst, abs(c - target))
        if abs(c - target) > 0.005:
            raise SystemExit(f"{a}/{b}: wanted {target}, got {c:.5f}")
    vm, _ = answer_embedding("black and white", table)
    vb = table.get("black")
    c = float(vb @ vm / (np.linalg.norm(vb) * np.linalg.norm(vm)))
    print(f"wrote {out_path} ({len(WORDS)} words, {DIM}d)")
    print(f"worst pair error {worst:.6f}; cos(black, 'black and white') = {c:.5f}")
    if abs(c - 0.864) > 0.005:
        raise SystemExit("multi-word target off")


if __name__ == "__main__":
    main()
