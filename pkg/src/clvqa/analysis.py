"""Dissimilarity factors, representation drift, and correlation tools.

Task dissimilarity factors:
  answer_distribution / skew_divergence   answer-frequency shift
  mean_embedding_distance                 cosine distance of mean features
Representation drift:
  linear_cka / cka_timeline               layer-wise similarity over time
Statistics:
  spearman                                rank correlation with p-value
  forgetting_correlation                  factors vs forgetting magnitude
"""

import itertools
import math

import numpy as np
from scipy.special import stdtr

from clvqa.data.samples import feature_matrix
from clvqa.errors import ShapeError, StatError
from clvqa.model import forward


def answer_distribution(task):
    """{answer: frequency} over the task's train split, using each sample's
    top answer (score ties break lexicographically)."""
    counts = {}
    for s in task.train:
        a = s.top_answer()
        counts[a] = counts.get(a, 0) + 1
    n = len(task.train)
    return {a: c / n for a, c in sorted(counts.items())}


def skew_divergence(p, q, alpha=0.99):
    """KL(P || alpha*Q + (1-alpha)*P) over the union support.

    alpha < 1 keeps the divergence finite for disjoint supports (0.99 gives
    ln(100) ~ 4.6052 there); alpha == 1 is plain KL and returns inf for
    disjoint supports.
    """
    if not 0.0 < alpha <= 1.0:
        raise StatError(f"alpha must be in (0, 1], got {alpha}")
    if not p or not q:
        raise StatError("skew divergence needs non-empty distributions")
    total = 0.0
    for a, pa in p.items():
        if pa <= 0.0:
            continue
        mix = alpha * q.get(a, 0.0) + (1.0 - alpha) * pa
        if mix <= 0.0:
            return math.inf
        total += pa * math.log(pa / mix)
    return total


def mean_embedding_distance(samples_a, samples_b, which="image", model=None):
    """Cosine distance between the mean feature vectors of two sample sets.

    which: "image" or "question" uses the raw per-sample features; "joint"
    runs the full feature vector through `model` and uses the last hidden
    layer's activations.
    """
    def mean_vec(samples):
        if which == "image":
            m = np.stack([s.image_features for s in samples])
        elif which == "question":
            m = np.stack([s.question_features for s in samples])
        elif which == "joint":
            if model is None:
                raise StatError("joint embedding distance needs a model")
            _, trace = forward(model, feature_matrix(samples))
            if not trace.hidden:
                raise StatError("joint embedding distance needs a model with "
                                "hidden layers")
            m = trace.hidden[-1]
        else:
            raise StatError(f"unknown embedding kind {which!r}")
        if m.shape[1] == 0:
            raise StatError(f"samples carry no {which} features")
        return m.mean(axis=0)

    if not samples_a or not samples_b:
        raise StatError("mean embedding distance needs non-empty sample sets")
    va, vb = mean_vec(samples_a), mean_vec(samples_b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise StatError("mean embedding is (numerically) zero")
    return float(1.0 - va @ vb / (na * nb))


def _rankdata(x):
    """Fractional ranks (1-based, ties averaged)."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise StatError("correlation undefined for constant input")
    return float(xc @ yc / denom)


def spearman(x, y, exact=False):
    """Spearman rank correlation; returns (rho, p_two_sided).

    rho is Pearson on fractional ranks.  The default p-value uses the
    t approximation with n-2 degrees of freedom; exact=True enumerates all
    rank permutations (allowed for n <= 10) and reports the fraction of
    permutations with |rho| at least as large.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"spearman needs two equal-length vectors, got "
                         f"{x.shape} and {y.shape}")
    n = len(x)
    if n < 3:
        raise StatError(f"spearman needs n >= 3, got {n}")
    rx = _rankdata(x)
    ry = _rankdata(y)
    rho = _pearson(rx, ry)
    if exact:
        if n > 10:
            raise StatError(f"exact permutation p-value limited to n <= 10, "
                            f"got {n}")
        rxc = rx - rx.mean()
        sx = math.sqrt(float(rxc @ rxc))
        count = 0
        total = 0
        for perm in itertools.permutations(ry):
            ryp = np.asarray(perm)
            ryc = ryp - ryp.mean()
            sy = math.sqrt(float(ryc @ ryc))
            r = float(rxc @ ryc) / (sx * sy)
            if abs(r) >= abs(rho) - 1e-12:
                count += 1
            total += 1
        return rho, count / total
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return rho, p


def linear_cka(x, y):
    """Linear centered kernel alignment between two activation matrices
    [N, d1], [N, d2] over the same N probe inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"cka needs [N, d] matrices with equal N, got "
                         f"{x.shape} and {y.shape}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    num = float(np.linalg.norm(yc.T @ xc, "fro") ** 2)
    den = float(np.linalg.norm(xc.T @ xc, "fro")
                * np.linalg.norm(yc.T @ yc, "fro"))
    if den == 0.0:
        raise StatError("cka undefined: an activation matrix is constant")
    return num / den


def cka_timeline(checkpoints, probe_x, img_dim, variant="hidden"):
    """Layer-wise CKA of each checkpoint against the first one.

    probe_x [N, D] is a fixed probe set.  variant:
      "hidden"    probe as-is, one row per hidden layer
      "image"     question columns zeroed (image-driven response)
      "question"  image columns zeroed
      "input"     raw probe against itself; control row, identically 1
    Returns a [n_checkpoints, n_rows] array; rows are hidden layers (a
    single row for "input").
    """
    if not checkpoints:
        raise StatError("cka_timeline needs at least one checkpoint")
    probe = np.array(probe_x, dtype=np.float64)
    if variant == "image":
        probe[:, img_dim:] = 0.0
    elif variant == "question":
        probe[:, :img_dim] = 0.0
    elif variant not in ("hidden", "input"):
        raise StatError(f"unknown cka variant {variant!r}")
    if variant == "input":
        return np.ones((len(checkpoints), 1))
    traces = []
    for m in checkpoints:
        _, tr = forward(m, probe)
        if not tr.hidden:
            raise StatError("cka_timeline needs models with hidden layers")
        traces.append(tr.hidden)
    n_layers = len(traces[0])
    out = np.empty((len(checkpoints), n_layers))
    for t, hidden in enumerate(traces):
        if len(hidden) != n_layers:
            raise ShapeError("checkpoints disagree on the number of layers")
        for layer in range(n_layers):
            out[t, layer] = linear_cka(traces[0][layer], hidden[layer])
    return out


def forgetting_correlation(drops, factors, exact=False):
    """Correlate forgetting with dissimilarity factors.

    drops: relative accuracy drops over ordered task pairs (negative =
    forgetting).  factors: {name: vector aligned with drops}, larger =
    more dissimilar.  The correlation is computed against the forgetting
    magnitude (-drop), so a factor that grows with forgetting comes out
    positive.  Returns {name: (rho, p)}.
    """
    drops = np.asarray(drops, dtype=np.float64)
    magnitude = -drops
    out = {}
    for name, values in factors.items():
        values = np.asarray(values, dtype=np.float64)
        if values.shape != drops.shape:
            raise ShapeError(f"factor {name!r} has shape {values.shape}, "
                             f"drops have {drops.shape}")
        out[name] = spearman(magnitude, values, exact=exact)
    return out
