"""Task split construction from a flat sample pool.

Two strategies:

* build_object_split: group samples by their object tags against a
  user-supplied {group: set-of-tags} map.  A sample belongs to the single
  group covering at least one of its tags; samples touching zero or
  several groups are discarded (counts reported).

* build_question_split: group samples by question-feature similarity
  around a small set of seed-labeled samples.  Greedy single-pass
  clustering joins a sample to the best existing cluster when cosine
  similarity to its centroid reaches min_sim, else opens a new cluster.
  Clusters holding at least min_cluster members and at least one seed take
  the majority seed label; everything else falls back to k-nearest
  seed-labeled samples (label adopted when the mean neighbor similarity
  reaches knn_threshold) and finally to the "irrelevant" bucket.
"""

import numpy as np

from clvqa.data.samples import Sample
from clvqa.errors import DataError

IRRELEVANT = "irrelevant"


def build_object_split(samples, groups):
    """Returns ({group: [samples]}, {"multi": n, "none": n}).

    groups: {group_name: iterable of tags}.  Group order is preserved in
    the result; every group is present even when empty.
    """
    if not groups:
        raise DataError("build_object_split needs at least one group")
    tag_sets = {g: frozenset(tags) for g, tags in groups.items()}
    out = {g: [] for g in groups}
    discarded = {"multi": 0, "none": 0}
    for s in samples:
        tags = set(s.object_tags)
        hits = [g for g, ts in tag_sets.items() if tags & ts]
        if len(hits) == 1:
            out[hits[0]].append(s)
        elif hits:
            discarded["multi"] += 1
        else:
            discarded["none"] += 1
    return out, discarded


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 1e-12, norms, 1.0)
    return x / safe


def build_question_split(samples, seed_labels, min_cluster=15, min_sim=0.8,
                         knn_k=5, knn_threshold=0.8):
    """Returns ({label: [samples]}, info dict).

    seed_labels: {sample_id: label} for a labeled subset of `samples`.
    info counts how many samples each stage labeled:
    {"clustered": n, "knn": n, "irrelevant": n}.
    """
    samples = list(samples)
    if not samples:
        raise DataError("build_question_split got no samples")
    if not seed_labels:
        raise DataError("build_question_split needs seed labels")
    unknown = set(seed_labels) - {s.sample_id for s in samples}
    if unknown:
        raise DataError(f"seed label for unknown sample id "
                        f"{sorted(unknown)[0]!r}")
    q = np.stack([s.question_features for s in samples]).astype(np.float64)
    if q.shape[1] == 0:
        raise DataError("samples have no question features to cluster")
    qn = _unit_rows(q)

    # greedy single-pass clustering on cosine similarity to running centroids
    centroids = []  # unnormalized running sums
    members = []  # lists of sample indices
    for i in range(len(samples)):
        best, best_sim = -1, min_sim
        for ci, c in enumerate(centroids):
            cn = c / max(np.linalg.norm(c), 1e-12)
            sim = float(qn[i] @ cn)
            if sim >= best_sim:
                best, best_sim = ci, sim
        if best < 0:
            centroids.append(qn[i].copy())
            members.append([i])
        else:
            centroids[best] += qn[i]
            members[best].append(i)

    labels = [None] * len(samples)
    seed_idx = [i for i, s in enumerate(samples) if s.sample_id in seed_labels]
    info = {"clustered": 0, "knn": 0, "irrelevant": 0}

    for idxs in members:
        if len(idxs) < min_cluster:
            continue
        votes = {}
        for i in idxs:
            sid = samples[i].sample_id
            if sid in seed_labels:
                votes[seed_labels[sid]] = votes.get(seed_labels[sid], 0) + 1
        if not votes:
            continue
        label = min(votes, key=lambda g: (-votes[g], g))
        for i in idxs:
            labels[i] = label
            info["clustered"] += 1

    # KNN fallback against the seed-labeled samples
    seed_mat = qn[seed_idx] if seed_idx else None
    for i in range(len(samples)):
        if labels[i] is not None:
            continue
        sims = seed_mat @ qn[i]
        k = min(knn_k, len(seed_idx))
        top = np.argsort(-sims, kind="stable")[:k]
        if float(np.mean(sims[top])) >= knn_threshold:
            votes = {}
            for j in top:
                lab = seed_labels[samples[seed_idx[j]].sample_id]
                votes[lab] = votes.get(lab, 0) + 1
            labels[i] = min(votes, key=lambda g: (-votes[g], g))
            info["knn"] += 1
        else:
            labels[i] = IRRELEVANT
            info["irrelevant"] += 1

    out = {}
    for s, lab in zip(samples, labels):
        out.setdefault(lab, []).append(s)
    return out, info
