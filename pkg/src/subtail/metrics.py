"""Representation diagnostics: distance reports, subclass recovery, probe.

All statistics operate on unit-norm embeddings, so Euclidean distances
are computed through dot products (d = sqrt(2 - 2 z_i.z_j)) in row chunks
to keep memory linear in n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import split_labels

SPLITS = ("Many", "Medium", "Few", "All")
STATISTICS = ("intra_subclass", "inter_subclass", "intra_class", "inter_class")

_CHUNK = 256


@dataclass
class DistanceReport:
    """Mean distances per split, one dict per statistic.

    Keys are Many/Medium/Few/All; a split with no qualifying samples maps
    to NaN. intra_subclass averages each sample's mean distance to its
    subclass peers, inter_subclass to same-class other-subclass samples,
    intra_class to all class peers, inter_class to all other classes.
    """

    intra_subclass: dict
    inter_subclass: dict
    intra_class: dict
    inter_class: dict

    def rows(self):
        """(split, statistic, value) rows for CSV export."""
        out = []
        for stat in STATISTICS:
            table = getattr(self, stat)
            for split in SPLITS:
                out.append((split, stat, table[split]))
        return out


def set_distance(z, members) -> float:
    """Mean Euclidean distance from one vector to a nonempty set."""
    members = np.asarray(members, dtype=np.float64)
    if members.ndim != 2 or members.shape[0] == 0:
        raise ValueError("the reference set must be nonempty")
    return float(np.linalg.norm(members - np.asarray(z, dtype=np.float64), axis=1).mean())


def _masked_mean_distances(z, row_mask_of):
    """Per-sample mean distance to a masked column set, chunked.

    row_mask_of(lo, hi) returns the boolean (hi-lo, n) membership matrix
    for anchor rows [lo, hi). Returns per-sample means with NaN where the
    set is empty.
    """
    n = z.shape[0]
    out = np.full(n, np.nan)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        sims = z[lo:hi] @ z.T
        d = np.sqrt(np.maximum(2.0 - 2.0 * sims, 0.0))
        mask = row_mask_of(lo, hi)
        cnt = mask.sum(axis=1)
        sums = np.where(mask, d, 0.0).sum(axis=1)
        nz = cnt > 0
        out[lo:hi][nz] = sums[nz] / cnt[nz]
    return out


def distance_report(
    features,
    ds,
    clusters,
    thresholds=(100, 20),
    balanced: bool = False,
    seed: int = 0,
) -> DistanceReport:
    """Table of mean intra/inter subclass and class distances by split.

    With balanced=True, Many and Medium samples are subsampled to the Few
    split's sample count before any distance is measured (the balanced
    protocol); default measures over all samples.
    """
    z = np.asarray(features, dtype=np.float64)
    if z.shape[0] != ds.num_samples:
        raise ValueError("features row count must match the dataset")
    tags = split_labels(ds, thresholds[0], thresholds[1])
    sample_tags = tags[ds.labels]
    labels = ds.labels
    subs = clusters.assignments

    keep = np.arange(ds.num_samples)
    if balanced:
        rng = np.random.default_rng(seed)
        few = np.flatnonzero(sample_tags == "Few")
        target = few.shape[0]
        if target == 0:
            raise ValueError("balanced subsampling needs a nonempty Few split")
        parts = [few]
        for name in ("Many", "Medium"):
            pool = np.flatnonzero(sample_tags == name)
            if pool.shape[0] > target:
                pool = np.sort(rng.choice(pool, size=target, replace=False))
            parts.append(pool)
        keep = np.sort(np.concatenate(parts))
        z = z[keep]
        labels = labels[keep]
        subs = subs[keep]
        sample_tags = sample_tags[keep]

    def masks(kind):
        def build(lo, hi):
            lab = labels[lo:hi, None] == labels[None, :]
            sub = subs[lo:hi, None] == subs[None, :]
            if kind == "intra_subclass":
                block = sub
            elif kind == "inter_subclass":
                block = lab & ~sub
            elif kind == "intra_class":
                block = lab.copy()
            else:
                block = ~lab
            block[np.arange(hi - lo), np.arange(lo, hi)] = False
            return block

        return build

    per_stat = {}
    for stat in STATISTICS:
        per_sample = _masked_mean_distances(z, masks(stat))
        table = {}
        for split in SPLITS:
            sel = np.ones(z.shape[0], dtype=bool) if split == "All" else sample_tags == split
            vals = per_sample[sel]
            vals = vals[~np.isnan(vals)]
            table[split] = float(vals.mean()) if vals.size else float("nan")
        per_stat[stat] = table
    return DistanceReport(**{s: per_stat[s] for s in STATISTICS})


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected partition agreement from the contingency table."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError("partitions must be nonempty and aligned")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    na = ia.max() + 1
    nb = ib.max() + 1
    table = np.bincount(ia * nb + ib, minlength=na * nb).reshape(na, nb)
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(a.size)
    expected = sum_rows * sum_cols / total
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def subclass_recovery(clusters, ds) -> dict:
    """Per-class ARI between recovered subclasses and the generator's
    components, over classes that were actually clustered (m_c >= 2)."""
    if ds.true_subclusters is None:
        raise ValueError("dataset has no ground-truth subclusters")
    out = {}
    for c in range(ds.num_classes):
        if clusters.per_class_cluster_count[c] < 2:
            continue
        rows = ds.labels == c
        out[c] = adjusted_rand_index(clusters.assignments[rows], ds.true_subclusters[rows])
    return out


@dataclass
class LinearProbe:
    weights: np.ndarray
    bias: np.ndarray

    def logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def probe_loss_and_grads(probe: LinearProbe, features, labels):
    """Mean softmax cross-entropy and its exact gradients."""
    z = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    logits = probe.logits(z)
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    p = expl / expl.sum(axis=1, keepdims=True)
    n = z.shape[0]
    loss = float(-np.log(p[np.arange(n), labels]).mean())
    delta = p
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    return loss, delta.T @ z, delta.sum(axis=0)


def train_probe(features, ds, epochs: int = 200, lr: float = 0.5, seed: int = 0,
                batch_size: int = 64) -> LinearProbe:
    """Fit a linear softmax classifier on frozen features with
    class-balanced sampling: each draw picks a class uniformly, then an
    instance uniformly inside it."""
    z = np.asarray(features, dtype=np.float64)
    if z.shape[0] != ds.num_samples:
        raise ValueError("features row count must match the dataset")
    rng = np.random.default_rng(seed)
    probe = LinearProbe(
        weights=np.zeros((ds.num_classes, z.shape[1])),
        bias=np.zeros(ds.num_classes),
    )
    class_rows = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    steps = max(1, -(-ds.num_samples // batch_size))
    for _ in range(epochs):
        for _ in range(steps):
            classes = rng.integers(0, ds.num_classes, size=batch_size)
            picks = np.array(
                [class_rows[c][rng.integers(0, class_rows[c].shape[0])] for c in classes]
            )
            _, gw, gb = probe_loss_and_grads(probe, z[picks], ds.labels[picks])
            probe.weights -= lr * gw
            probe.bias -= lr * gb
    return probe


def evaluate_probe(probe: LinearProbe, features, ds, thresholds=(100, 20),
                   split_counts=None) -> dict:
    """Top-1 accuracy per Many/Medium/Few/All split.

    split_counts overrides the class counts used to define the splits
    (pass the training counts when evaluating on a balanced held-out
    set); defaults to the evaluated dataset's own counts.
    """
    z = np.asarray(features, dtype=np.float64)
    preds = probe.predict(z)
    correct = preds == ds.labels
    if split_counts is None:
        tags = split_labels(ds, thresholds[0], thresholds[1])
    else:
        counts = np.asarray(split_counts, dtype=np.int64)
        if counts.shape[0] != ds.num_classes:
            raise ValueError("split_counts must cover every class")
        tags = np.full(ds.num_classes, "Medium", dtype="<U6")
        tags[counts > thresholds[0]] = "Many"
        tags[counts < thresholds[1]] = "Few"
    sample_tags = tags[ds.labels]
    out = {"All": float(correct.mean())}
    for split in ("Many", "Medium", "Few"):
        sel = sample_tags == split
        out[split] = float(correct[sel].mean()) if sel.any() else float("nan")
    return out
