"""Capacity-constrained adaptive clustering of head classes.

Each class with more samples than the capacity M = max(tail size, delta)
is split into ceil(n_c / M) subclasses. Centers start at farthest-point
samples; each round greedily assigns the globally most cosine-similar
(sample, open center) pair, closing a center when it reaches M, then
recomputes centers as renormalized means. Tail classes pass through as a
single subclass. Subclass ids are globally unique, class-major.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._backend import greedy_capacity_assign, worker_threads

_UNIT_TOL = 1e-6
_DEGENERATE_NORM = 1e-12


class ClusterFormatError(ValueError):
    """Raised for malformed cluster-assignment CSV files."""


@dataclass(frozen=True)
class ClusterConfig:
    delta: int = 10
    iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class ClusterModel:
    """Global subclass assignment of one dataset.

    assignments[i] is the subclass id of sample i; subclass_of_class maps
    each subclass id to its owning class; centers holds one unit vector
    per subclass; capacity is the per-subclass cap M;
    per_class_cluster_count[c] is m_c. Immutable after construction.
    """

    assignments: np.ndarray
    subclass_of_class: np.ndarray
    centers: np.ndarray
    capacity: int
    per_class_cluster_count: np.ndarray

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.subclass_of_class = np.asarray(self.subclass_of_class, dtype=np.int64)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.per_class_cluster_count = np.asarray(self.per_class_cluster_count, dtype=np.int64)
        s = self.subclass_of_class.shape[0]
        if self.centers.shape[0] != s:
            raise ValueError("need one center per subclass")
        if self.assignments.min(initial=0) < 0 or self.assignments.max(initial=-1) >= s:
            raise ValueError("assignment ids out of range")
        if self.per_class_cluster_count.sum() != s:
            raise ValueError("per-class cluster counts must sum to the subclass count")
        sizes = np.bincount(self.assignments, minlength=s)
        if np.any(sizes > self.capacity):
            raise ValueError("a subclass exceeds the capacity")

    @property
    def num_subclasses(self) -> int:
        return self.subclass_of_class.shape[0]

    def subclass_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_subclasses)

    def classes_of_samples(self) -> np.ndarray:
        return self.subclass_of_class[self.assignments]


@dataclass(frozen=True)
class ClusterStats:
    max_size: int
    min_size: int
    mean_size: float
    std_size: float
    size_imbalance_ratio: float


def capacity_threshold(tail_count: int, delta: int) -> int:
    """Per-subclass sample cap: max of the smallest class size and delta."""
    if tail_count < 1 or delta < 1:
        raise ValueError("tail_count and delta must be >= 1")
    return max(tail_count, delta)


def _check_unit_rows(z):
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("feature rows must be unit-norm")
    return z


def _farthest_point_indices(z: np.ndarray, m: int) -> np.ndarray:
    """Deterministic farthest-point start: first the sample farthest from
    the class mean, then repeated max-min-distance picks; ties resolve to
    the lowest index."""
    mean = z.mean(axis=0)
    chosen = [int(np.argmax(np.linalg.norm(z - mean, axis=1)))]
    mind = np.linalg.norm(z - z[chosen[0]], axis=1)
    while len(chosen) < m:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(z - z[nxt], axis=1))
    return np.asarray(chosen, dtype=np.int64)


def _renormalized_means(z, assign, m, prev_centers, sims):
    """Mean update with unit renormalization. An empty cluster is re-seeded
    with the sample least similar to its own center; a degenerate mean
    keeps the previous center."""
    centers = prev_centers.copy()
    own_sim = sims[np.arange(z.shape[0]), assign]
    for j in range(m):
        rows = z[assign == j]
        if rows.shape[0] == 0:
            centers[j] = z[int(np.argmin(own_sim))]
            continue
        mean = rows.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm >= _DEGENERATE_NORM:
            centers[j] = mean / norm
    return centers


def cluster_class(features, capacity: int, config: ClusterConfig):
    """Split one class into ceil(n/M) capacity-bounded clusters.

    Returns (assignment vector with local ids 0..m-1, final centers).
    Classes with n <= capacity must bypass clustering; passing one here
    is an error.
    """
    z = _check_unit_rows(features)
    n = z.shape[0]
    if n <= capacity:
        raise ValueError("class size must exceed the capacity; small classes bypass clustering")
    m = -(-n // capacity)
    centers = z[_farthest_point_indices(z, m)]
    assign = None
    sims = None
    for _ in range(config.iterations):
        if assign is not None:
            centers = _renormalized_means(z, assign, m, centers, sims)
        sims = z @ centers.T
        order = np.ascontiguousarray(np.argsort(-sims, axis=0, kind="stable").T)
        assign = greedy_capacity_assign(order, sims, capacity)
    centers = _renormalized_means(z, assign, m, centers, sims)
    return assign, centers


def cluster_dataset(features, ds, config: ClusterConfig) -> ClusterModel:
    """Cluster every head class of a dataset; tail classes (n_c <= M) pass
    through as one subclass each. Distinct classes may be clustered on
    worker threads; results are placed by class index, so the outcome is
    identical either way."""
    z = _check_unit_rows(features)
    if z.shape[0] != ds.num_samples:
        raise ValueError("features row count must match the dataset")
    cap = capacity_threshold(int(ds.class_counts.min()), config.delta)
    class_rows = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]

    def one_class(c: int):
        rows = class_rows[c]
        zc = z[rows]
        if rows.shape[0] <= cap:
            mean = zc.mean(axis=0)
            norm = np.linalg.norm(mean)
            center = mean / norm if norm >= _DEGENERATE_NORM else zc[0]
            return np.zeros(rows.shape[0], dtype=np.int64), center[None, :]
        return cluster_class(zc, cap, config)

    threads = worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_class, range(ds.num_classes)))
    else:
        results = [one_class(c) for c in range(ds.num_classes)]

    assignments = np.empty(ds.num_samples, dtype=np.int64)
    owner = []
    centers = []
    counts = np.empty(ds.num_classes, dtype=np.int64)
    next_id = 0
    for c, (local, cent) in enumerate(results):
        assignments[class_rows[c]] = next_id + local
        owner.extend([c] * cent.shape[0])
        centers.append(cent)
        counts[c] = cent.shape[0]
        next_id += cent.shape[0]
    return ClusterModel(
        assignments=assignments,
        subclass_of_class=np.asarray(owner, dtype=np.int64),
        centers=np.concatenate(centers, axis=0),
        capacity=cap,
        per_class_cluster_count=counts,
    )


def size_stats(sizes) -> ClusterStats:
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0:
        raise ValueError("no cluster sizes to summarize")
    return ClusterStats(
        max_size=int(sizes.max()),
        min_size=int(sizes.min()),
        mean_size=float(sizes.mean()),
        std_size=float(sizes.std()),
        size_imbalance_ratio=float(sizes.max()) / float(sizes.min()),
    )


def cluster_stats(model: ClusterModel, include_singleton_classes: bool = False):
    """Size statistics over subclasses of clustered (multi-subclass)
    classes; single-subclass pass-through classes are excluded unless
    requested. Returns None when no subclass is in scope."""
    sizes = model.subclass_sizes()
    if not include_singleton_classes:
        multi = model.per_class_cluster_count[model.subclass_of_class] > 1
        sizes = sizes[multi]
    if sizes.size == 0:
        return None
    return size_stats(sizes)


def baseline_kmeans(features, k: int, seed: int, iterations: int = 10) -> np.ndarray:
    """Plain Lloyd's algorithm for the balance comparison: random first
    center, farthest-point completion, Euclidean assignment, mean update,
    no capacity. Empty clusters re-seed to the sample farthest from its
    center."""
    z = np.asarray(features, dtype=np.float64)
    n = z.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError("k must not exceed the sample count")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    mind = np.linalg.norm(z - z[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(z - z[nxt], axis=1))
    centers = z[np.asarray(chosen)]
    assign = None
    for _ in range(iterations):
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1).astype(np.int64)
        dist_own = d2[np.arange(n), assign]
        for j in range(k):
            rows = z[assign == j]
            if rows.shape[0] == 0:
                far = int(np.argmax(dist_own))
                centers[j] = z[far]
                assign[far] = j
                dist_own[far] = 0.0
            else:
                centers[j] = rows.mean(axis=0)
    return assign


def save_clusters(model: ClusterModel, path) -> None:
    """Write assignments and centers as CSV (see load_clusters)."""
    classes = model.classes_of_samples()
    with open(path, "w") as f:
        f.write("sample_index,class,subclass\n")
        for i in range(model.assignments.shape[0]):
            f.write(f"{i},{classes[i]},{model.assignments[i]}\n")
        f.write(f"# capacity {model.capacity}\n")
        f.write("# centers\n")
        for s in range(model.num_subclasses):
            coords = ",".join(f"{v:.17g}" for v in model.centers[s])
            f.write(f"{s},{model.subclass_of_class[s]},{coords}\n")


def load_clusters(path) -> ClusterModel:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "sample_index,class,subclass":
        raise ClusterFormatError("malformed header: expected sample_index,class,subclass")
    capacity = None
    rows = []
    center_rows = []
    section = "rows"
    for ln in lines[1:]:
        if not ln.strip():
            continue
        if ln.startswith("# capacity"):
            capacity = int(ln.split()[2])
            continue
        if ln.startswith("# centers"):
            section = "centers"
            continue
        try:
            cells = ln.split(",")
            if section == "rows":
                rows.append((int(cells[0]), int(cells[1]), int(cells[2])))
            else:
                center_rows.append((int(cells[0]), int(cells[1]), [float(v) for v in cells[2:]]))
        except (ValueError, IndexError) as exc:
            raise ClusterFormatError(f"malformed line: {ln!r}") from exc
    if capacity is None:
        raise ClusterFormatError("missing capacity line")
    if not center_rows:
        raise ClusterFormatError("missing centers section")
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ClusterFormatError("sample indices must cover 0..n-1")
    center_rows.sort()
    if [c[0] for c in center_rows] != list(range(len(center_rows))):
        raise ClusterFormatError("subclass ids must cover 0..S-1")
    assignments = np.asarray([r[2] for r in rows], dtype=np.int64)
    owner = np.asarray([c[1] for c in center_rows], dtype=np.int64)
    centers = np.asarray([c[2] for c in center_rows], dtype=np.float64)
    for i, cls, sub in rows:
        if sub >= owner.shape[0] or owner[sub] != cls:
            raise ClusterFormatError(f"sample {i}: subclass {sub} does not belong to class {cls}")
    num_classes = int(owner.max()) + 1 if owner.size else 0
    counts = np.bincount(owner, minlength=num_classes)
    return ClusterModel(
        assignments=assignments,
        subclass_of_class=owner,
        centers=centers,
        capacity=capacity,
        per_class_cluster_count=counts,
    )
