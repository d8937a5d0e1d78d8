"""Long-tailed feature datasets: synthetic generation, statistics, file IO.

Class counts follow the exponential long-tail profile
``n_k = int(n_1 * rho^(-k/(C-1)))`` (clamped to >= 1), with classes
sorted by decreasing cardinality. Head classes are Gaussian mixtures with
several components; small classes are a single component, so the
generator's component labels double as ground-truth subclusters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TEXT_MAGIC = "subtail-ds v1"
BINARY_MAGIC = "subtail-ds-bin v1"

# Classes with fewer samples than this multiple of the component count are
# generated from a single component (the "tail" of the synthetic hierarchy).
_MIN_SAMPLES_PER_COMPONENT = 2

# Subcluster means sit on a sphere of this fraction of the class radius
# around their class center.
_SUBCLUSTER_SPREAD = 0.5


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files (header, row count, label range)."""


@dataclass(eq=False)
class LongTailDataset:
    """Feature vectors with long-tailed class labels.

    ``class_counts`` is non-increasing (class 0 is the head) and every
    label k occurs exactly ``class_counts[k]`` times. ``true_subclusters``
    carries generator component ids on synthetic data, else None.
    Immutable by convention; safe to share across threads.
    """

    inputs: np.ndarray
    labels: np.ndarray
    class_counts: np.ndarray
    true_subclusters: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        n = self.inputs.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per input row")
        if self.class_counts.sum() != n:
            raise ValueError("class_counts must sum to the number of samples")
        if np.any(self.class_counts < 1):
            raise ValueError("every class must have at least one sample")
        if np.any(np.diff(self.class_counts) > 0):
            raise ValueError("class_counts must be non-increasing")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise ValueError("labels out of range")
        observed = np.bincount(self.labels, minlength=self.num_classes)
        if not np.array_equal(observed, self.class_counts):
            raise ValueError("label occurrences disagree with class_counts")
        if self.true_subclusters is not None:
            self.true_subclusters = np.asarray(self.true_subclusters, dtype=np.int64)
            if self.true_subclusters.shape != (n,):
                raise ValueError("true_subclusters must have one entry per sample")

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_counts.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LongTailDataset):
            return NotImplemented
        if (self.true_subclusters is None) != (other.true_subclusters is None):
            return False
        return (
            np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.class_counts, other.class_counts)
            and (
                self.true_subclusters is None
                or np.array_equal(self.true_subclusters, other.true_subclusters)
            )
        )


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int
    head_count: int
    imbalance_ratio: float
    subclusters_per_class: int = 3
    input_dim: int = 8
    noise_sigma: float = 1.0
    separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.input_dim < 2:
            raise ValueError("input_dim must be at least 2")
        if self.imbalance_ratio < 1:
            raise ValueError("imbalance_ratio must be >= 1")
        if self.head_count < self.imbalance_ratio:
            raise ValueError("head_count must be >= imbalance_ratio so the tail is nonempty")
        if self.subclusters_per_class < 1:
            raise ValueError("subclusters_per_class must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def class_count_profile(config: GeneratorConfig) -> np.ndarray:
    """Exponential-decay class counts, head first, each >= 1.

    n_k = int(n_1 * rho^(-k/(C-1))), truncated as in the usual long-tailed
    CIFAR construction; truncation of a decreasing sequence keeps the
    counts non-increasing.
    """
    c = config.num_classes
    k = np.arange(c, dtype=np.float64)
    raw = config.head_count * config.imbalance_ratio ** (-k / (c - 1))
    return np.maximum(np.floor(raw).astype(np.int64), 1)


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _components_per_class(counts: np.ndarray, per_class: int) -> np.ndarray:
    m = np.ones(len(counts), dtype=np.int64)
    m[counts >= _MIN_SAMPLES_PER_COMPONENT * per_class] = per_class
    return m


def _component_sizes(total: int, parts: int) -> np.ndarray:
    base, rem = divmod(total, parts)
    sizes = np.full(parts, base, dtype=np.int64)
    sizes[:rem] += 1
    return sizes


def _component_means(config: GeneratorConfig, counts: np.ndarray, rng: np.random.Generator):
    """Class centers on a sphere of radius `separation`; component means on a
    smaller sphere around each center. Consumes the rng identically for any
    later draw stream, so train and eval sets share the same mixture."""
    m_per_class = _components_per_class(counts, config.subclusters_per_class)
    means = []
    for k in range(config.num_classes):
        center = config.separation * _unit_rows(rng, 1, config.input_dim)[0]
        offsets = (
            config.separation
            * _SUBCLUSTER_SPREAD
            * _unit_rows(rng, int(m_per_class[k]), config.input_dim)
        )
        means.append(center + offsets)
    return means, m_per_class


def _draw(config, counts, means, m_per_class, rng):
    rows, labels, subs = [], [], []
    next_sub = 0
    for k in range(config.num_classes):
        sizes = _component_sizes(int(counts[k]), int(m_per_class[k]))
        for j, sz in enumerate(sizes):
            rows.append(means[k][j] + config.noise_sigma * rng.standard_normal((sz, config.input_dim)))
            labels.append(np.full(sz, k, dtype=np.int64))
            subs.append(np.full(sz, next_sub + j, dtype=np.int64))
        next_sub += int(m_per_class[k])
    return (
        np.concatenate(rows, axis=0),
        np.concatenate(labels),
        np.concatenate(subs),
    )


def generate(config: GeneratorConfig) -> LongTailDataset:
    """Generate a long-tailed Gaussian-mixture dataset with known subclusters."""
    counts = class_count_profile(config)
    ss = np.random.SeedSequence(config.seed)
    mean_ss, sample_ss, _ = ss.spawn(3)
    means, m_per_class = _component_means(config, counts, np.random.default_rng(mean_ss))
    inputs, labels, subs = _draw(config, counts, means, m_per_class, np.random.default_rng(sample_ss))
    return LongTailDataset(inputs, labels, counts, subs)


def generate_eval(config: GeneratorConfig, per_class: int) -> LongTailDataset:
    """Balanced evaluation draw from the same mixture as `generate(config)`.

    Uses the identical component means (same seed stream) but a fresh
    sample stream, giving a class-balanced held-out set for probing.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    counts = class_count_profile(config)
    ss = np.random.SeedSequence(config.seed)
    mean_ss, _, eval_ss = ss.spawn(3)
    means, m_per_class = _component_means(config, counts, np.random.default_rng(mean_ss))
    eval_counts = np.full(config.num_classes, per_class, dtype=np.int64)
    inputs, labels, subs = _draw(
        config, eval_counts, means, m_per_class, np.random.default_rng(eval_ss)
    )
    return LongTailDataset(inputs, labels, eval_counts, subs)


def imbalance_ratio(ds: LongTailDataset) -> float:
    """max class count over min class count (n_1 / n_C)."""
    counts = ds.class_counts
    return float(counts.max()) / float(counts.min())


def split_labels(ds: LongTailDataset, many_threshold: int, few_threshold: int) -> np.ndarray:
    """Tag each class Many (> many_threshold), Few (< few_threshold), else Medium."""
    if not many_threshold > few_threshold >= 1:
        raise ValueError("need many_threshold > few_threshold >= 1")
    tags = np.full(ds.num_classes, "Medium", dtype="<U6")
    tags[ds.class_counts > many_threshold] = "Many"
    tags[ds.class_counts < few_threshold] = "Few"
    return tags


def save_dataset(ds: LongTailDataset, path, binary: bool = False) -> None:
    """Write a dataset file; text by default, binary variant on request."""
    has_subs = ds.true_subclusters is not None
    header = (
        f"{BINARY_MAGIC if binary else TEXT_MAGIC} "
        f"n={ds.num_samples} d={ds.input_dim} C={ds.num_classes} "
        f"subclusters={1 if has_subs else 0}\n"
    )
    if binary:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            rec = _binary_dtype(ds.input_dim, has_subs)
            out = np.empty(ds.num_samples, dtype=rec)
            out["label"] = ds.labels
            if has_subs:
                out["sub"] = ds.true_subclusters
            out["f"] = ds.inputs
            f.write(out.tobytes())
        return
    with open(path, "w") as f:
        f.write(header)
        for i in range(ds.num_samples):
            cells = [str(int(ds.labels[i]))]
            if has_subs:
                cells.append(str(int(ds.true_subclusters[i])))
            cells.extend(f"{v:.17g}" for v in ds.inputs[i])
            f.write(",".join(cells) + "\n")


def _binary_dtype(dim: int, has_subs: bool) -> np.dtype:
    fields = [("label", "<u4")]
    if has_subs:
        fields.append(("sub", "<u4"))
    fields.append(("f", "<f8", (dim,)))
    return np.dtype(fields)


def _parse_header(line: str) -> tuple[bool, int, int, int, bool]:
    line = line.rstrip("\n")
    if line.startswith(TEXT_MAGIC + " "):
        binary = False
        rest = line[len(TEXT_MAGIC) + 1 :]
    elif line.startswith(BINARY_MAGIC + " "):
        binary = True
        rest = line[len(BINARY_MAGIC) + 1 :]
    else:
        raise DatasetFormatError(f"malformed header: unrecognized magic in {line!r}")
    fields = {}
    for tok in rest.split():
        if "=" not in tok:
            raise DatasetFormatError(f"malformed header: bad field {tok!r}")
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        n = int(fields["n"])
        d = int(fields["d"])
        c = int(fields["C"])
        subs = int(fields["subclusters"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"malformed header: {line!r}") from exc
    if n < 0 or d < 1 or c < 1 or subs not in (0, 1):
        raise DatasetFormatError(f"malformed header: bad sizes in {line!r}")
    return binary, n, d, c, subs == 1


def load_dataset(path) -> LongTailDataset:
    """Load a text or binary dataset file (sniffed from the header line)."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace")
        binary, n, d, c, has_subs = _parse_header(header)
        payload = f.read()
    if binary:
        rec = _binary_dtype(d, has_subs)
        if len(payload) != n * rec.itemsize:
            raise DatasetFormatError(
                f"row-count mismatch: expected {n} records, got {len(payload) / rec.itemsize:g}"
            )
        data = np.frombuffer(payload, dtype=rec)
        labels = data["label"].astype(np.int64)
        subs = data["sub"].astype(np.int64) if has_subs else None
        inputs = data["f"].astype(np.float64)
    else:
        lines = [ln for ln in payload.decode("ascii").splitlines() if ln.strip()]
        if len(lines) != n:
            raise DatasetFormatError(f"row-count mismatch: expected {n} rows, got {len(lines)}")
        width = d + (2 if has_subs else 1)
        labels = np.empty(n, dtype=np.int64)
        subs = np.empty(n, dtype=np.int64) if has_subs else None
        inputs = np.empty((n, d), dtype=np.float64)
        for i, ln in enumerate(lines):
            cells = ln.split(",")
            if len(cells) != width:
                raise DatasetFormatError(
                    f"row-count mismatch: row {i} has {len(cells)} fields, expected {width}"
                )
            try:
                labels[i] = int(cells[0])
                if has_subs:
                    subs[i] = int(cells[1])
                inputs[i] = [float(v) for v in cells[2 if has_subs else 1 :]]
            except ValueError as exc:
                raise DatasetFormatError(f"malformed value in row {i}") from exc
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DatasetFormatError(
            f"label out of range: found {int(labels.max())} for C={c}"
        )
    counts = np.bincount(labels, minlength=c)
    try:
        return LongTailDataset(inputs, labels, counts, subs)
    except ValueError as exc:
        raise DatasetFormatError(f"inconsistent dataset file: {exc}") from exc
