"""Contrastive losses over paired embeddings, with analytic gradients.

Each anchor z_i is paired with one augmented view zt_i. For anchor i the
candidate set is every other anchor plus zt_i; positive sets vary by loss:

  class loss     all same-class anchors, plus the augmented view
  sampled loss   at most k same-class anchors (drawn without replacement),
                 plus the augmented view
  balanced loss  a subclass-level term at temperature tau1 plus a
                 class-level term over same-class/other-subclass anchors
                 at the per-class temperature tau2, weighted by beta

Losses are summed over anchors (no batch mean). Gradients are exact and
cover both the anchors and the augmented views. Softmaxes subtract the
max logit before exponentiating; at tau = 0.1 on unit vectors the raw
logits reach 10, so this is required, not cosmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import supcon_core

_UNIT_TOL = 1e-6
_PHI_EPS = 1e-12


@dataclass
class Batch:
    """Validated pair of embedding views with labels.

    Rows of both views must be unit-norm (within 1e-6); subclass ids, when
    present, must refine the class partition. For anchor i the losses read
    the candidate set as the other anchors plus the anchor's own augmented
    view; positives are subsets of that candidate set.
    """

    anchors: np.ndarray
    augmented: np.ndarray
    labels: np.ndarray
    subclasses: np.ndarray | None = None

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        self.augmented = np.asarray(self.augmented, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 1:
            raise ValueError("anchors must be a nonempty 2d array")
        n = self.anchors.shape[0]
        if self.augmented.shape != self.anchors.shape:
            raise ValueError("augmented view must match anchor shape")
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per row")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        for name, arr in (("anchors", self.anchors), ("augmented", self.augmented)):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise ValueError(f"{name} rows must be unit-norm within {_UNIT_TOL}")
        if self.subclasses is not None:
            self.subclasses = np.asarray(self.subclasses, dtype=np.int64)
            if self.subclasses.shape != (n,):
                raise ValueError("subclasses must have one entry per row")
            for s in np.unique(self.subclasses):
                if len(np.unique(self.labels[self.subclasses == s])) > 1:
                    raise ValueError("a subclass id must not span classes")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]


@dataclass(frozen=True)
class LossConfig:
    tau1: float = 0.1
    beta: float = 0.2
    k_positives: int = 4

    def __post_init__(self):
        if self.tau1 <= 0:
            raise ValueError("tau1 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.k_positives < 1:
            raise ValueError("k_positives must be >= 1")


@dataclass
class TemperatureTable:
    """Per-class concentration and the temperatures it induces.

    tau2(c) = tau1 * exp(phi(c) / mean phi) is strictly above tau1 for
    every class; degenerate profiles (all phi equal, or mean below eps)
    collapse to tau1 * e exactly.
    """

    phi: np.ndarray
    tau2: np.ndarray
    centroids: np.ndarray
    alpha: float
    tau1: float

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.tau2 = np.asarray(self.tau2, dtype=np.float64)
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.phi.shape != self.tau2.shape or self.phi.ndim != 1:
            raise ValueError("phi and tau2 must be matching vectors")
        if self.centroids.shape[0] != self.phi.shape[0]:
            raise ValueError("need one centroid per class")
        if np.any(self.phi < 0):
            raise ValueError("phi entries must be nonnegative")
        if np.any(self.tau2 <= self.tau1):
            raise ValueError("tau2 must exceed tau1 for every class")

    @property
    def num_classes(self) -> int:
        return self.phi.shape[0]


@dataclass
class LossReport:
    """Scalar loss plus exact gradients for both embedding views.

    For the balanced loss, term_subclass and term_class carry the two
    raw term values; loss == term_subclass + beta * term_class.
    """

    loss: float
    grad_anchor: np.ndarray
    grad_augmented: np.ndarray
    term_subclass: float | None = None
    term_class: float | None = None


def _run_terms(z, z_tilde, terms):
    """Evaluate masked softmax terms and assemble embedding gradients.

    terms: list of (weight, inv_tau_vector, pos_mask, den_mask). The core
    returns dL/d(pair logits); assembly back to dL/dz is linear, so the
    weighted pieces are accumulated first and mapped once.
    """
    s = z @ z.T
    st = np.einsum("ij,ij->i", z, z_tilde)
    n = z.shape[0]
    values = []
    g_acc = np.zeros((n, n))
    gt_acc = np.zeros(n)
    for weight, inv_tau, pos, den in terms:
        value, g, gt = supcon_core(
            np.ascontiguousarray(s),
            np.ascontiguousarray(st),
            np.ascontiguousarray(inv_tau, dtype=np.float64),
            np.ascontiguousarray(pos),
            np.ascontiguousarray(den),
        )
        values.append(float(value))
        g_acc += weight * g
        gt_acc += weight * gt
    grad_z = g_acc @ z + g_acc.T @ z + gt_acc[:, None] * z_tilde
    grad_zt = gt_acc[:, None] * z
    total = float(sum(w * v for (w, _, _, _), v in zip(terms, values)))
    return total, values, grad_z, grad_zt


def scl_loss(batch: Batch, tau: float) -> LossReport:
    """Supervised contrastive loss: every same-class anchor is a positive."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = batch.size
    eye = np.eye(n, dtype=bool)
    pos = (batch.labels[:, None] == batch.labels[None, :]) & ~eye
    inv_tau = np.full(n, 1.0 / tau)
    total, _, gz, gzt = _run_terms(batch.anchors, batch.augmented, [(1.0, inv_tau, pos, ~eye)])
    return LossReport(total, gz, gzt)


def kcl_positive_mask(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Per-anchor positive mask keeping at most k same-class anchors,
    sampled without replacement; anchors with fewer candidates keep all."""
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    n = labels.shape[0]
    eye = np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        idx = np.flatnonzero(pos[i])
        if idx.size > k:
            idx = rng.choice(idx, size=k, replace=False)
        mask[i, idx] = True
    return mask


def kcl_loss(batch: Batch, tau: float, k: int, rng: np.random.Generator) -> LossReport:
    """Sampled-positive contrastive loss. Per anchor, at most k same-class
    anchors are drawn; the normalizer is the realized positive count
    (draws plus the augmented view)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = batch.size
    eye = np.eye(n, dtype=bool)
    pos = kcl_positive_mask(batch.labels, k, rng)
    inv_tau = np.full(n, 1.0 / tau)
    total, _, gz, gzt = _run_terms(batch.anchors, batch.augmented, [(1.0, inv_tau, pos, ~eye)])
    return LossReport(total, gz, gzt)


def sbcl_loss(batch: Batch, config: LossConfig, temps: TemperatureTable) -> LossReport:
    """Bi-granularity loss. Term one pulls subclass members together at
    tau1 over the full candidate set; term two pulls the remaining
    same-class anchors together at the class's tau2 with same-subclass
    anchors excluded from the candidates; total = term1 + beta * term2."""
    if batch.subclasses is None:
        raise ValueError("balanced loss needs subclass ids on the batch")
    if batch.labels.max() >= temps.num_classes:
        raise ValueError("temperature table does not cover every batch class")
    n = batch.size
    eye = np.eye(n, dtype=bool)
    labels = batch.labels
    same_class = labels[:, None] == labels[None, :]
    same_sub = batch.subclasses[:, None] == batch.subclasses[None, :]
    inv_tau1 = np.full(n, 1.0 / config.tau1)
    inv_tau2 = 1.0 / temps.tau2[labels]
    terms = [
        (1.0, inv_tau1, same_sub & ~eye, ~eye),
        (config.beta, inv_tau2, same_class & ~same_sub, ~eye & ~same_sub),
    ]
    total, values, gz, gzt = _run_terms(batch.anchors, batch.augmented, terms)
    return LossReport(total, gz, gzt, term_subclass=values[0], term_class=values[1])


def concentration(features, ds, alpha: float = 10.0) -> np.ndarray:
    """Per-class concentration: mean distance to the class centroid,
    damped by the log of the class count:

        phi(c) = sum_{i in class c} ||z_i - t_c|| / (n_c * log(n_c + alpha))

    t_c is the plain (not renormalized) mean of the class's features.
    """
    z = np.asarray(features, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if z.shape[0] != ds.num_samples:
        raise ValueError("features row count must match the dataset")
    phi = np.empty(ds.num_classes)
    for c in range(ds.num_classes):
        rows = z[ds.labels == c]
        center = rows.mean(axis=0)
        dist = np.linalg.norm(rows - center, axis=1).sum()
        phi[c] = dist / (rows.shape[0] * np.log(rows.shape[0] + alpha))
    return phi


def class_centroids(features, ds) -> np.ndarray:
    z = np.asarray(features, dtype=np.float64)
    centers = np.empty((ds.num_classes, z.shape[1]))
    for c in range(ds.num_classes):
        centers[c] = z[ds.labels == c].mean(axis=0)
    return centers


def dynamic_temperature(phi, tau1: float) -> np.ndarray:
    """tau2(c) = tau1 * exp(phi(c) / mean phi), strictly above tau1.

    Degenerate profiles are pinned: a collapsed mean (< 1e-12) or an
    all-equal phi vector maps every class to tau1 * e exactly; otherwise
    phi is floored at 1e-12 so zero-concentration classes still land
    strictly above tau1.
    """
    if tau1 <= 0:
        raise ValueError("tau1 must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi < 0):
        raise ValueError("phi entries must be nonnegative")
    mean = phi.mean()
    if mean < _PHI_EPS or phi.max() == phi.min():
        return np.full(phi.shape, tau1 * np.e)
    return tau1 * np.exp(np.maximum(phi, _PHI_EPS) / mean)


def build_temperature_table(features, ds, tau1: float, alpha: float = 10.0) -> TemperatureTable:
    phi = concentration(features, ds, alpha)
    return TemperatureTable(
        phi=phi,
        tau2=dynamic_temperature(phi, tau1),
        centroids=class_centroids(features, ds),
        alpha=alpha,
        tau1=tau1,
    )
