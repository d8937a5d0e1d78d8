"""Pure-numpy implementations of the hot kernels.

Same contracts as `_kernels_numba`; selected via SUBTAIL_BACKEND=numpy or
when numba is unavailable. The greedy assignment is discrete logic and
produces bit-identical output to the numba kernel; the contrastive core
may differ in the last ulp (summation order).
"""

from __future__ import annotations

import numpy as np


def greedy_capacity_assign(order: np.ndarray, sims: np.ndarray, capacity: int) -> np.ndarray:
    """Assign samples to centers, globally most-similar pair first.

    ``order[c]`` lists sample indices by descending ``sims[:, c]`` (ties by
    ascending index). A center closes once it holds ``capacity`` samples.
    Ties across pairs break toward the lower sample index, then lower
    center index. Returns per-sample center ids, -1 if infeasible.
    """
    n, m = sims.shape
    assigned = np.full(n, -1, dtype=np.int64)
    ptr = [0] * m
    size = [0] * m
    open_ = [True] * m
    remaining = n
    while remaining > 0:
        best_s = -np.inf
        best_i = -1
        best_c = -1
        for c in range(m):
            if not open_[c]:
                continue
            p = ptr[c]
            row = order[c]
            while p < n and assigned[row[p]] >= 0:
                p += 1
            ptr[c] = p
            if p >= n:
                open_[c] = False
                continue
            i = int(row[p])
            s = sims[i, c]
            if s > best_s or (s == best_s and (i < best_i or (i == best_i and c < best_c))):
                best_s = s
                best_i = i
                best_c = c
        if best_c < 0:
            break  # infeasible: every center closed with samples left
        assigned[best_i] = best_c
        size[best_c] += 1
        remaining -= 1
        if size[best_c] >= capacity:
            open_[best_c] = False
    return assigned


def supcon_core(
    S: np.ndarray,
    st: np.ndarray,
    inv_tau: np.ndarray,
    pos: np.ndarray,
    den: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Masked log-softmax contrastive core over one batch.

    ``S[i, j] = z_i . z_j``, ``st[i] = z_i . z~_i``; ``pos``/``den`` mark each
    anchor's positive and denominator candidates among the other anchors
    (diagonal False, pos implies den). The anchor's own augmented view is
    an implicit member of both sets. Returns the summed loss, dL/dS (zero
    outside ``den``), and dL/dst.
    """
    lt = st * inv_tau
    logits = S * inv_tau[:, None]
    masked = np.where(den, logits, -np.inf)
    mmax = np.maximum(masked.max(axis=1, initial=-np.inf), lt)
    zsum = np.exp(masked - mmax[:, None]).sum(axis=1) + np.exp(lt - mmax)
    lse = mmax + np.log(zsum)
    npos = pos.sum(axis=1) + 1.0
    psum = np.where(pos, logits, 0.0).sum(axis=1) + lt
    total = float((lse - psum / npos).sum())
    W = np.exp(np.where(den, logits - lse[:, None], -np.inf))
    G = inv_tau[:, None] * (W - np.where(pos, 1.0, 0.0) / npos[:, None])
    G[~den] = 0.0
    gt = inv_tau * (np.exp(lt - lse) - 1.0 / npos)
    return total, G, gt
