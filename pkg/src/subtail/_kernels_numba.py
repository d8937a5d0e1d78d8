"""Numba @njit implementations of the hot kernels.

Loop-level twins of `_kernels_numpy`; see that module for the contracts.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def greedy_capacity_assign(order, sims, capacity):
    n, m = sims.shape
    assigned = np.full(n, -1, dtype=np.int64)
    ptr = np.zeros(m, dtype=np.int64)
    size = np.zeros(m, dtype=np.int64)
    open_ = np.ones(m, dtype=np.bool_)
    remaining = n
    while remaining > 0:
        best_s = -np.inf
        best_i = -1
        best_c = -1
        for c in range(m):
            if not open_[c]:
                continue
            p = ptr[c]
            while p < n and assigned[order[c, p]] >= 0:
                p += 1
            ptr[c] = p
            if p >= n:
                open_[c] = False
                continue
            i = order[c, p]
            s = sims[i, c]
            if s > best_s or (s == best_s and (i < best_i or (i == best_i and c < best_c))):
                best_s = s
                best_i = i
                best_c = c
        if best_c < 0:
            break
        assigned[best_i] = best_c
        size[best_c] += 1
        remaining -= 1
        if size[best_c] >= capacity:
            open_[best_c] = False
    return assigned


@njit(cache=True, nogil=True)
def supcon_core(S, st, inv_tau, pos, den):
    n = S.shape[0]
    G = np.zeros((n, n))
    gt = np.zeros(n)
    total = 0.0
    for i in range(n):
        it = inv_tau[i]
        lt = st[i] * it
        mmax = lt
        for j in range(n):
            if den[i, j]:
                l = S[i, j] * it
                if l > mmax:
                    mmax = l
        zsum = np.exp(lt - mmax)
        npos = 1.0
        psum = lt
        for j in range(n):
            if den[i, j]:
                l = S[i, j] * it
                zsum += np.exp(l - mmax)
                if pos[i, j]:
                    npos += 1.0
                    psum += l
        lse = mmax + np.log(zsum)
        total += lse - psum / npos
        for j in range(n):
            if den[i, j]:
                l = S[i, j] * it
                w = np.exp(l - lse)
                p = 1.0 if pos[i, j] else 0.0
                G[i, j] = it * (w - p / npos)
        gt[i] = it * (np.exp(lt - lse) - 1.0 / npos)
    return total, G, gt
