"""Time the numba kernels against their pure-numpy fallbacks.

Both implementations of the two hot kernels (the masked contrastive core
and the greedy capacity-constrained assignment) are imported directly,
bypassing the SUBTAIL_BACKEND switch, so one process can compare them on
identical inputs. Numba is warmed up once before timing so compilation
is not billed to the kernel.

Usage:
    python benchmarks/bench_backends.py --anchors 512 --samples 20000
"""

import argparse
import time

import numpy as np

from subtail import _kernels_numpy


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def supcon_inputs(rng, n, d, num_classes):
    z = unit_rows(rng, n, d)
    zt = unit_rows(rng, n, d)
    labels = rng.integers(0, num_classes, size=n)
    S = z @ z.T
    st = np.einsum("ij,ij->i", z, zt)
    inv_tau = 1.0 / rng.uniform(0.08, 0.3, size=n)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    den = np.ones((n, n), dtype=bool)
    np.fill_diagonal(den, False)
    return S, st, inv_tau, same, den


def assign_inputs(rng, n, m):
    sims = rng.normal(size=(n, m))
    order = np.ascontiguousarray(np.argsort(-sims, axis=0, kind="stable").T)
    capacity = -(-n // m)
    return order, sims, capacity


def timeit(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--anchors", type=int, default=512, help="batch size for the contrastive core")
    ap.add_argument("--dim", type=int, default=64, help="embedding dimension")
    ap.add_argument("--classes", type=int, default=20)
    ap.add_argument("--samples", type=int, default=20000, help="points for the assignment kernel")
    ap.add_argument("--centers", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=7, help="timed repetitions, best is kept")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    try:
        from subtail import _kernels_numba
    except ImportError:
        ap.error("numba backend unavailable; install numba to compare")

    rng = np.random.default_rng(args.seed)
    core_args = supcon_inputs(rng, args.anchors, args.dim, args.classes)
    asg_args = assign_inputs(rng, args.samples, args.centers)

    # compile
    _kernels_numba.supcon_core(*supcon_inputs(rng, 8, 4, 2))
    _kernels_numba.greedy_capacity_assign(*assign_inputs(rng, 32, 4))

    loss_np, g_np, gt_np = _kernels_numpy.supcon_core(*core_args)
    loss_nb, g_nb, gt_nb = _kernels_numba.supcon_core(*core_args)
    assert abs(loss_np - loss_nb) <= 1e-9 * max(1.0, abs(loss_np))
    assert np.allclose(g_np, g_nb, atol=1e-12)
    assert np.allclose(gt_np, gt_nb, atol=1e-12)
    a_np = _kernels_numpy.greedy_capacity_assign(*asg_args)
    a_nb = _kernels_numba.greedy_capacity_assign(*asg_args)
    assert np.array_equal(a_np, a_nb)

    rows = [
        ("supcon_core", f"n={args.anchors} d={args.dim}",
         timeit(_kernels_numpy.supcon_core, core_args, args.repeats),
         timeit(_kernels_numba.supcon_core, core_args, args.repeats)),
        ("greedy_capacity_assign", f"n={args.samples} m={args.centers}",
         timeit(_kernels_numpy.greedy_capacity_assign, asg_args, args.repeats),
         timeit(_kernels_numba.greedy_capacity_assign, asg_args, args.repeats)),
    ]

    print(f"{'kernel':<24} {'size':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, size, t_np, t_nb in rows:
        print(f"{name:<24} {size:<20} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
