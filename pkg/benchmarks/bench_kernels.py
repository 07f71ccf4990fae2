"""Time each kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py --n 5000 --m 6 --repeat 5

Numba timings exclude the first (compiling) call.
"""

import argparse
import time

import numpy as np

from spmguard.graph import generate_scale_free
from spmguard.kernels import numba_backend, numpy_backend
from spmguard.spectral import half_edges


def cases(g, rng):
    n = g.n_nodes
    data = np.ones(g.indices.shape[0])
    x = rng.random(n)
    src, dst, rev = half_edges(g.indptr, g.indices, np.ones(n, dtype=bool))
    xe = rng.random(src.shape[0])
    state = rng.choice(np.arange(4, dtype=np.int8), n, p=[0.7, 0.15, 0.1, 0.05])
    active, dormant = np.flatnonzero(state == 1), np.flatnonzero(state == 2)
    u_inf = rng.random(int(g.degrees[active].sum()))
    u_exit, u_act = rng.random(active.shape[0]), rng.random(dormant.shape[0])
    u = rng.random(400_000)
    sources = rng.choice(n, min(n, 50), replace=False).astype(np.int64)
    y0 = np.array([n - 10.0, 10.0, 0.0, 0.0])
    return {
        "csr_matvec": (g.indptr, g.indices, data, x),
        "connected_components": (g.indptr, g.indices, data),
        "bfs_distance_stats": (g.indptr, g.indices, sources),
        "k_core_mask": (g.indptr, g.indices, 6),
        "triangle_counts": (g.indptr, g.indices),
        "nb_matvec": (src, dst, rev, xe, n),
        "epidemic_step": (g.indptr, g.indices, state, active, dormant, u_inf, u_exit, u_act,
                          0.11, 0.07, 0.71, 0.07, False),
        "well_mixed_run": (1000, 1, u, 0.14, 0.07, 0.75, 0.08, False, 20_000),
        "rk4_integrate": (y0, 0.3, 0.1, 0.4, 0.2, False, float(n), 0.05, 20_000),
    }


def best_of(fn, args, repeat):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        out.append(time.perf_counter() - t)
    return min(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--m", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    g = generate_scale_free(a.n, a.m, a.seed)
    work = cases(g, np.random.default_rng(a.seed))
    print(f"BA({a.n},{a.m}): {g.n_edges} edges, best of {a.repeat}")
    print(f"{'kernel':22s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, args in work.items():
        fast, slow = getattr(numba_backend, name), getattr(numpy_backend, name)
        fast(*args)  # compile
        tn, tp = best_of(fast, args, a.repeat), best_of(slow, args, a.repeat)
        print(f"{name:22s} {tn * 1e3:10.3f} {tp * 1e3:10.3f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
