"""The numba and numpy kernels must agree on every input."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gnp
from spmguard import kernels as K
from spmguard.kernels import numba_backend as NB, numpy_backend as NP
from spmguard.spectral import half_edges

pytestmark = pytest.mark.skipif(NB is None, reason="numba unavailable")


def same(a, b, rtol=0.0):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            same(x, y, rtol)
        return
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    if rtol and a.dtype.kind == "f":
        np.testing.assert_allclose(a, b, rtol=rtol, atol=1e-12)
    else:
        np.testing.assert_array_equal(a, b)


def test_same_kernel_names():
    for name in K.KERNELS:
        assert callable(getattr(NB, name)) and callable(getattr(NP, name))


graphs = st.builds(lambda n, p, s: gnp(n, p, s), st.integers(1, 40), st.floats(0.0, 0.5),
                   st.integers(0, 10_000))


@settings(max_examples=60)
@given(graphs, st.integers(0, 2**31))
def test_graph_kernels(g, seed):
    rng = np.random.default_rng(seed)
    data = (rng.random(g.indices.shape[0]) < 0.8).astype(np.float64)
    # keep the mask symmetric
    e = g.indices
    rows = np.repeat(np.arange(g.n_nodes), np.diff(g.indptr))
    lo = np.minimum(rows, e) * 1000 + np.maximum(rows, e)
    keep = {k: v for k, v in zip(lo.tolist(), data.tolist())}
    data = np.array([keep[k] for k in lo.tolist()])
    x = rng.random(g.n_nodes)
    same(NB.csr_matvec(g.indptr, g.indices, data, x), NP.csr_matvec(g.indptr, g.indices, data, x),
         rtol=1e-12)
    same(NB.connected_components(g.indptr, g.indices, data),
         NP.connected_components(g.indptr, g.indices, data))
    src = np.arange(g.n_nodes, dtype=np.int64)
    same(NB.bfs_distance_stats(g.indptr, g.indices, src),
         NP.bfs_distance_stats(g.indptr, g.indices, src))
    for k in range(4):
        same(NB.k_core_mask(g.indptr, g.indices, k), NP.k_core_mask(g.indptr, g.indices, k))
    same(NB.triangle_counts(g.indptr, g.indices), NP.triangle_counts(g.indptr, g.indices))


@settings(max_examples=40)
@given(graphs, st.integers(0, 2**31))
def test_nb_matvec(g, seed):
    src, dst, rev = half_edges(g.indptr, g.indices, np.ones(g.n_nodes, dtype=bool))
    x = np.random.default_rng(seed).random(src.shape[0])
    same(NB.nb_matvec(src, dst, rev, x, g.n_nodes), NP.nb_matvec(src, dst, rev, x, g.n_nodes),
         rtol=1e-12)


@settings(max_examples=60)
@given(graphs, st.integers(0, 2**31), st.booleans())
def test_epidemic_step(g, seed, sis):
    rng = np.random.default_rng(seed)
    state = rng.integers(0, 4, g.n_nodes).astype(np.int8)
    active = np.flatnonzero(state == 1)
    dormant = np.flatnonzero(state == 2)
    u_inf = rng.random(int(g.degrees[active].sum()))
    u_exit = rng.random(active.shape[0])
    u_act = rng.random(dormant.shape[0])
    args = (g.indptr, g.indices, state, active, dormant, u_inf, u_exit, u_act,
            0.3, 0.2, 0.3, 0.4, sis)
    a, b = NB.epidemic_step(*args), NP.epidemic_step(*args)
    same(a[0], b[0])
    same(np.sort(a[1]), np.sort(b[1]))


@settings(max_examples=40)
@given(st.integers(1, 80), st.integers(0, 2**31), st.booleans(),
       st.tuples(st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 1)))
def test_well_mixed_run(n, seed, sis, rates):
    u = np.random.default_rng(seed).random(20_000)
    i0 = 1 + seed % n
    args = (n, i0, u, *rates, sis, 300)
    same(NB.well_mixed_run(*args), NP.well_mixed_run(*args))


@pytest.mark.parametrize("model", [(0.5, 0.0, 0.0, 0.0, False), (0.5, 0.2, 0.0, 0.0, True),
                                   (0.5, 0.2, 0.0, 0.0, False), (0.5, 0.1, 0.4, 0.2, False)])
def test_rk4(model):
    y0 = np.array([990.0, 10.0, 0.0, 0.0])
    same(NB.rk4_integrate(y0, *model, 1000.0, 0.1, 500),
         NP.rk4_integrate(y0, *model, 1000.0, 0.1, 500), rtol=1e-12)


SCRIPT = """
import json, numpy as np
from spmguard import kernels
from spmguard.graph import generate_scale_free
from spmguard.spectral import spectral_radius
from spmguard.epidemic import simulate, SIIDRParams
from spmguard.communities import detect_communities
g = generate_scale_free(300, 3, 5)
tr = simulate(g, "SIIDR", SIIDRParams(0.2, 0.1, 0.4, 0.3), seed=9)
print(json.dumps({"backend": kernels.BACKEND, "lam": spectral_radius(g),
                  "counts": tr.counts.tolist(),
                  "q": detect_communities(g, seed=1).modularity}))
"""


def run_backend(name):
    env = dict(os.environ, SPMGUARD_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout)


def test_end_to_end_parity():
    a, b = run_backend("numba"), run_backend("numpy")
    assert (a["backend"], b["backend"]) == ("numba", "numpy")
    assert a["counts"] == b["counts"]
    assert a["lam"] == pytest.approx(b["lam"], rel=1e-9)
    assert a["q"] == pytest.approx(b["q"], abs=1e-12)


def test_bad_backend_name():
    env = dict(os.environ, SPMGUARD_BACKEND="fortran")
    res = subprocess.run([sys.executable, "-c", "import spmguard.kernels"], env=env,
                         capture_output=True, text=True)
    assert res.returncode != 0 and "SPMGUARD_BACKEND" in res.stderr
