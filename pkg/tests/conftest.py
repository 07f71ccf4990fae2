import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from numba import njit

from spmguard.graph import Graph, complete_graph, cycle_graph, path_graph, star_graph

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def gnp(n, p, seed):
    """Erdos-Renyi G(n, p) built from numpy only (kept independent of the
    package's generators)."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.shape[0]) < p
    return Graph.from_edges(n, np.column_stack([iu[keep], ju[keep]]))


@njit(cache=True)
def jacobi_eigenvalues(a, tol=1e-13, max_sweeps=100):
    """Cyclic Jacobi rotations on a dense symmetric matrix."""
    a = a.copy()
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if off < tol * tol:
            break
        for p in range(n):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
    return np.diag(a).copy()


def oracle_lambda1(g):
    if g.n_nodes == 0 or g.n_edges == 0:
        return 0.0
    return float(jacobi_eigenvalues(g.to_dense().astype(np.float64)).max())


def set_partitions(n):
    """All partitions of range(n) as restricted growth strings."""
    def rec(i, labels, k):
        if i == n:
            yield list(labels)
            return
        for c in range(k + 1):
            labels.append(c)
            yield from rec(i + 1, labels, max(k, c + 1))
            labels.pop()
    yield from rec(0, [], 0)


def brute_modularity(g):
    """Exhaustive optimum of classic modularity (plain loops, no package code)."""
    n = g.n_nodes
    edges = [tuple(e) for e in g.edge_array().tolist()]
    m = len(edges)
    deg = [0] * n
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    best = -1.0
    for lab in set_partitions(n):
        k = max(lab) + 1
        inside = [0] * k
        tot = [0] * k
        for i, j in edges:
            if lab[i] == lab[j]:
                inside[lab[i]] += 1
        for v in range(n):
            tot[lab[v]] += deg[v]
        q = sum(inside[c] / m - (tot[c] / (2 * m)) ** 2 for c in range(k))
        best = max(best, q)
    return best


def two_triangles_bridge():
    return Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])


def small_corpus():
    """Fixed corpus of graphs with at most 8 nodes (and at least one edge)."""
    named = {
        "two_triangles_bridge": two_triangles_bridge(),
        "two_triangles": Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]),
        "k4": complete_graph(4),
        "k6": complete_graph(6),
        "c8": cycle_graph(8),
        "p7": path_graph(7),
        "star7": star_graph(7),
        "k22": Graph.from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)]),
        "barbell44": Graph.from_edges(8, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
                                          (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7),
                                          (3, 4)]),
    }
    for seed in range(40):
        n = 4 + seed % 5
        g = gnp(n, 0.25 + 0.1 * (seed % 4), seed)
        if g.n_edges:
            named[f"gnp{seed}"] = g
    return named


@pytest.fixture
def tri_bridge():
    return two_triangles_bridge()


# ---------------------------------------------------------------- acceptance report

_AC_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(num, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    num, title = mark.args
    entry = _AC_RESULTS.setdefault(num, {"title": title, "ok": True, "details": []})
    if not rep.passed:
        entry["ok"] = False
    if rep.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_AC_RESULTS):
        e = _AC_RESULTS[num]
        line = f"AC{num:<3d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
