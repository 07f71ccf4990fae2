"""Leading eigenpairs, eigen-scores, EigenDrop and node centralities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .graph import Graph, EmptyGraphError

DEGENERACY_TOL = 1e-8


class ConvergenceError(RuntimeError):
    """Power iteration hit max_iter; ``best`` holds the last estimate."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class StaleEigenPairError(ValueError):
    pass


class NBCentralityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenPair:
    lambda1: float
    vector: np.ndarray
    iterations: int = 0
    converged: bool = True
    degenerate: bool = False
    graph_digest: str | None = None


@dataclass(frozen=True, eq=False)
class CentralityVector:
    kind: str
    scores: np.ndarray


def _rows(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1, dtype=np.int64), np.diff(indptr))


def _power_iteration(indptr, indices, data, x, shift, tol, max_iter):
    """Shifted power iteration; returns (rayleigh quotient, unit vector,
    iterations, converged). The shift keeps bipartite components from
    oscillating between +lambda1 and -lambda1.

    Converged means successive Rayleigh quotients agree to ``tol``. Once
    they do, iteration continues (within ``max_iter``) until the residual
    |Ax - lam x| also drops below 1e-3 sqrt(tol) lam, since the quotient
    settles quadratically faster than the vector.
    """
    x = x / np.linalg.norm(x)
    lam_prev = math.nan
    lam = 0.0
    settled = False
    vec_tol = 1e-3 * math.sqrt(tol)
    for it in range(1, max_iter + 1):
        y = K.csr_matvec(indptr, indices, data, x)
        lam = float(x @ y)
        resid = float(np.linalg.norm(y - lam * x))
        y += shift * x
        x = y / np.linalg.norm(y)
        if it > 1 and abs(lam - lam_prev) < tol * abs(lam):
            settled = True
        if settled and resid <= vec_tol * abs(lam):
            return lam, x, it, True
        lam_prev = lam
    return lam, x, max_iter, settled


def component_spectra(indptr, indices, data=None, tol=1e-10, max_iter=10_000,
                      x0=None, tie_tol=DEGENERACY_TOL):
    """Leading eigenvalue of the components that attain the graph maximum.

    Components are visited in decreasing order of an upper bound on their
    spectral radius and skipped once the bound falls below the best value
    found. Returns ``(pairs, iterations, converged)`` where ``pairs`` is a
    list of ``(lambda, full-length unit vector)`` for every component within
    relative ``tie_tol`` of the maximum, best first.
    """
    n = indptr.shape[0] - 1
    if data is None:
        data = np.ones(indices.shape[0])
    labels = K.connected_components(indptr, indices, data)
    rows = _rows(indptr)
    deg = np.bincount(rows, weights=data, minlength=n)
    n_comp = int(labels.max()) + 1
    size = np.bincount(labels, minlength=n_comp)
    two_m = np.bincount(labels, weights=deg, minlength=n_comp)
    dmax = np.zeros(n_comp)
    np.maximum.at(dmax, labels, deg)
    upper = np.minimum(dmax, np.sqrt(np.maximum(two_m - size + 1, 0.0)))
    lower = np.maximum(two_m / size, np.sqrt(dmax))
    order = np.lexsort((np.arange(n_comp), -upper))

    found = []
    total_iter = 0
    all_converged = True
    best = -1.0
    for c in order:
        if best >= 0 and upper[c] < best * (1.0 - tie_tol) - 1e-12:
            break
        nodes = np.flatnonzero(labels == c)
        vec = np.zeros(n)
        if nodes.shape[0] == 1:
            lam = 0.0
            vec[nodes[0]] = 1.0
        else:
            keep = (labels[rows] == c) & (data != 0)
            new_id = np.full(n, -1, dtype=np.int64)
            new_id[nodes] = np.arange(nodes.shape[0])
            sub_ptr = np.zeros(nodes.shape[0] + 1, dtype=np.int64)
            np.cumsum(np.bincount(new_id[rows[keep]], minlength=nodes.shape[0]), out=sub_ptr[1:])
            sub_idx = new_id[indices[keep]]
            sub_data = data[keep].astype(np.float64)
            start = None
            if x0 is not None:
                start = np.abs(np.asarray(x0, dtype=np.float64)[nodes])
                if not start.any():
                    start = None
            if start is None:
                start = deg[nodes].astype(np.float64)
            lam, x, it, ok = _power_iteration(sub_ptr, sub_idx, sub_data, start,
                                              0.5 * lower[c], tol, max_iter)
            total_iter += it
            all_converged &= ok
            vec[nodes] = np.abs(x)
        found.append((lam, vec))
        best = max(best, lam)
    found.sort(key=lambda p: -p[0])
    top = found[0][0]
    pairs = [p for p in found if p[0] >= top * (1.0 - tie_tol) - 1e-12]
    return pairs, total_iter, all_converged


def leading_eigenpair(g: Graph, tol: float = 1e-10, max_iter: int = 10_000,
                      x0=None) -> EigenPair:
    """Largest adjacency eigenvalue and its unit eigenvector.

    The vector is supported on the component attaining lambda1 and is zero
    elsewhere. ``degenerate`` is set when another component ties within
    relative 1e-8. ``x0`` warm-starts the iteration.
    """
    if g.n_nodes < 1:
        raise EmptyGraphError("eigenpair of an empty graph")
    pairs, iters, ok = component_spectra(g.indptr, g.indices, None, tol, max_iter, x0)
    lam, vec = pairs[0]
    pair = EigenPair(lam, vec, iters, ok, len(pairs) > 1, g.digest())
    if not ok:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", pair)
    return pair


def spectral_radius(g: Graph, **kw) -> float:
    return leading_eigenpair(g, **kw).lambda1


def eigen_drop(lambda_before: float, lambda_after: float) -> float:
    """Percentage drop of the leading eigenvalue."""
    if not lambda_before > 0:
        raise ValueError("lambda_before must be positive")
    return 100.0 * (lambda_before - lambda_after) / lambda_before


def eigen_scores(g: Graph, pair: EigenPair) -> np.ndarray:
    """Score v(i)*v(j) for every edge of ``g.edge_array()``.

    Left and right eigenvectors coincide for an undirected graph.
    """
    if pair.graph_digest is not None and pair.graph_digest != g.digest():
        raise StaleEigenPairError("eigenpair was computed on a different graph")
    e = g.edge_array()
    return pair.vector[e[:, 0]] * pair.vector[e[:, 1]]


def effective_strength(lambda1: float, beta: float, mu: float) -> float:
    if not mu > 0:
        raise ValueError("mu must be positive")
    return lambda1 * beta / mu


def _ens(g: Graph) -> np.ndarray:
    deg = g.degrees.astype(np.float64)
    tri = K.triangle_counts(g.indptr, g.indices).astype(np.float64)
    out = np.zeros(g.n_nodes)
    nz = deg > 0
    out[nz] = deg[nz] - 2.0 * tri[nz] / deg[nz]
    return out


def half_edges(indptr, indices, keep_nodes=None):
    """Directed half-edges ``(src, dst, rev)``, optionally restricted to
    edges with both endpoints in ``keep_nodes`` (a boolean mask)."""
    n = indptr.shape[0] - 1
    src = _rows(indptr)
    dst = indices.astype(np.int64)
    if keep_nodes is not None:
        sel = keep_nodes[src] & keep_nodes[dst]
        src, dst = src[sel], dst[sel]
    key = src * n + dst
    rev = np.searchsorted(key, dst * n + src)
    return src, dst, rev


def nb_centrality(g: Graph, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Non-backtracking centrality computed on the 2-core.

    Power iteration on ``B + I`` over directed half-edges, where B is the
    Hashimoto operator; a node's score sums the scores of its incoming
    half-edges. Nodes outside the 2-core score zero.
    """
    core = K.k_core_mask(g.indptr, g.indices, 2)
    src, dst, rev = half_edges(g.indptr, g.indices, core)
    if src.shape[0] == 0:
        raise NBCentralityError("2-core is empty; non-backtracking spectrum is degenerate")
    n = g.n_nodes
    x = np.full(src.shape[0], 1.0 / src.shape[0])
    rho_prev = math.nan
    for _ in range(max_iter):
        y = K.nb_matvec(src, dst, rev, x, n)
        rho = float(y.sum() / x.sum())
        y += x
        y /= y.sum()
        change = float(np.abs(y - x).sum())
        x = y
        if change < 1e-10 and abs(rho - rho_prev) < tol * max(rho, 1.0):
            break
        rho_prev = rho
    else:
        raise ConvergenceError("non-backtracking iteration did not converge", x)
    scores = np.bincount(dst, weights=x, minlength=n)
    return scores / np.linalg.norm(scores)


def centrality(g: Graph, kind: str) -> CentralityVector:
    if g.n_nodes < 1:
        raise EmptyGraphError("centrality of an empty graph")
    kind = kind.lower()
    if kind == "degree":
        scores = g.degrees.astype(np.float64)
    elif kind == "ens":
        scores = _ens(g)
    elif kind == "nb":
        scores = nb_centrality(g)
    else:
        raise ValueError(f"unknown centrality {kind!r}")
    return CentralityVector(kind, scores)


def write_node_scores(path, scores) -> None:
    """``node,score`` CSV."""
    with open(path, "w") as fh:
        fh.write("node,score\n")
        for i, s in enumerate(np.asarray(scores, dtype=np.float64)):
            fh.write(f"{i},{s!r}\n")


def write_edge_scores(path, g: Graph, scores) -> None:
    """``src,dst,score`` CSV in ``g.edge_array()`` order."""
    with open(path, "w") as fh:
        fh.write("src,dst,score\n")
        for (i, j), s in zip(g.edge_array().tolist(), np.asarray(scores, dtype=np.float64)):
            fh.write(f"{i},{j},{s!r}\n")
