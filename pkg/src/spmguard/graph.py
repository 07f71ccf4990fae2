"""Undirected communication graphs: storage, loading, k-cores, statistics
and the scale-free generator used in place of proprietary flow data."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import kernels as K


class GraphError(ValueError):
    pass


class EdgeListError(GraphError):
    """Malformed edge-list line."""

    def __init__(self, path, lineno, line, reason):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line!r}")


class EmptyGraphError(GraphError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph in CSR form with sorted neighbor lists.

    ``removed`` marks hardened nodes. They keep their slot (so node ids and
    the graph size N stay comparable before and after a defense) but carry
    no edges. ``labels`` maps dense ids back to source ids when known.
    """

    indptr: np.ndarray
    indices: np.ndarray
    removed: np.ndarray
    labels: np.ndarray | None = None

    @classmethod
    def from_edges(cls, n, edges, removed=None, labels=None) -> "Graph":
        n = int(n)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        if e.shape[0]:
            e = np.unique(e, axis=0)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((cols, rows))
        indices = cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        if removed is None:
            removed = np.zeros(n, dtype=bool)
        g = cls(indptr, indices, np.asarray(removed, dtype=bool), labels)
        g.validate()
        return g

    @classmethod
    def empty(cls, n=0) -> "Graph":
        return cls.from_edges(n, np.empty((0, 2), dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    @property
    def n_active(self) -> int:
        return int(self.n_nodes - self.removed.sum())

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def alive(self) -> np.ndarray:
        return ~self.removed

    def neighbors(self, i) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edge_array(self) -> np.ndarray:
        """Edges as an (M, 2) array with i < j, in lexicographic order."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def has_edge(self, i, j) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < nb.shape[0] and nb[k] == j)

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(np.int64(self.n_nodes).tobytes())
        h.update(self.indptr.astype(np.int64).tobytes())
        h.update(self.indices.astype(np.int64).tobytes())
        h.update(np.packbits(self.removed).tobytes())
        return h.hexdigest()

    def validate(self) -> None:
        n = self.n_nodes
        ip, ix = self.indptr, self.indices
        if ip[0] != 0 or ip[-1] != ix.shape[0] or np.any(np.diff(ip) < 0):
            raise GraphError("corrupt indptr")
        if ix.shape[0] % 2:
            raise GraphError("odd half-edge count")
        if self.removed.shape != (n,):
            raise GraphError("removed mask has wrong shape")
        if self.labels is not None and len(self.labels) != n:
            raise GraphError("label map has wrong length")
        if ix.shape[0] == 0:
            return
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(ip))
        if np.any(rows == ix):
            raise GraphError("self-loop present")
        same_row = rows[1:] == rows[:-1]
        if np.any(ix[1:][same_row] <= ix[:-1][same_row]):
            raise GraphError("neighbor lists not strictly increasing")
        fwd = rows * n + ix
        back = np.sort(ix * n + rows)
        if not np.array_equal(fwd, back):
            raise GraphError("adjacency not symmetric")
        if np.any(self.removed[rows]):
            raise GraphError("removed node still has edges")

    def without_edges(self, pairs) -> "Graph":
        """Copy with the given (i, j) edges removed; missing edges raise."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        e = self.edge_array()
        n = self.n_nodes
        key = e[:, 0] * n + e[:, 1]
        drop = pairs[:, 0] * n + pairs[:, 1]
        if not np.all(np.isin(drop, key)):
            raise GraphError("removing an edge that is not present")
        keep = ~np.isin(key, drop)
        return Graph.from_edges(n, e[keep], self.removed.copy(), self.labels)

    def without_nodes(self, nodes) -> "Graph":
        """Copy where ``nodes`` are hardened: incident edges dropped, slot kept."""
        nodes = np.asarray(nodes, dtype=np.int64)
        removed = self.removed.copy()
        removed[nodes] = True
        e = self.edge_array()
        keep = ~(removed[e[:, 0]] | removed[e[:, 1]])
        return Graph.from_edges(self.n_nodes, e[keep], removed, self.labels)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        e = self.edge_array()
        a[e[:, 0], e[:, 1]] = 1.0
        a[e[:, 1], e[:, 0]] = 1.0
        return a


def load_edge_list(path) -> Graph:
    """Read whitespace-separated ``src dst`` integer pairs.

    Lines starting with ``#`` and blank lines are skipped. Ids are compacted
    to 0..N-1 in increasing order of the source id; ``Graph.labels`` holds
    the source id of every dense node.
    """
    path = Path(path)
    src, dst = [], []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise EdgeListError(path, lineno, line, "expected two node ids")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListError(path, lineno, line, "node ids must be integers") from None
            src.append(a)
            dst.append(b)
    if not src:
        raise EmptyGraphError(f"{path}: no edges")
    ends = np.array([src, dst], dtype=np.int64)
    labels, inverse = np.unique(ends, return_inverse=True)
    inverse = inverse.reshape(2, -1)
    return Graph.from_edges(labels.shape[0], inverse.T, labels=labels)


def write_edge_list(path, g: Graph, use_labels=False) -> None:
    e = g.edge_array()
    if use_labels and g.labels is not None:
        e = g.labels[e]
    with open(path, "w") as fh:
        for i, j in e:
            fh.write(f"{i} {j}\n")


def write_id_map(path, g: Graph) -> None:
    """Two-column sidecar: ``dense_id source_id``."""
    labels = g.labels if g.labels is not None else np.arange(g.n_nodes)
    with open(path, "w") as fh:
        fh.write("# dense_id source_id\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i} {lab}\n")


def read_id_map(path) -> np.ndarray:
    rows = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=2)
    out = np.empty(rows.shape[0], dtype=np.int64)
    out[rows[:, 0]] = rows[:, 1]
    return out


def k_core(g: Graph, k: int) -> Graph:
    """Maximal subgraph with minimum degree >= k, with ids compacted."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = K.k_core_mask(g.indptr, g.indices, int(k))
    return induced_subgraph(g, np.flatnonzero(keep))


def induced_subgraph(g: Graph, nodes) -> Graph:
    nodes = np.asarray(nodes, dtype=np.int64)
    new_id = np.full(g.n_nodes, -1, dtype=np.int64)
    new_id[nodes] = np.arange(nodes.shape[0])
    e = g.edge_array()
    e = new_id[e]
    e = e[(e >= 0).all(axis=1)]
    base = g.labels if g.labels is not None else np.arange(g.n_nodes)
    return Graph.from_edges(nodes.shape[0], e, g.removed[nodes], base[nodes])


def component_labels(g: Graph) -> np.ndarray:
    return K.connected_components(g.indptr, g.indices, np.ones(g.indices.shape[0]))


def largest_cc_fraction(g: Graph) -> float:
    """Fragmentation sigma: largest component size over the graph size N.

    N counts every node slot, hardened ones included, so sigma is measured
    against the size of the graph the defense started from.
    """
    if g.n_nodes < 1:
        raise EmptyGraphError("sigma undefined on an empty graph")
    sizes = np.bincount(component_labels(g))
    return float(sizes.max() / g.n_nodes)


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_edges: int
    mean_degree: float
    density: float
    diameter: int
    avg_distance: float
    global_transitivity: float
    avg_local_transitivity: float
    distances_estimated: bool = False
    largest_component_only: bool = False

    CSV_COLUMNS = (
        "port_label", "n_nodes", "n_edges", "mean_degree", "density",
        "diameter", "avg_dist", "trans_global", "trans_local",
    )

    def csv_row(self, port_label="") -> list:
        return [
            port_label, self.n_nodes, self.n_edges, f"{self.mean_degree:.6g}",
            f"{self.density:.6g}", self.diameter, f"{self.avg_distance:.6g}",
            f"{self.global_transitivity:.6g}", f"{self.avg_local_transitivity:.6g}",
        ]

    def to_dict(self) -> dict:
        return asdict(self)


def compute_stats(g: Graph, distance_sample: int = 2000, seed: int = 0) -> GraphStats:
    """Table-style topology summary over the non-hardened nodes.

    Distances come from the largest connected component; they are exact
    (all-pairs BFS) when that component has at most ``distance_sample``
    nodes and otherwise estimated from BFS trees of that many random
    sources, in which case the diameter is a lower bound.
    """
    n = g.n_active
    if n < 1:
        raise EmptyGraphError("statistics need a nonempty graph")
    m = g.n_edges
    deg = g.degrees
    alive = g.alive
    density = 2.0 * m / (n * (n - 1)) if n > 1 else 0.0

    tri = K.triangle_counts(g.indptr, g.indices)
    triples = deg * (deg - 1) // 2
    total_triples = int(triples.sum())
    trans_global = float(tri.sum() / total_triples) if total_triples else 0.0
    local = np.where(triples > 0, tri / np.maximum(triples, 1), 0.0)
    trans_local = float(local[alive].mean())

    labels = component_labels(g)
    sizes = np.bincount(labels[alive])
    giant = int(np.argmax(sizes))
    members = np.flatnonzero((labels == giant) & alive)
    if members.shape[0] > distance_sample:
        rng = np.random.default_rng(seed)
        sources = np.sort(rng.choice(members, size=distance_sample, replace=False))
        estimated = True
    else:
        sources = members
        estimated = False
    dist_sum, reached, ecc = K.bfs_distance_stats(g.indptr, g.indices, sources)
    pairs = int(reached.sum())
    avg = float(dist_sum.sum() / pairs) if pairs else 0.0
    return GraphStats(
        n_nodes=n,
        n_edges=m,
        mean_degree=2.0 * m / n,
        density=density,
        diameter=int(ecc.max()) if ecc.shape[0] else 0,
        avg_distance=avg,
        global_transitivity=trans_global,
        avg_local_transitivity=trans_local,
        distances_estimated=estimated,
        largest_component_only=members.shape[0] < n,
    )


def generate_scale_free(n: int, m: int, seed: int = 0) -> Graph:
    """Preferential-attachment graph with exactly m*(n-m) edges.

    The first m nodes start unlinked; node m attaches to all of them and
    every later node draws m distinct targets with probability proportional
    to degree.
    """
    if m < 1 or n <= m:
        raise ValueError(f"need n > m >= 1, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    edges = np.empty((m * (n - m), 2), dtype=np.int64)
    pool = np.empty(2 * m * (n - m), dtype=np.int64)
    filled = 0
    targets = list(range(m))
    for k, source in enumerate(range(m, n)):
        edges[k * m:(k + 1) * m, 0] = source
        edges[k * m:(k + 1) * m, 1] = targets
        pool[filled:filled + m] = targets
        pool[filled + m:filled + 2 * m] = source
        filled += 2 * m
        if source == n - 1:
            break
        chosen: list[int] = []
        while len(chosen) < m:
            for t in pool[rng.integers(0, filled, size=m - len(chosen))]:
                if t not in chosen and len(chosen) < m:
                    chosen.append(int(t))
        targets = chosen
    return Graph.from_edges(n, edges)


def complete_graph(n: int) -> Graph:
    i, j = np.triu_indices(n, 1)
    return Graph.from_edges(n, np.column_stack([i, j]))


def cycle_graph(n: int) -> Graph:
    i = np.arange(n)
    return Graph.from_edges(n, np.column_stack([i, (i + 1) % n]))


def path_graph(n: int) -> Graph:
    i = np.arange(n - 1)
    return Graph.from_edges(n, np.column_stack([i, i + 1]))


def star_graph(leaves: int) -> Graph:
    """K_{1,leaves} with the hub at id 0."""
    j = np.arange(1, leaves + 1)
    return Graph.from_edges(leaves + 1, np.column_stack([np.zeros_like(j), j]))


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    xmin: int
    loglik_ratio: float
    p_value: float
    n_tail: int
    ks_distance: float


def _fit_alpha(tail, xmin):
    log_sum = np.log(tail).sum()
    n = tail.shape[0]

    def nll(a):
        return a * log_sum + n * math.log(special.zeta(a, xmin))

    res = optimize.minimize_scalar(nll, bounds=(1.0001, 12.0), method="bounded",
                                   options={"xatol": 1e-7})
    return float(res.x)


def power_law_fit(degrees, min_tail: int = 10) -> PowerLawFit:
    """Discrete power-law fit with xmin chosen by minimum KS distance, and a
    normalized log-likelihood ratio against a discrete exponential on the
    same tail (positive favors the power law)."""
    x = np.asarray(degrees, dtype=np.int64)
    x = x[x >= 1]
    if x.shape[0] < 50:
        raise FitError("need at least 50 positive samples")
    if x.max() == x.min():
        raise FitError("degenerate sample: all values equal")
    x = np.sort(x)
    best = None
    for xmin in np.unique(x)[:-1]:
        tail = x[x >= xmin]
        if tail.shape[0] < min_tail:
            break
        alpha = _fit_alpha(tail, xmin)
        vals, counts = np.unique(tail, return_counts=True)
        emp_cdf = np.cumsum(counts) / tail.shape[0]
        fit_cdf = 1.0 - special.zeta(alpha, vals + 1) / special.zeta(alpha, xmin)
        ks = float(np.abs(emp_cdf - fit_cdf).max())
        if best is None or ks < best[0]:
            best = (ks, int(xmin), alpha, tail)
    if best is None:
        raise FitError("no xmin leaves a usable tail")
    ks, xmin, alpha, tail = best
    n = tail.shape[0]
    lp_pl = -alpha * np.log(tail) - math.log(special.zeta(alpha, xmin))
    excess = tail.mean() - xmin
    lam = math.log1p(1.0 / excess) if excess > 0 else 50.0
    lp_exp = math.log(-math.expm1(-lam)) - lam * (tail - xmin)
    diff = lp_pl - lp_exp
    sd = diff.std()
    if sd > 0:
        ratio = float(diff.sum() / (sd * math.sqrt(n)))
        p = float(special.erfc(abs(ratio) / math.sqrt(2.0)))
    else:
        ratio, p = float(np.sign(diff.sum())), 1.0
    return PowerLawFit(alpha=alpha, xmin=xmin, loglik_ratio=ratio, p_value=p,
                       n_tail=n, ks_distance=ks)
