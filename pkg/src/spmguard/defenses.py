"""Topological defenses that turn a communication graph into the attacker's
reachability graph (ARG), each returning an auditable, replayable plan."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .communities import Partition, boundary, detect_communities
from .graph import EmptyGraphError, Graph
from .spectral import ConvergenceError, centrality, component_spectra

STRATEGIES = ("None", "NodeSplit", "MET", "RandE", "Degree", "ENS", "NB", "RandN",
              "CIEdge", "CINode")
_ALIASES = {s.lower(): s for s in STRATEGIES}
_ALIASES.update({"ci-edge": "CIEdge", "ci_edge": "CIEdge", "ci-node": "CINode",
                 "ci_node": "CINode", "nodefense": "None", "none": "None",
                 "split": "NodeSplit", "node-split": "NodeSplit"})


class DefenseError(ValueError):
    pass


@dataclass(frozen=True)
class RemoveNode:
    node: int

    def to_json(self):
        return {"op": "remove_node", "node": self.node}


@dataclass(frozen=True)
class RemoveEdge:
    i: int
    j: int

    def to_json(self):
        return {"op": "remove_edge", "i": self.i, "j": self.j}


@dataclass(frozen=True)
class SplitNode:
    old: int
    new: int
    moved: tuple
    dropped: tuple = ()

    def to_json(self):
        return {"op": "split_node", "old": self.old, "new": self.new,
                "moved": list(self.moved), "dropped": list(self.dropped)}


def edit_from_json(obj):
    op = obj["op"]
    if op == "remove_node":
        return RemoveNode(int(obj["node"]))
    if op == "remove_edge":
        return RemoveEdge(int(obj["i"]), int(obj["j"]))
    if op == "split_node":
        return SplitNode(int(obj["old"]), int(obj["new"]),
                         tuple(int(u) for u in obj["moved"]),
                         tuple(int(u) for u in obj.get("dropped", ())))
    raise DefenseError(f"unknown edit op {op!r}")


@dataclass
class DefensePlan:
    strategy: str
    edits: list = field(default_factory=list)
    budget_spent: dict = field(default_factory=lambda: {"nodes": 0, "edges": 0, "splits": 0})
    notes: dict = field(default_factory=dict)

    def count(self, edit):
        key = {RemoveNode: "nodes", RemoveEdge: "edges", SplitNode: "splits"}[type(edit)]
        self.budget_spent[key] += 1
        self.edits.append(edit)

    def to_jsonl(self) -> str:
        head = {"op": "plan", "strategy": self.strategy, "budget_spent": self.budget_spent,
                "notes": self.notes}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(e.to_json()) for e in self.edits]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "DefensePlan":
        plan = cls("unknown")
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["op"] == "plan":
                plan.strategy = obj["strategy"]
                plan.budget_spent = dict(obj["budget_spent"])
                plan.notes = dict(obj.get("notes", {}))
            else:
                plan.edits.append(edit_from_json(obj))
        return plan


@dataclass(frozen=True)
class Budget:
    """Node budget ``nodes`` and edge budget ``edges``: an int is a count, a
    float in [0, 1] a fraction of the current edge count (floored)."""

    nodes: int = 0
    edges: int | float | None = None

    def resolve_edges(self, m: int) -> int:
        return resolve_edge_budget(self.edges, m)


def resolve_edge_budget(edges, m: int) -> int:
    if edges is None:
        return 0
    if isinstance(edges, (float, np.floating)):
        if not 0.0 <= edges <= 1.0:
            raise DefenseError(f"edge fraction {edges} outside [0, 1]")
        return int(math.floor(edges * m))
    b = int(edges)
    if b < 0:
        raise DefenseError("edge budget must be non-negative")
    return b


class _Editor:
    """Mutable adjacency used while building an ARG."""

    def __init__(self, g: Graph):
        self.adj = [set(g.neighbors(i).tolist()) for i in range(g.n_nodes)]
        self.removed = g.removed.tolist()
        self.labels = None if g.labels is None else g.labels.tolist()

    @property
    def n(self):
        return len(self.adj)

    def remove_edge(self, i, j):
        if j not in self.adj[i]:
            raise DefenseError(f"edge ({i}, {j}) not present")
        self.adj[i].discard(j)
        self.adj[j].discard(i)

    def remove_node(self, v):
        if not 0 <= v < self.n or self.removed[v]:
            raise DefenseError(f"node {v} missing or already removed")
        for u in self.adj[v]:
            self.adj[u].discard(v)
        self.adj[v] = set()
        self.removed[v] = True

    def add_node(self):
        self.adj.append(set())
        self.removed.append(False)
        if self.labels is not None:
            self.labels.append(-1)
        return self.n - 1

    def split(self, old, moved, new=None):
        if new is None:
            new = self.add_node()
        elif new != self.n:
            raise DefenseError(f"split target {new} is not the next free id {self.n}")
        else:
            self.add_node()
        dropped = []
        for u in moved:
            self.remove_edge(old, u)
            if u in self.adj[new] or u == new:
                dropped.append(u)
            else:
                self.adj[new].add(u)
                self.adj[u].add(new)
        return new, dropped

    def freeze(self) -> Graph:
        pairs = [(i, j) for i, nb in enumerate(self.adj) for j in nb if i < j]
        edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        labels = None if self.labels is None else np.array(self.labels, dtype=np.int64)
        return Graph.from_edges(self.n, edges, np.array(self.removed, dtype=bool), labels)


def apply_plan(g: Graph, plan: DefensePlan) -> Graph:
    """Replay ``plan`` on ``g``; reproduces the ARG the defense returned."""
    ed = _Editor(g)
    for e in plan.edits:
        if isinstance(e, RemoveNode):
            ed.remove_node(e.node)
        elif isinstance(e, RemoveEdge):
            ed.remove_edge(e.i, e.j)
        elif isinstance(e, SplitNode):
            new, _ = ed.split(e.old, e.moved + e.dropped, e.new)
        else:
            raise DefenseError(f"unknown edit {e!r}")
    return ed.freeze()


def node_split(g: Graph, k: int, seed: int = 0):
    """Split the current top-degree node k times.

    Each split moves ceil(d/2) of the node's edges, chosen uniformly at
    random, to a fresh node. Ties on degree go to the lowest id.
    """
    if k < 0:
        raise DefenseError("split count must be non-negative")
    if k >= 1 and g.n_active == 0:
        raise EmptyGraphError("cannot split nodes of an empty graph")
    rng = np.random.default_rng(seed)
    ed = _Editor(g)
    plan = DefensePlan("NodeSplit")
    deg = [len(a) for a in ed.adj]
    dropped_total = 0
    for _ in range(k):
        masked = np.where(np.array(ed.removed), -1, np.array(deg))
        v = int(np.argmax(masked))
        nb = sorted(ed.adj[v])
        take = math.ceil(len(nb) / 2)
        pick = np.sort(rng.choice(len(nb), size=take, replace=False)) if take else []
        moved = [nb[i] for i in pick]
        new, dropped = ed.split(v, moved)
        deg[v] -= take
        deg.append(take - len(dropped))
        dropped_total += len(dropped)
        kept = tuple(u for u in moved if u not in dropped)
        plan.count(SplitNode(v, new, kept, tuple(dropped)))
    plan.notes["dropped_edges"] = dropped_total
    return ed.freeze(), plan


def _edge_half_positions(g: Graph):
    """Forward and reverse half-edge positions for each edge of edge_array()."""
    n = g.n_nodes
    rows = np.repeat(np.arange(n, dtype=np.int64), g.degrees)
    fwd = np.flatnonzero(rows < g.indices)
    i, j = rows[fwd], g.indices[fwd]
    rev = np.searchsorted(rows * n + g.indices, j * n + i)
    return fwd, rev, np.column_stack([i, j])


def met_harden(g: Graph, budget, track: int = 3, batch: int | None = None,
               tol: float = 1e-10, max_iter: int = 10_000):
    """Greedy eigen-score edge removal with multiple-eigenvalue tracking.

    Every round removes the ``batch`` edges with the highest score, then
    recomputes the spectrum. The score of an edge is the maximum of
    v(i)*v(j) over the tracked leading eigenvectors, i.e. those (up to
    ``track``) whose eigenvalues tie the largest within relative 1e-8.
    """
    m = g.n_edges
    b = resolve_edge_budget(budget.edges if isinstance(budget, Budget) else budget, m)
    if b > m:
        raise DefenseError(f"edge budget {b} exceeds edge count {m}")
    if batch is None:
        batch = 1 if m <= 50_000 else max(1, math.ceil(b / 20))
    fwd, rev, edges = _edge_half_positions(g)
    data = np.ones(g.indices.shape[0])
    alive = np.ones(m, dtype=bool)
    plan = DefensePlan("MET")
    order_key = np.arange(m)
    x0 = None
    rounds = 0
    degenerate_rounds = 0
    while plan.budget_spent["edges"] < b:
        pairs, _, ok = component_spectra(g.indptr, g.indices, data, tol, max_iter, x0)
        if not ok:
            raise ConvergenceError("MET eigenpair did not converge", pairs[0])
        tracked = pairs[:track]
        if len(tracked) > 1:
            degenerate_rounds += 1
        score = np.max([v[edges[:, 0]] * v[edges[:, 1]] for _, v in tracked], axis=0)
        score[~alive] = -np.inf
        take = min(batch, b - plan.budget_spent["edges"])
        chosen = np.lexsort((order_key, -score))[:take]
        for e in chosen:
            alive[e] = False
            data[fwd[e]] = 0.0
            data[rev[e]] = 0.0
            plan.count(RemoveEdge(int(edges[e, 0]), int(edges[e, 1])))
        x0 = pairs[0][1]
        rounds += 1
    plan.notes.update({"rounds": rounds, "batch": batch, "track": track,
                       "degenerate_rounds": degenerate_rounds})
    arg = Graph.from_edges(g.n_nodes, edges[alive], g.removed.copy(), g.labels)
    return arg, plan


def rand_edge_harden(g: Graph, budget, seed: int = 0):
    m = g.n_edges
    b = resolve_edge_budget(budget.edges if isinstance(budget, Budget) else budget, m)
    if b > m:
        raise DefenseError(f"edge budget {b} exceeds edge count {m}")
    rng = np.random.default_rng(seed)
    edges = g.edge_array()
    pick = rng.choice(m, size=b, replace=False) if b else np.empty(0, dtype=np.int64)
    plan = DefensePlan("RandE")
    for e in pick:
        plan.count(RemoveEdge(int(edges[e, 0]), int(edges[e, 1])))
    keep = np.ones(m, dtype=bool)
    keep[pick] = False
    return Graph.from_edges(g.n_nodes, edges[keep], g.removed.copy(), g.labels), plan


def _harden_nodes(g: Graph, nodes, plan):
    for v in nodes:
        plan.count(RemoveNode(int(v)))
    return g.without_nodes(np.asarray(nodes, dtype=np.int64)) if len(nodes) else g


def node_harden(g: Graph, strategy: str, k: int, seed: int = 0):
    """Remove k nodes ranked once by a static centrality (ties: lowest id),
    or uniformly at random for RandN."""
    strategy = canonical_strategy(strategy)
    alive = np.flatnonzero(g.alive)
    if k < 0 or k > alive.shape[0]:
        raise DefenseError(f"node budget {k} outside 0..{alive.shape[0]}")
    plan = DefensePlan(strategy)
    if strategy == "RandN":
        rng = np.random.default_rng(seed)
        chosen = rng.choice(alive, size=k, replace=False) if k else []
    elif strategy in ("Degree", "ENS", "NB"):
        scores = centrality(g, strategy).scores[alive]
        chosen = alive[np.lexsort((alive, -scores))[:k]]
    else:
        raise DefenseError(f"{strategy} is not a node-hardening strategy")
    return _harden_nodes(g, list(chosen), plan), plan


def ci_edge(g: Graph, p: Partition):
    """Secure every edge that crosses a community border."""
    edges, _ = boundary(g, p)
    plan = DefensePlan("CIEdge")
    for i, j in edges:
        plan.count(RemoveEdge(int(i), int(j)))
    plan.notes.update({"n_communities": p.n_communities, "modularity": p.modularity,
                       "boundary_edges": int(edges.shape[0])})
    arg = g.without_edges(edges) if edges.shape[0] else g
    return arg, plan


def ci_node(g: Graph, p: Partition, k: int):
    """Secure the k highest-degree boundary nodes (ties: lowest id).

    Boundary membership is computed once on the input partition; a budget
    larger than the boundary is clamped and the shortfall recorded.
    """
    if k < 0:
        raise DefenseError("node budget must be non-negative")
    _, nodes = boundary(g, p)
    order = nodes[np.lexsort((nodes, -g.degrees[nodes]))]
    chosen = order[:k]
    plan = DefensePlan("CINode")
    plan.notes.update({"n_communities": p.n_communities, "modularity": p.modularity,
                       "boundary_nodes": int(nodes.shape[0]),
                       "shortfall": int(max(0, k - nodes.shape[0]))})
    return _harden_nodes(g, list(chosen), plan), plan


@dataclass(frozen=True)
class DefenseSpec:
    """One defense stage; ``seed=None`` defers to the caller's seed."""

    strategy: str
    k: int = 0
    edges: int | float | None = None
    seed: int | None = None
    resolution: float = 1.0
    track: int = 3
    batch: int | None = None

    def label(self) -> str:
        parts = []
        if self.strategy in ("NodeSplit", "Degree", "ENS", "NB", "RandN", "CINode"):
            parts.append(f"k={self.k}")
        if self.strategy in ("MET", "RandE"):
            parts.append(f"edges={self.edges}")
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        if self.strategy in ("CIEdge", "CINode") and self.resolution != 1.0:
            parts.append(f"resolution={self.resolution}")
        return self.strategy + (":" + ",".join(parts) if parts else "")


def canonical_strategy(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise DefenseError(f"unknown defense {name!r}; expected one of {STRATEGIES}") from None


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_defense(text: str) -> list[DefenseSpec]:
    """Parse ``Name[:key=val,...][+Name...]``, e.g. ``NodeSplit:k=50+MET:edges=0.1``."""
    stages = []
    for chunk in text.split("+"):
        chunk = chunk.strip()
        if not chunk:
            raise DefenseError(f"empty stage in {text!r}")
        name, _, args = chunk.partition(":")
        kw = {}
        for item in filter(None, (a.strip() for a in args.split(","))):
            key, eq, val = item.partition("=")
            if not eq:
                raise DefenseError(f"expected key=value in {item!r}")
            key = key.strip()
            if key not in ("k", "edges", "seed", "resolution", "track", "batch"):
                raise DefenseError(f"unknown defense parameter {key!r}")
            kw[key] = _number(val.strip())
        if "k" in kw:
            kw["k"] = int(kw["k"])
        stages.append(DefenseSpec(canonical_strategy(name), **kw))
    return stages


def _apply_stage(g: Graph, spec: DefenseSpec, seed: int):
    s = spec.seed if spec.seed is not None else seed
    name = spec.strategy
    if name == "None":
        return g, DefensePlan("None")
    if name == "NodeSplit":
        return node_split(g, spec.k, s)
    if name == "MET":
        return met_harden(g, spec.edges, spec.track, spec.batch)
    if name == "RandE":
        return rand_edge_harden(g, spec.edges, s)
    if name in ("Degree", "ENS", "NB", "RandN"):
        return node_harden(g, name, spec.k, s)
    if name in ("CIEdge", "CINode"):
        part = detect_communities(g, spec.resolution, s)
        if name == "CIEdge":
            return ci_edge(g, part)
        return ci_node(g, part, spec.k)
    raise DefenseError(f"unknown defense {name!r}")


def hybrid(g: Graph, stages, seed: int = 0):
    """Apply stages in order, each on the previous stage's ARG, and compose
    their plans. Community detection for isolation stages runs on the
    current (e.g. post-split) graph."""
    if isinstance(stages, str):
        stages = parse_defense(stages)
    stages = list(stages)
    if not stages:
        raise DefenseError("hybrid needs at least one stage")
    plan = DefensePlan("+".join(s.strategy for s in stages))
    cur = g
    for idx, spec in enumerate(stages):
        cur, sub = _apply_stage(cur, spec, seed)
        plan.edits.extend(sub.edits)
        for key, val in sub.budget_spent.items():
            plan.budget_spent[key] += val
        for key, val in sub.notes.items():
            plan.notes[f"{idx}.{spec.strategy}.{key}"] = val
    return cur, plan


def apply_defense(g: Graph, spec, seed: int = 0):
    """Run a defense given as a spec string, a DefenseSpec or a list of them."""
    if isinstance(spec, DefenseSpec):
        spec = [spec]
    stages = parse_defense(spec) if isinstance(spec, str) else list(spec)
    if len(stages) == 1:
        return _apply_stage(g, stages[0], seed)
    return hybrid(g, stages, seed)


def with_seed(spec: DefenseSpec, seed: int) -> DefenseSpec:
    return replace(spec, seed=seed)
