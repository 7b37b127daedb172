"""Node centralities and the top-k expansion mask."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, SizeError
from .graph import Graph, degrees, shortest_path_lengths

__all__ = [
    "CentralityKind",
    "CentralityVector",
    "ExpansionMask",
    "degree_centrality",
    "betweenness_centrality",
    "closeness_centrality",
    "pagerank_centrality",
    "load_centrality",
    "compute_centrality",
    "build_mask",
]


class CentralityKind(str, enum.Enum):
    DEGREE = "degree"
    BETWEENNESS = "betweenness"
    CLOSENESS = "closeness"
    PAGERANK = "pagerank"
    LOAD = "load"

    @classmethod
    def parse(cls, value) -> "CentralityKind":
        return value if isinstance(value, cls) else cls(str(value).lower())


# enum order doubles as the grid-search tie-break order
KIND_ORDER = {k: i for i, k in enumerate(CentralityKind)}


@dataclass(frozen=True, eq=False)
class CentralityVector:
    values: np.ndarray
    kind: CentralityKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("centrality values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ExpansionMask:
    bits: np.ndarray
    k: int
    expanded_ids: tuple[int, ...]

    @classmethod
    def from_ids(cls, num_nodes: int, ids, k: int | None = None) -> "ExpansionMask":
        ids = tuple(sorted(int(i) for i in ids))
        bits = np.zeros(num_nodes, dtype=np.int8)
        bits[list(ids)] = 1
        bits.setflags(write=False)
        return cls(bits, len(ids) if k is None else k, ids)

    @classmethod
    def empty(cls, num_nodes: int) -> "ExpansionMask":
        return cls.from_ids(num_nodes, (), 0)

    @property
    def num_nodes(self) -> int:
        return len(self.bits)


def degree_centrality(graph: Graph) -> CentralityVector:
    n = graph.num_nodes
    if n < 2:
        raise SizeError(f"degree centrality needs at least 2 nodes, got {n}")
    return CentralityVector(degrees(graph) / (n - 1), CentralityKind.DEGREE)


def _bfs_dag(graph: Graph, s: int):
    """BFS from ``s``: visit order, predecessor lists and path counts."""
    n = graph.num_nodes
    dist = np.full(n, -1, dtype=np.int64)
    sigma = np.zeros(n)
    preds: list[list[int]] = [[] for _ in range(n)]
    order = []
    dist[s] = 0
    sigma[s] = 1.0
    queue = deque([s])
    while queue:
        v = queue.popleft()
        order.append(v)
        for w in graph.neighbors(v):
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
            if dist[w] == dist[v] + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, preds, sigma


def _pair_scale(n: int) -> float:
    # undirected: each unordered pair is accumulated twice below
    return 1.0 / ((n - 1) * (n - 2))


def betweenness_centrality(graph: Graph) -> CentralityVector:
    """Brandes' dependency accumulation, endpoints excluded, normalized."""
    n = graph.num_nodes
    bc = np.zeros(n)
    if n <= 2:
        return CentralityVector(bc, CentralityKind.BETWEENNESS)
    for s in range(n):
        order, preds, sigma = _bfs_dag(graph, s)
        delta = np.zeros(n)
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                bc[w] += delta[w]
    return CentralityVector(bc * _pair_scale(n), CentralityKind.BETWEENNESS)


def load_centrality(graph: Graph) -> CentralityVector:
    """Goh et al. load: packets split equally over shortest-path predecessors."""
    n = graph.num_nodes
    load = np.zeros(n)
    if n <= 2:
        return CentralityVector(load, CentralityKind.LOAD)
    for s in range(n):
        order, preds, _ = _bfs_dag(graph, s)
        carried = np.zeros(n)
        carried[order] = 1.0
        for w in reversed(order):
            if w == s:
                continue
            share = carried[w] / len(preds[w])
            for v in preds[w]:
                carried[v] += share
        # drop the packet each node sends to or receives for itself
        reached = np.array(order[1:], dtype=np.int64)
        load[reached] += carried[reached] - 1.0
    return CentralityVector(load * _pair_scale(n), CentralityKind.LOAD)


def closeness_centrality(graph: Graph) -> CentralityVector:
    """Component-scaled closeness: (r / (n-1)) * (r / total distance)."""
    n = graph.num_nodes
    out = np.zeros(n)
    if n < 2:
        return CentralityVector(out, CentralityKind.CLOSENESS)
    for v in range(n):
        d = shortest_path_lengths(graph, v)
        finite = d[np.isfinite(d)]
        r = len(finite) - 1
        total = finite.sum()
        if r > 0 and total > 0:
            out[v] = (r / (n - 1)) * (r / total)
    return CentralityVector(out, CentralityKind.CLOSENESS)


def pagerank_centrality(
    graph: Graph, damping: float = 0.85, tol: float = 1e-9, max_iter: int = 1000
) -> CentralityVector:
    """Power iteration with uniform teleport and uniform dangling redistribution."""
    n = graph.num_nodes
    if n == 0:
        return CentralityVector(np.zeros(0), CentralityKind.PAGERANK)
    deg = degrees(graph).astype(np.float64)
    dangling = deg == 0
    src, dst = graph.directed_edges()
    weight = 1.0 / deg[src] if len(src) else np.zeros(0)
    x = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iter):
        flow = np.bincount(dst, weights=x[src] * weight, minlength=n)
        x_new = damping * (flow + x[dangling].sum() / n) + (1.0 - damping) / n
        residual = np.abs(x_new - x).sum()
        x = x_new
        if residual < tol:
            return CentralityVector(x / x.sum(), CentralityKind.PAGERANK)
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations", residual)


_DISPATCH = {
    CentralityKind.DEGREE: degree_centrality,
    CentralityKind.BETWEENNESS: betweenness_centrality,
    CentralityKind.CLOSENESS: closeness_centrality,
    CentralityKind.PAGERANK: pagerank_centrality,
    CentralityKind.LOAD: load_centrality,
}


def compute_centrality(graph: Graph, kind) -> CentralityVector:
    kind = CentralityKind.parse(kind)
    if kind is CentralityKind.DEGREE and graph.num_nodes < 2:
        # a lone node is trivially the most central; keeps masks defined
        return CentralityVector(np.ones(graph.num_nodes), kind)
    return _DISPATCH[kind](graph)


def build_mask(c, k: int) -> ExpansionMask:
    """Mark the ``k`` most central nodes; ties go to the lower node index."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    values = np.asarray(c.values if isinstance(c, CentralityVector) else c, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    return ExpansionMask.from_ids(len(values), order[: min(k, len(values))], k)
