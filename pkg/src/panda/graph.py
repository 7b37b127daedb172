"""Immutable CSR graphs, JSONL dataset I/O and deterministic splitting."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BoundsError, ParseError, SchemaError, ShapeError, SizeError

__all__ = [
    "Graph",
    "GraphSample",
    "ShiftMatrix",
    "as_features",
    "degrees",
    "shortest_path_lengths",
    "all_pairs_distances",
    "shift_matrix",
    "disjoint_union",
    "load_dataset",
    "save_dataset",
    "split_indices",
    "split_dataset",
    "write_split_manifest",
    "read_split_manifest",
]


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in CSR form.

    Each undirected edge is stored twice, once per direction. Column indices
    are sorted within each row, there are no duplicates and no self-loops.
    Build instances with :meth:`from_edges` unless the CSR arrays are already
    canonical.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    is_undirected: bool = True

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        if self.row_offsets.shape != (self.num_nodes + 1,):
            raise ShapeError(
                f"row_offsets has shape {self.row_offsets.shape}, "
                f"expected ({self.num_nodes + 1},)"
            )
        if self.row_offsets[-1] != len(self.col_indices):
            raise ShapeError("row_offsets[-1] does not match number of stored entries")

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Sequence[int]]) -> "Graph":
        """Symmetrize, deduplicate and strip self-loops from an edge list."""
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise SizeError("num_nodes must be non-negative")
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
            raise BoundsError(
                f"edge {tuple(int(x) for x in bad)} out of range for {num_nodes} nodes"
            )
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        if len(both):
            both = np.unique(both, axis=0)  # lexicographic: sorted rows, sorted cols
        counts = np.bincount(both[:, 0], minlength=num_nodes) if len(both) else np.zeros(num_nodes, np.int64)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        cols = both[:, 1] if len(both) else np.zeros(0, np.int64)
        return cls(num_nodes, offsets, cols)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.col_indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v] : self.row_offsets[v + 1]]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(src, dst)`` arrays with one entry per stored direction."""
        src = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        return src, self.col_indices

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(u, v)`` with ``u < v``, sorted."""
        src, dst = self.directed_edges()
        keep = src < dst
        return [(int(u), int(v)) for u, v in zip(src[keep], dst[keep])]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.col_indices))
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency().toarray()

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that old node ``v`` becomes ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return Graph.from_edges(self.num_nodes, [(perm[u], perm[v]) for u, v in self.edges()])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.row_offsets.tobytes(), self.col_indices.tobytes()))

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def as_features(data, num_nodes: int | None = None) -> np.ndarray:
    """Validate and freeze a node-feature matrix (rows = nodes)."""
    x = np.array(data, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, 0)
    if x.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {x.shape}")
    if num_nodes is not None and x.shape[0] != num_nodes:
        raise ShapeError(f"feature matrix has {x.shape[0]} rows, graph has {num_nodes} nodes")
    if not np.all(np.isfinite(x)):
        raise SchemaError("feature matrix contains non-finite entries")
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class GraphSample:
    graph: Graph
    features: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "features", as_features(self.features, self.graph.num_nodes))
        object.__setattr__(self, "label", int(self.label))


def degrees(graph: Graph, with_self_loops: bool = False) -> np.ndarray:
    d = np.diff(graph.row_offsets)
    return d + 1 if with_self_loops else d


def shortest_path_lengths(graph: Graph, source: int) -> np.ndarray:
    """BFS hop distances from ``source``; ``inf`` marks unreachable nodes."""
    if not 0 <= source < graph.num_nodes:
        raise BoundsError(f"source {source} out of range for {graph.num_nodes} nodes")
    dist = np.full(graph.num_nodes, math.inf)
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in graph.neighbors(v):
            if dist[w] == math.inf:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def all_pairs_distances(graph: Graph) -> np.ndarray:
    n = graph.num_nodes
    out = np.empty((n, n))
    for s in range(n):
        out[s] = shortest_path_lengths(graph, s)
    return out


@dataclass(frozen=True, eq=False)
class ShiftMatrix:
    """Graph shift operator ``S`` used by the sensitivity bound."""

    kind: str
    values: sp.csr_matrix

    def power(self, ell: int) -> sp.csr_matrix:
        out = sp.identity(self.values.shape[0], format="csr")
        for _ in range(ell):
            out = out @ self.values
        return out


SHIFT_KINDS = ("adjacency", "sym-normalized")


def shift_matrix(graph: Graph, kind: str = "sym-normalized", self_loops: bool | None = None) -> ShiftMatrix:
    """Build ``A`` (optionally ``A + I``) or ``D^-1/2 (A + I) D^-1/2``.

    The normalized kind always includes self-loops, with degrees counted on
    ``A + I``; for the plain adjacency kind self-loops are opt-in.
    """
    if kind not in SHIFT_KINDS:
        raise ValueError(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")
    a = graph.adjacency()
    eye = sp.identity(graph.num_nodes, format="csr")
    if kind == "adjacency":
        s = a + eye if self_loops else a
        return ShiftMatrix("adjacency+I" if self_loops else "adjacency", sp.csr_matrix(s))
    if self_loops is False:
        raise ValueError("sym-normalized shift always carries self-loops")
    inv_sqrt = 1.0 / np.sqrt(degrees(graph, with_self_loops=True))
    d = sp.diags(inv_sqrt)
    return ShiftMatrix("sym-normalized", sp.csr_matrix(d @ (a + eye) @ d))


def disjoint_union(graphs: Sequence[Graph]) -> tuple[Graph, np.ndarray]:
    """Block-diagonal union; also returns the node offset of each part."""
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum([g.num_nodes for g in graphs], out=offsets[1:])
    rows = [np.zeros(1, dtype=np.int64)]
    cols = []
    nnz = 0
    for g, off in zip(graphs, offsets[:-1]):
        rows.append(g.row_offsets[1:] + nnz)
        cols.append(g.col_indices + off)
        nnz += len(g.col_indices)
    col = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    return Graph(int(offsets[-1]), np.concatenate(rows), col), offsets


# --------------------------------------------------------------------------
# dataset I/O


def _parse_record(obj, lineno: int, width: int | None) -> GraphSample:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    missing = [k for k in ("num_nodes", "edges", "node_feat", "label") if k not in obj]
    if missing:
        raise ParseError(f"missing keys {missing}", lineno)
    n = obj["num_nodes"]
    if not isinstance(n, int) or n < 0:
        raise ParseError(f"num_nodes must be a non-negative integer, got {n!r}", lineno)
    edges = obj["edges"]
    if not isinstance(edges, list) or any(
        not isinstance(e, list) or len(e) != 2 or not all(isinstance(i, int) for i in e) for e in edges
    ):
        raise ParseError("edges must be a list of [u, v] integer pairs", lineno)
    try:
        graph = Graph.from_edges(n, edges)
    except BoundsError as exc:
        raise BoundsError(f"line {lineno}: {exc}") from None
    feat = obj["node_feat"]
    rows = len(feat) if isinstance(feat, list) else -1
    if rows != n:
        raise SchemaError(f"line {lineno}: node_feat has {rows} rows, num_nodes is {n}")
    widths = {len(r) if isinstance(r, list) else -1 for r in feat}
    if len(widths) > 1 or -1 in widths:
        raise SchemaError(f"line {lineno}: node_feat rows have inconsistent widths {sorted(widths)}")
    row_width = widths.pop() if widths else width
    if width is not None and row_width != width:
        raise SchemaError(f"line {lineno}: feature width {row_width} differs from dataset width {width}")
    try:
        x = np.array(feat, dtype=np.float64).reshape(n, row_width or 0)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"node_feat is not numeric: {exc}", lineno) from None
    label = obj["label"]
    if not isinstance(label, int) or isinstance(label, bool) or label < 0:
        raise ParseError(f"label must be a non-negative integer, got {label!r}", lineno)
    return GraphSample(graph, as_features(x), label)


def load_dataset(path, format: str = "jsonl") -> list[GraphSample]:
    """Read a JSON-lines graph-classification dataset."""
    if format != "jsonl":
        raise ValueError(f"unsupported dataset format {format!r}")
    samples: list[GraphSample] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            sample = _parse_record(obj, lineno, width)
            if sample.graph.num_nodes:
                width = sample.features.shape[1]
            samples.append(sample)
    return samples


def sample_to_record(sample: GraphSample) -> dict:
    return {
        "num_nodes": sample.graph.num_nodes,
        "edges": [list(e) for e in sample.graph.edges()],
        "node_feat": sample.features.tolist(),
        "label": sample.label,
    }


def save_dataset(samples: Iterable[GraphSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")))
            fh.write("\n")


def split_indices(num_samples: int, seed: int, fractions=(0.8, 0.1, 0.1)):
    """Shuffled index partition; val/test sizes are floored, train takes the rest."""
    if num_samples < 10:
        raise SizeError(f"need at least 10 samples to split, got {num_samples}")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    n_val = math.floor(num_samples * fractions[1])
    n_test = math.floor(num_samples * fractions[2])
    perm = np.random.default_rng(seed).permutation(num_samples)
    n_train = num_samples - n_val - n_test
    return (
        perm[:n_train].tolist(),
        perm[n_train : n_train + n_val].tolist(),
        perm[n_train + n_val :].tolist(),
    )


def split_dataset(samples: Sequence, seed: int, fractions=(0.8, 0.1, 0.1)):
    idx = split_indices(len(samples), seed, fractions)
    return tuple([samples[i] for i in part] for part in idx)


def write_split_manifest(path, splits) -> None:
    """Three lines of space-separated sample indices: train, val, test."""
    Path(path).write_text("".join(" ".join(map(str, part)) + "\n" for part in splits))


def read_split_manifest(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) != 3:
        raise ParseError(f"split manifest must have 3 lines, found {len(lines)}")
    return tuple([int(t) for t in line.split()] for line in lines)
