"""Convert TU-format benchmark folders into the JSONL dataset format.

A TU dataset ``NAME`` is a directory with plain-text files:

``NAME_A.txt``
    one ``row, col`` edge per line, 1-based global node ids
``NAME_graph_indicator.txt``
    graph id (1-based) of every node, one per line
``NAME_graph_labels.txt``
    one integer label per graph
``NAME_node_labels.txt`` (optional)
    one integer node label per node, one-hot encoded into features

Each output line is a JSON object::

    {"num_nodes": n, "edges": [[u, v], ...], "node_feat": [[...], ...], "label": c}

with 0-based node ids local to the graph and labels remapped to
``0..C-1`` in sorted order of the original values. Graphs without node
labels get a single constant feature.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SchemaError
from .graph import Graph, GraphSample, as_features, save_dataset

__all__ = ["read_tu", "tu_to_jsonl"]


def _ints(path: Path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, delimiter=",", ndmin=2)


def read_tu(directory, name: str) -> list[GraphSample]:
    root = Path(directory)
    edges = _ints(root / f"{name}_A.txt") - 1
    indicator = _ints(root / f"{name}_graph_indicator.txt")[:, 0] - 1
    raw_labels = _ints(root / f"{name}_graph_labels.txt")[:, 0]
    num_graphs = int(indicator.max()) + 1 if len(indicator) else 0
    if len(raw_labels) != num_graphs:
        raise SchemaError(f"{len(raw_labels)} graph labels for {num_graphs} graphs")

    node_label_file = root / f"{name}_node_labels.txt"
    if node_label_file.exists():
        node_labels = _ints(node_label_file)[:, 0]
        values = np.unique(node_labels)
        feats = (node_labels[:, None] == values[None, :]).astype(np.float64)
    else:
        feats = np.ones((len(indicator), 1))

    classes = {v: i for i, v in enumerate(np.unique(raw_labels).tolist())}
    starts = np.searchsorted(indicator, np.arange(num_graphs))
    ends = np.searchsorted(indicator, np.arange(num_graphs), side="right")
    if np.any(np.diff(indicator) < 0):
        raise SchemaError("graph indicator must be sorted by graph id")
    edge_graph = indicator[edges[:, 0]]

    samples = []
    for g in range(num_graphs):
        lo, hi = int(starts[g]), int(ends[g])
        local = edges[edge_graph == g] - lo
        graph = Graph.from_edges(hi - lo, local.tolist())
        samples.append(GraphSample(graph, as_features(feats[lo:hi]), classes[int(raw_labels[g])]))
    return samples


def tu_to_jsonl(directory, name: str, out) -> int:
    """Write ``out`` and return the number of graphs converted."""
    samples = read_tu(directory, name)
    save_dataset(samples, out)
    return len(samples)
