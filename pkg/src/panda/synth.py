"""Synthetic graph-classification datasets with long-range labels.

Each graph gets a marked source node ``s`` and a target ``t`` at a chosen
hop distance (by default the source's eccentricity, i.e. as far away as the
graph allows). Both carry a random bit in the attribute column and the label
is the parity of the planted bits. No single node's receptive field sees both
bits unless messages travel between ``s`` and ``t``, and a mean-pooled linear
head cannot form the parity from separate halves, so the task can only be
solved by moving information across the graph. When the distance is 0 the
source and target coincide and the label is the source's own bit.

Node features are ``[is_source, attribute, 1]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import Graph, GraphSample, all_pairs_distances, save_dataset

__all__ = [
    "FAMILIES",
    "LabelRule",
    "barbell",
    "tree",
    "ring_of_cliques",
    "plant_label",
    "synth_generate",
    "generate_samples",
]

FAMILIES = ("barbell", "tree", "ring-of-cliques")


def _clique(nodes) -> list[tuple[int, int]]:
    return list(itertools.combinations(nodes, 2))


def barbell(clique: int, bridge: int) -> Graph:
    """Two ``clique``-cliques joined by a path through ``bridge`` extra nodes.

    Left clique is ``0..clique-1``, bridge nodes follow, then the right clique.
    """
    if clique < 2 or bridge < 0:
        raise ValueError("barbell needs clique >= 2 and bridge >= 0")
    left = range(clique)
    mid = range(clique, clique + bridge)
    right = range(clique + bridge, 2 * clique + bridge)
    chain = [clique - 1, *mid, clique + bridge]
    edges = _clique(left) + _clique(right) + list(zip(chain[:-1], chain[1:]))
    return Graph.from_edges(2 * clique + bridge, edges)


def tree(num_nodes: int, rng: np.random.Generator) -> Graph:
    """Random recursive tree: node ``i`` attaches to a uniform earlier node."""
    if num_nodes < 1:
        raise ValueError("tree needs at least one node")
    edges = [(i, int(rng.integers(0, i))) for i in range(1, num_nodes)]
    return Graph.from_edges(num_nodes, edges)


def ring_of_cliques(num_cliques: int, clique: int) -> Graph:
    """``num_cliques`` cliques in a ring, consecutive cliques joined by one edge."""
    if num_cliques < 2 or clique < 2:
        raise ValueError("ring_of_cliques needs at least 2 cliques of size >= 2")
    edges = []
    for c in range(num_cliques):
        base = c * clique
        edges += _clique(range(base, base + clique))
        nxt = ((c + 1) % num_cliques) * clique
        if num_cliques > 2 or c == 0:
            edges.append((base + clique - 1, nxt))
    return Graph.from_edges(num_cliques * clique, edges)


@dataclass(frozen=True)
class LabelRule:
    """Where the target sits relative to the source.

    ``distance=None`` picks the farthest nodes from the source; an integer
    asks for that exact hop distance (capped at the source's eccentricity).
    """

    distance: int | None = None

    @classmethod
    def parse(cls, text) -> "LabelRule":
        if text in (None, "", "diameter", "far"):
            return cls(None)
        return cls(int(text))


def plant_label(graph: Graph, rule: LabelRule, rng: np.random.Generator) -> GraphSample:
    n = graph.num_nodes
    dist = all_pairs_distances(graph)
    finite = np.where(np.isfinite(dist), dist, -1)
    if rule.distance is None:
        # source and target form a diametral pair
        want = finite.max()
        pairs = np.argwhere(finite == want)
    else:
        ecc = finite.max(axis=1)
        want = np.minimum(rule.distance, ecc)
        pairs = np.argwhere(finite == want[:, None])
    s, t = (int(x) for x in pairs[rng.integers(len(pairs))])
    bits = rng.integers(0, 2, size=2)
    x = np.zeros((n, 3))
    x[:, 2] = 1.0
    x[s, 0] = 1.0
    x[s, 1] = bits[0]
    if t == s:
        label = int(bits[0])
    else:
        x[t, 1] = bits[1]
        label = int((bits[0] + bits[1]) % 2)
    return GraphSample(graph, x, label)


def _family_graph(family: str, sizes: dict, rng: np.random.Generator) -> Graph:
    def pick(key, default):
        choices = sizes.get(key, default)
        choices = [choices] if isinstance(choices, int) else list(choices)
        return int(choices[rng.integers(len(choices))])

    if family == "barbell":
        return barbell(pick("clique", (3, 4, 5)), pick("bridge", (1, 2, 3)))
    if family == "tree":
        return tree(pick("nodes", (8, 10, 12, 14)), rng)
    if family == "ring-of-cliques":
        return ring_of_cliques(pick("cliques", (3, 4)), pick("clique", (3, 4)))
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def generate_samples(family: str, num_graphs: int, seed: int = 0, sizes: dict | None = None,
                     rule: LabelRule | None = None) -> list[GraphSample]:
    """``num_graphs`` labelled graphs; size parameters are drawn from ``sizes``."""
    rng = np.random.default_rng(seed)
    rule = rule or LabelRule()
    sizes = sizes or {}
    return [plant_label(_family_graph(family, sizes, rng), rule, rng) for _ in range(num_graphs)]


def synth_generate(family: str, sizes: dict | None, seed: int, rule: LabelRule | None, path,
                   num_graphs: int = 200) -> list[GraphSample]:
    samples = generate_samples(family, num_graphs, seed, sizes, rule)
    save_dataset(samples, path)
    return samples
