"""Width-aware message passing: edge partition, cross-width maps and layer updates.

Nodes marked by an :class:`~panda.centrality.ExpansionMask` live in a wide
population (width ``p_high``), the rest in a narrow one (width ``p``). Every
directed edge falls in exactly one of four groups depending on the widths of
its endpoints, and each group has its own aggregator:

* low_low     narrow -> narrow, plain message
* high_high   wide -> wide, plain message
* low_to_high narrow -> wide, message lifted by ``f(h) = W_f h``
* high_to_low wide -> narrow, message reduced by the score-driven selector ``g``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .centrality import ExpansionMask
from .errors import ShapeError, SizeError, UsageError
from .graph import Graph, degrees

__all__ = [
    "EdgePartition",
    "DualFeatures",
    "ScoreNet",
    "MLP",
    "PandaGcnLayerParams",
    "PandaGinLayerParams",
    "partition_edges",
    "gcn_coefficients",
    "project_up",
    "selection_indices",
    "select_down",
    "split_features",
    "panda_gcn_layer",
    "panda_gin_layer",
    "gcn_layer",
    "gin_layer",
    "reunify",
    "readout_and_classify",
]


@dataclass(frozen=True, eq=False)
class EdgePartition:
    """Four directed edge groups, each stored as ``(src, dst)`` arrays."""

    low_low: tuple[np.ndarray, np.ndarray]
    high_high: tuple[np.ndarray, np.ndarray]
    low_to_high: tuple[np.ndarray, np.ndarray]
    high_to_low: tuple[np.ndarray, np.ndarray]

    GROUPS = ("low_low", "high_high", "low_to_high", "high_to_low")

    def pairs(self, group: str) -> set[tuple[int, int]]:
        src, dst = getattr(self, group)
        return {(int(u), int(v)) for u, v in zip(src, dst)}

    def sizes(self) -> dict[str, int]:
        return {g: len(getattr(self, g)[0]) for g in self.GROUPS}


def partition_edges(graph: Graph, mask: ExpansionMask) -> EdgePartition:
    if mask.num_nodes != graph.num_nodes:
        raise ShapeError(f"mask has length {mask.num_nodes}, graph has {graph.num_nodes} nodes")
    src, dst = graph.directed_edges()
    bs = mask.bits[src].astype(bool)
    bd = mask.bits[dst].astype(bool)

    def pick(sel):
        return (src[sel], dst[sel])

    return EdgePartition(
        low_low=pick(~bs & ~bd),
        high_high=pick(bs & bd),
        low_to_high=pick(~bs & bd),
        high_to_low=pick(bs & ~bd),
    )


def gcn_coefficients(deg_hat: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """``1 / sqrt(d_u d_v)`` per edge, as a column for broadcasting."""
    return (1.0 / np.sqrt(deg_hat[src] * deg_hat[dst]))[:, None]


# --------------------------------------------------------------------------
# parameter containers


@dataclass
class ScoreNet:
    """Two-layer perceptron scoring the ``p_high`` dimensions of a message."""

    W1: Tensor  # (hidden, p_high + p)
    b1: Tensor
    W2: Tensor  # (p_high, hidden)
    b2: Tensor

    def __call__(self, x: np.ndarray) -> np.ndarray:
        hidden = np.maximum(x @ self.W1.data.T + self.b1.data, 0.0)
        return hidden @ self.W2.data.T + self.b2.data


@dataclass
class MLP:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def __call__(self, x) -> Tensor:
        return ad.linear(ad.relu(ad.linear(x, self.W1, self.b1)), self.W2, self.b2)


@dataclass
class PandaGcnLayerParams:
    W_low: Tensor  # (p, p)
    W_high: Tensor | None = None  # (p_high, p_high)
    W_f: Tensor | None = None  # (p_high, p)
    eta: ScoreNet | None = None


@dataclass
class PandaGinLayerParams:
    mlp_low: MLP
    epsilon: Tensor
    mlp_high: MLP | None = None
    W_f: Tensor | None = None
    eta: ScoreNet | None = None


@dataclass
class DualFeatures:
    """Hidden states split by population, plus the node <-> slot maps.

    ``low_ids``/``high_ids`` list the global node ids held by each population
    in slot order; ``slot[v]`` is the row of node ``v`` inside its population.
    ``depth`` counts the message-passing layers applied so far.
    """

    low: Tensor
    high: Tensor
    low_ids: np.ndarray
    high_ids: np.ndarray
    slot: np.ndarray
    depth: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.slot)

    def replace(self, low: Tensor, high: Tensor) -> "DualFeatures":
        return DualFeatures(low, high, self.low_ids, self.high_ids, self.slot, self.depth + 1)


def split_features(low_rows, high_rows, mask: ExpansionMask) -> DualFeatures:
    """Wrap per-population rows (already in ascending node order) as DualFeatures."""
    bits = mask.bits.astype(bool)
    low_ids = np.flatnonzero(~bits)
    high_ids = np.flatnonzero(bits)
    slot = np.empty(len(bits), dtype=np.int64)
    slot[low_ids] = np.arange(len(low_ids))
    slot[high_ids] = np.arange(len(high_ids))
    low_rows, high_rows = ad.constant(low_rows), ad.constant(high_rows)
    if low_rows.shape[0] != len(low_ids) or high_rows.shape[0] != len(high_ids):
        raise ShapeError(
            f"population sizes {low_rows.shape[0]}/{high_rows.shape[0]} do not match mask "
            f"{len(low_ids)}/{len(high_ids)}"
        )
    return DualFeatures(low_rows, high_rows, low_ids, high_ids, slot)


# --------------------------------------------------------------------------
# cross-width maps


def project_up(h, W_f) -> Tensor:
    """``f``: lift width-``p`` rows (or a single vector) to ``p_high``."""
    h = ad.constant(h)
    if h.ndim == 1:
        return ad.reshape(ad.linear(ad.reshape(h, (1, -1)), W_f), (-1,))
    return ad.linear(h, W_f)


def selection_indices(h_v: np.ndarray, h_u: np.ndarray, eta: ScoreNet, p: int) -> np.ndarray:
    """Columns of ``h_u`` kept for each message, ascending within a row.

    Scores are ``softmax(relu(eta(h_u ++ h_v)))``; the ``p`` largest win, ties
    resolved toward the lower dimension index.
    """
    h_v = np.atleast_2d(h_v)
    h_u = np.atleast_2d(h_u)
    p_high = h_u.shape[1]
    if p > p_high:
        raise ShapeError(f"cannot select {p} of {p_high} dimensions")
    if h_v.shape[0] != h_u.shape[0]:
        raise ShapeError(f"select_down: {h_v.shape[0]} receivers for {h_u.shape[0]} senders")
    if h_u.shape[0] == 0:
        return np.zeros((0, p), dtype=np.int64)
    raw = np.maximum(eta(np.concatenate([h_u, h_v], axis=1)), 0.0)
    if raw.shape[1] != p_high:
        raise ShapeError(f"score net emits {raw.shape[1]} scores for width {p_high}")
    z = raw - raw.max(axis=1, keepdims=True)
    s = np.exp(z)
    s /= s.sum(axis=1, keepdims=True)
    order = np.argsort(-s, axis=1, kind="stable")
    return np.sort(order[:, :p], axis=1)


def select_down(h_v, h_u, eta: ScoreNet) -> Tensor:
    """``g``: reduce wide sender rows ``h_u`` to the receiver width of ``h_v``.

    The selected indices are constants of the forward pass: gradients reach
    ``h_u`` through the gathered entries only, never the score network.
    """
    h_v, h_u = ad.constant(h_v), ad.constant(h_u)
    vec = h_u.ndim == 1
    hv = np.atleast_2d(h_v.data)
    idx = selection_indices(hv, np.atleast_2d(h_u.data), eta, hv.shape[1])
    if vec:
        return ad.reshape(ad.gather_columns(ad.reshape(h_u, (1, -1)), idx), (-1,))
    return ad.gather_columns(h_u, idx)


# --------------------------------------------------------------------------
# layer updates


def _aggregate(rows: Tensor, src_slot, dst_slot, num_out: int, coef=None) -> Tensor | None:
    if len(src_slot) == 0:
        return None
    msg = ad.row_gather(rows, src_slot)
    if coef is not None:
        msg = ad.scale(msg, coef)
    return ad.row_scatter_add(msg, dst_slot, num_out)


def _sum(parts, like: Tensor) -> Tensor:
    parts = [p for p in parts if p is not None]
    if not parts:
        return ad.Tensor(np.zeros(like.shape))
    out = parts[0]
    for p in parts[1:]:
        out = ad.add(out, p)
    return out


def _cross_messages(dual: DualFeatures, part: EdgePartition, W_f, eta, deg_hat=None):
    """Incoming lifted (narrow -> wide) and selected (wide -> narrow) sums."""
    n_low, n_high = dual.low.shape[0], dual.high.shape[0]
    up = down = None
    src, dst = part.low_to_high
    if len(src):
        if W_f is None:
            raise ShapeError("edges into expanded nodes need W_f")
        lifted = ad.linear(ad.row_gather(dual.low, dual.slot[src]), W_f)
        if deg_hat is not None:
            lifted = ad.scale(lifted, gcn_coefficients(deg_hat, src, dst))
        up = ad.row_scatter_add(lifted, dual.slot[dst], n_high)
    src, dst = part.high_to_low
    if len(src):
        if eta is None:
            raise ShapeError("edges out of expanded nodes need a score net")
        senders = ad.row_gather(dual.high, dual.slot[src])
        receivers = dual.low.data[dual.slot[dst]]
        idx = selection_indices(receivers, senders.data, eta, dual.low.shape[1])
        picked = ad.gather_columns(senders, idx)
        if deg_hat is not None:
            picked = ad.scale(picked, gcn_coefficients(deg_hat, src, dst))
        down = ad.row_scatter_add(picked, dual.slot[dst], n_low)
    return up, down


def panda_gcn_layer(dual: DualFeatures, partition: EdgePartition, params: PandaGcnLayerParams,
                    deg_hat: np.ndarray) -> DualFeatures:
    """Residual GCN update run separately in each population.

    ``deg_hat`` holds degrees counted on ``A + I``.
    """
    _check_width(dual.low, params.W_low, "W_low")
    n_low, n_high = dual.low.shape[0], dual.high.shape[0]
    slot = dual.slot
    src, dst = partition.low_low
    ll = _aggregate(dual.low, slot[src], slot[dst], n_low, gcn_coefficients(deg_hat, src, dst))
    src, dst = partition.high_high
    hh = _aggregate(dual.high, slot[src], slot[dst], n_high, gcn_coefficients(deg_hat, src, dst)) if len(src) else None
    up, down = _cross_messages(dual, partition, params.W_f, params.eta, deg_hat)

    low_in = _sum([ll, down], dual.low)
    new_low = ad.add(dual.low, ad.relu(ad.linear(low_in, params.W_low)))
    if n_high:
        _check_width(dual.high, params.W_high, "W_high")
        high_in = _sum([hh, up], dual.high)
        new_high = ad.add(dual.high, ad.relu(ad.linear(high_in, params.W_high)))
    else:
        new_high = dual.high
    return dual.replace(new_low, new_high)


def panda_gin_layer(dual: DualFeatures, partition: EdgePartition, params: PandaGinLayerParams) -> DualFeatures:
    """GIN update with sum aggregation and a shared ``1 + eps`` self weight."""
    n_low, n_high = dual.low.shape[0], dual.high.shape[0]
    slot = dual.slot
    self_w = ad.add(1.0, params.epsilon)
    src, dst = partition.low_low
    ll = _aggregate(dual.low, slot[src], slot[dst], n_low)
    src, dst = partition.high_high
    hh = _aggregate(dual.high, slot[src], slot[dst], n_high)
    up, down = _cross_messages(dual, partition, params.W_f, params.eta)

    new_low = params.mlp_low(_sum([ad.mul(dual.low, self_w), ll, down], dual.low))
    if n_high:
        if params.mlp_high is None:
            raise ShapeError("expanded nodes present but mlp_high is missing")
        new_high = params.mlp_high(_sum([ad.mul(dual.high, self_w), hh, up], dual.high))
    else:
        new_high = dual.high
    return dual.replace(new_low, new_high)


def gcn_layer(h: Tensor, graph: Graph, W: Tensor, deg_hat: np.ndarray | None = None) -> Tensor:
    """Baseline residual GCN: ``h + relu(sum_u W h_u / sqrt(d_u d_v))``."""
    if deg_hat is None:
        deg_hat = degrees(graph, with_self_loops=True)
    _check_width(h, W, "W")
    src, dst = graph.directed_edges()
    agg = _aggregate(h, src, dst, graph.num_nodes, gcn_coefficients(deg_hat, src, dst))
    agg = agg if agg is not None else ad.Tensor(np.zeros(h.shape))
    return ad.add(h, ad.relu(ad.linear(agg, W)))


def gin_layer(h: Tensor, graph: Graph, mlp: MLP, epsilon: Tensor) -> Tensor:
    src, dst = graph.directed_edges()
    agg = _aggregate(h, src, dst, graph.num_nodes)
    z = ad.mul(h, ad.add(1.0, epsilon))
    return mlp(z if agg is None else ad.add(z, agg))


def _check_width(h: Tensor, W: Tensor | None, name: str) -> None:
    if W is None:
        raise ShapeError(f"{name} is missing")
    if h.shape[1] != W.shape[1] or W.shape[0] != W.shape[1]:
        raise ShapeError(f"{name} has shape {W.shape}, features have width {h.shape[1]}")


# --------------------------------------------------------------------------
# output


def reunify(dual: DualFeatures, W_down, expected_depth: int | None = None) -> Tensor:
    """Merge the populations back into one width-``p`` matrix in node order.

    Narrow rows pass through; wide rows go through ``W_down`` (p x p_high).
    When ``expected_depth`` is given, calling before that many layers have run
    is a usage error.
    """
    if expected_depth is not None and dual.depth != expected_depth:
        raise UsageError(
            f"reunify must follow the final layer (depth {dual.depth}, expected {expected_depth})"
        )
    n = dual.num_nodes
    out = ad.row_scatter_add(dual.low, dual.low_ids, n) if len(dual.low_ids) else None
    if len(dual.high_ids):
        down = ad.linear(dual.high, W_down)
        if down.shape[1] != dual.low.shape[1]:
            raise ShapeError(f"W_down maps to width {down.shape[1]}, expected {dual.low.shape[1]}")
        placed = ad.row_scatter_add(down, dual.high_ids, n)
        out = placed if out is None else ad.add(out, placed)
    if out is None:
        raise SizeError("cannot reunify an empty graph")
    return out


def readout_and_classify(features, head_W, head_b, graph_index=None, num_graphs: int = 1) -> Tensor:
    """Mean-pool node rows per graph and apply the linear head.

    ``graph_index`` assigns each row to a graph in a batch; omitted, all rows
    belong to one graph. Returns ``(num_graphs, num_classes)`` logits.
    """
    features = ad.constant(features)
    if features.shape[0] == 0:
        raise SizeError("readout of an empty graph")
    if graph_index is None:
        pooled = ad.reshape(ad.mean_rows(features), (1, -1))
    else:
        graph_index = np.asarray(graph_index, dtype=np.int64)
        counts = np.bincount(graph_index, minlength=num_graphs)
        if np.any(counts == 0):
            raise SizeError("readout of an empty graph")
        pooled = ad.scale(ad.row_scatter_add(features, graph_index, num_graphs), 1.0 / counts[:, None])
    return ad.linear(pooled, head_W, head_b)
