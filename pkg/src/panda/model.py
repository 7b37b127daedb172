"""Model assembly: parameters, batching, forward pass and checkpoints.

Parameters live in a flat ``dict`` of named :class:`~panda.autodiff.Tensor`
objects. Names are stable across backbones so that a PANDA model and its
baseline can share weights (see README for the full key list)::

    encoder.low.weight / .bias        d -> p input encoder
    encoder.high.weight / .bias       d -> p_high encoder for expanded nodes
    layers.{i}.low.weight             GCN W_low            (p, p)
    layers.{i}.high.weight            GCN W_high           (p_high, p_high)
    layers.{i}.mlp_low.{0,1}.*        GIN MLP_low
    layers.{i}.mlp_high.{0,1}.*       GIN MLP_high
    layers.{i}.eps                    GIN epsilon (scalar)
    layers.{i}.f.weight               W_f                  (p_high, p)
    layers.{i}.score.{0,1}.*          score network eta
    reunify.weight                    W_down               (p, p_high)
    head.weight / .bias               classifier           (classes, p)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .centrality import CentralityKind, ExpansionMask, build_mask, compute_centrality
from .errors import SchemaError, ShapeError, SizeError
from .graph import Graph, GraphSample, degrees, disjoint_union
from .layers import (
    MLP,
    DualFeatures,
    PandaGcnLayerParams,
    PandaGinLayerParams,
    ScoreNet,
    gcn_layer,
    gin_layer,
    panda_gcn_layer,
    panda_gin_layer,
    partition_edges,
    readout_and_classify,
    reunify,
    split_features,
)

BACKBONES = ("gcn", "gin", "panda-gcn", "panda-gin")
CHECKPOINT_FORMAT = "panda-checkpoint/1"


@dataclass(frozen=True)
class ModelSpec:
    backbone: str = "panda-gcn"
    layers: int = 4
    p: int = 64
    p_high: int = 128
    k: int = 3
    centrality: str = "betweenness"
    dropout: float = 0.5
    num_classes: int = 2
    in_features: int = 1

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.is_panda and self.p_high <= self.p:
            raise ValueError(f"p_high ({self.p_high}) must exceed p ({self.p})")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        CentralityKind.parse(self.centrality)

    @property
    def is_panda(self) -> bool:
        return self.backbone.startswith("panda")

    @property
    def is_gin(self) -> bool:
        return self.backbone.endswith("gin")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# parameters


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(spec: ModelSpec, seed: int = 0) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, ``eps = 0``."""
    rng = np.random.default_rng(seed)
    p, ph = spec.p, spec.p_high
    params: dict[str, Tensor] = {}

    def linear(name, fan_out, fan_in, bias=True):
        params[f"{name}.weight"] = ad.parameter(glorot(rng, fan_out, fan_in), name=f"{name}.weight")
        if bias:
            params[f"{name}.bias"] = ad.parameter(np.zeros(fan_out), name=f"{name}.bias")

    def mlp(name, width):
        linear(f"{name}.0", width, width)
        linear(f"{name}.1", width, width)

    linear("encoder.low", p, spec.in_features)
    if spec.is_panda:
        linear("encoder.high", ph, spec.in_features)
    for i in range(spec.layers):
        pre = f"layers.{i}"
        if spec.is_gin:
            mlp(f"{pre}.mlp_low", p)
            params[f"{pre}.eps"] = ad.parameter(np.zeros(()), name=f"{pre}.eps")
        else:
            linear(f"{pre}.low", p, p, bias=False)
        if spec.is_panda:
            if spec.is_gin:
                mlp(f"{pre}.mlp_high", ph)
            else:
                linear(f"{pre}.high", ph, ph, bias=False)
            linear(f"{pre}.f", ph, p, bias=False)
            linear(f"{pre}.score.0", ph, ph + p)
            linear(f"{pre}.score.1", ph, ph)
    if spec.is_panda:
        linear("reunify", p, ph, bias=False)
    linear("head", spec.num_classes, p)
    return params


def _mlp(params, name) -> MLP:
    return MLP(params[f"{name}.0.weight"], params[f"{name}.0.bias"],
               params[f"{name}.1.weight"], params[f"{name}.1.bias"])


def _score(params, name) -> ScoreNet:
    return ScoreNet(params[f"{name}.0.weight"], params[f"{name}.0.bias"],
                    params[f"{name}.1.weight"], params[f"{name}.1.bias"])


def layer_params(spec: ModelSpec, params: dict, i: int):
    pre = f"layers.{i}"
    panda = spec.is_panda
    if spec.is_gin:
        return PandaGinLayerParams(
            mlp_low=_mlp(params, f"{pre}.mlp_low"),
            epsilon=params[f"{pre}.eps"],
            mlp_high=_mlp(params, f"{pre}.mlp_high") if panda else None,
            W_f=params[f"{pre}.f.weight"] if panda else None,
            eta=_score(params, f"{pre}.score") if panda else None,
        )
    return PandaGcnLayerParams(
        W_low=params[f"{pre}.low.weight"],
        W_high=params[f"{pre}.high.weight"] if panda else None,
        W_f=params[f"{pre}.f.weight"] if panda else None,
        eta=_score(params, f"{pre}.score") if panda else None,
    )


# --------------------------------------------------------------------------
# batching


@dataclass(frozen=True, eq=False)
class Batch:
    """Disjoint union of graphs, processed as one block-diagonal graph."""

    graph: Graph
    features: np.ndarray
    mask: ExpansionMask
    graph_index: np.ndarray
    labels: np.ndarray

    @property
    def num_graphs(self) -> int:
        return len(self.labels)


def make_batch(samples: Sequence[GraphSample], masks: Sequence[ExpansionMask] | None = None) -> Batch:
    if not samples:
        raise SizeError("empty batch")
    if any(s.graph.num_nodes == 0 for s in samples):
        raise SizeError("batch contains an empty graph")
    graph, offsets = disjoint_union([s.graph for s in samples])
    features = np.concatenate([s.features for s in samples], axis=0)
    if masks is None:
        mask = ExpansionMask.empty(graph.num_nodes)
    else:
        ids = [off + np.asarray(m.expanded_ids, dtype=np.int64) for m, off in zip(masks, offsets)]
        mask = ExpansionMask.from_ids(graph.num_nodes, np.concatenate(ids) if ids else [])
    graph_index = np.repeat(np.arange(len(samples)), np.diff(offsets))
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return Batch(graph, features, mask, graph_index, labels)


def sample_mask(sample: GraphSample, spec: ModelSpec, cache: dict | None = None) -> ExpansionMask:
    """Top-k mask for one graph; ``cache`` memoizes centrality per (graph, kind)."""
    n = sample.graph.num_nodes
    if not spec.is_panda or spec.k == 0:
        return ExpansionMask.empty(n)
    kind = CentralityKind.parse(spec.centrality)
    key = (id(sample.graph), kind)
    if cache is not None and key in cache:
        c = cache[key][1]
    else:
        c = compute_centrality(sample.graph, kind)
        if cache is not None:
            cache[key] = (sample.graph, c)  # keep the graph alive so ids stay unique
    return build_mask(c, spec.k)


# --------------------------------------------------------------------------
# forward


def encode(spec: ModelSpec, params: dict, x: np.ndarray, mask: ExpansionMask) -> DualFeatures:
    if x.shape[1] != spec.in_features:
        raise ShapeError(f"features have width {x.shape[1]}, model expects {spec.in_features}")
    bits = mask.bits.astype(bool)
    low = ad.linear(x[~bits], params["encoder.low.weight"], params["encoder.low.bias"])
    if spec.is_panda:
        high = ad.linear(x[bits], params["encoder.high.weight"], params["encoder.high.bias"])
    else:
        if bits.any():
            raise ShapeError("baseline backbones cannot carry expanded nodes")
        high = ad.Tensor(np.zeros((0, spec.p)))
    return split_features(low, high, mask)


def run_layers(spec: ModelSpec, params: dict, graph: Graph, dual: DualFeatures, num_layers: int,
               training: bool = False, rng: np.random.Generator | None = None) -> DualFeatures:
    """Apply ``num_layers`` message-passing layers (dropout after each in training)."""
    deg_hat = degrees(graph, with_self_loops=True)
    part = partition_edges(graph, _mask_of(dual)) if spec.is_panda else None
    for i in range(num_layers):
        lp = layer_params(spec, params, i)
        if spec.is_panda:
            if spec.is_gin:
                dual = panda_gin_layer(dual, part, lp)
            else:
                dual = panda_gcn_layer(dual, part, lp, deg_hat)
        else:
            if spec.is_gin:
                h = gin_layer(dual.low, graph, lp.mlp_low, lp.epsilon)
            else:
                h = gcn_layer(dual.low, graph, lp.W_low, deg_hat)
            dual = dual.replace(h, dual.high)
        if training and spec.dropout > 0:
            dual = DualFeatures(
                ad.dropout(dual.low, spec.dropout, rng),
                ad.dropout(dual.high, spec.dropout, rng),
                dual.low_ids, dual.high_ids, dual.slot, dual.depth,
            )
    return dual


def _mask_of(dual: DualFeatures) -> ExpansionMask:
    return ExpansionMask.from_ids(dual.num_nodes, dual.high_ids)


def node_outputs(spec: ModelSpec, params: dict, dual: DualFeatures) -> Tensor:
    if spec.is_panda:
        return reunify(dual, params["reunify.weight"], expected_depth=spec.layers)
    return dual.low


def forward_batch(spec: ModelSpec, params: dict, batch: Batch, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Logits of shape ``(num_graphs, num_classes)``."""
    dual = encode(spec, params, batch.features, batch.mask)
    dual = run_layers(spec, params, batch.graph, dual, spec.layers, training, rng)
    h = node_outputs(spec, params, dual)
    return readout_and_classify(h, params["head.weight"], params["head.bias"],
                                batch.graph_index, batch.num_graphs)


def forward(spec: ModelSpec, params: dict, sample: GraphSample, train_mode: bool = False,
            seed: int = 0, mask: ExpansionMask | None = None) -> Tensor:
    """Logits (1, num_classes) for a single graph; dropout is seeded by ``seed``."""
    if mask is None:
        mask = sample_mask(sample, spec)
    batch = make_batch([sample], [mask])
    rng = np.random.default_rng(seed)
    return forward_batch(spec, params, batch, train_mode, rng)


# --------------------------------------------------------------------------
# probes for diagnostics


@dataclass
class NodeProbe:
    """Maps padded initial hidden states to padded node outputs.

    Rows of the ``(n, in_width)`` input hold each node's hidden state in its
    first ``in_widths[v]`` columns (the rest are ignored); outputs are padded
    to ``out_width`` the same way.
    """

    in_widths: np.ndarray
    out_widths: np.ndarray
    fn: Callable[[Tensor], Tensor]

    @property
    def in_width(self) -> int:
        return int(self.in_widths.max()) if len(self.in_widths) else 0

    @property
    def out_width(self) -> int:
        return int(self.out_widths.max()) if len(self.out_widths) else 0

    def __call__(self, h0) -> Tensor:
        return self.fn(ad.constant(h0))


def identity_probe(num_nodes: int, width: int) -> NodeProbe:
    w = np.full(num_nodes, width)
    return NodeProbe(w, w.copy(), lambda h: h)


def _columns(width_from: int, width_to: int) -> np.ndarray:
    sel = np.zeros((width_from, width_to))
    k = min(width_from, width_to)
    sel[np.arange(k), np.arange(k)] = 1.0
    return sel


def make_probe(spec: ModelSpec, params: dict, graph: Graph, mask: ExpansionMask | None = None,
               num_layers: int | None = None, final: bool = False) -> NodeProbe:
    """Hidden-state map of the first ``num_layers`` layers (encoder skipped).

    With ``final=True`` all layers run and populations are merged back to
    width ``p``, matching what the readout sees.
    """
    if mask is None:
        mask = ExpansionMask.empty(graph.num_nodes)
    if final:
        num_layers = spec.layers
    num_layers = spec.layers if num_layers is None else num_layers
    if num_layers > spec.layers:
        raise ValueError(f"model has {spec.layers} layers, asked for {num_layers}")
    bits = mask.bits.astype(bool)
    p, ph = spec.p, (spec.p_high if spec.is_panda and bits.any() else spec.p)
    in_widths = np.where(bits, ph, p)
    out_widths = np.full(graph.num_nodes, p) if final else in_widths.copy()
    width = int(in_widths.max()) if graph.num_nodes else p
    out_width = p if final else width
    low_ids, high_ids = np.flatnonzero(~bits), np.flatnonzero(bits)

    def fn(h0: Tensor) -> Tensor:
        if h0.shape != (graph.num_nodes, width):
            raise ShapeError(f"probe input has shape {h0.shape}, expected {(graph.num_nodes, width)}")
        low = ad.matmul(ad.row_gather(h0, low_ids), _columns(width, p))
        high = ad.matmul(ad.row_gather(h0, high_ids), _columns(width, ph))
        dual = split_features(low, high, mask)
        dual = run_layers(spec, params, graph, dual, num_layers)
        if final:
            return node_outputs(spec, params, dual)
        out = ad.row_scatter_add(ad.matmul(dual.low, _columns(p, out_width)), dual.low_ids, graph.num_nodes)
        if len(high_ids):
            out = ad.add(out, ad.row_scatter_add(ad.matmul(dual.high, _columns(ph, out_width)),
                                                 dual.high_ids, graph.num_nodes))
        return out

    return NodeProbe(in_widths, out_widths, fn)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, spec: ModelSpec, params: dict, extra: dict | None = None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "spec": spec.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.items())
        },
    }
    if extra:
        blob["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, separators=(",", ":"))


def load_checkpoint(path) -> tuple[ModelSpec, dict[str, Tensor]]:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"unrecognized checkpoint format {blob.get('format')!r}")
    spec = ModelSpec(**blob["spec"])
    params = {
        name: ad.parameter(np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]), name=name)
        for name, entry in blob["params"].items()
    }
    expected = set(init_params(spec, 0))
    if set(params) != expected:
        raise SchemaError(f"checkpoint keys differ from spec: {sorted(set(params) ^ expected)}")
    return spec, params


def copy_params(params: dict) -> dict[str, Tensor]:
    return {k: ad.parameter(v.data.copy(), name=k) for k, v in params.items()}
