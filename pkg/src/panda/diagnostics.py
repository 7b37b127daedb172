"""Over-squashing diagnostics: resistance, sensitivity, signal flow, smoothness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import autodiff as ad
from .errors import EmptySampleError, ShapeError, SizeError, UndefinedCorrelationError
from .graph import Graph, ShiftMatrix, all_pairs_distances, degrees, shortest_path_lengths
from .model import NodeProbe

__all__ = [
    "LaplacianSpectrum",
    "laplacian",
    "normalized_laplacian",
    "laplacian_spectrum",
    "is_connected",
    "effective_resistance",
    "resistance_matrix",
    "total_effective_resistance",
    "pairwise_total_resistance",
    "SignalRecord",
    "SignalPropagationReport",
    "signal_propagation",
    "SensitivityBoundParams",
    "max_abs_weight",
    "jacobian_block",
    "sensitivity_pairs",
    "empirical_sensitivity",
    "sensitivity_bound",
    "dirichlet_energy",
    "dirichlet_energy_pairwise",
    "minmax_normalize",
    "pearson",
    "spearman",
    "resistance_propagation_correlation",
]

KERNEL_CUTOFF = 1e-9


# --------------------------------------------------------------------------
# spectra and resistance


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str


def laplacian(graph: Graph) -> np.ndarray:
    a = graph.dense_adjacency()
    return np.diag(a.sum(axis=1)) - a


def normalized_laplacian(graph: Graph) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get an all-zero row."""
    a = graph.dense_adjacency()
    d = degrees(graph).astype(np.float64)
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    return np.diag((d > 0).astype(np.float64)) - inv[:, None] * a * inv[None, :]


def laplacian_spectrum(graph: Graph, kind: str = "combinatorial") -> LaplacianSpectrum:
    if kind == "combinatorial":
        mat = laplacian(graph)
    elif kind == "sym-normalized":
        mat = normalized_laplacian(graph)
    else:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    vals, vecs = np.linalg.eigh(mat)
    return LaplacianSpectrum(vals, vecs, kind)


def is_connected(graph: Graph) -> bool:
    if graph.num_nodes == 0:
        return True
    return bool(np.isfinite(shortest_path_lengths(graph, 0)).all())


def _pinv(graph: Graph) -> np.ndarray:
    spec = laplacian_spectrum(graph)
    keep = spec.eigenvalues > KERNEL_CUTOFF
    vecs = spec.eigenvectors[:, keep]
    return (vecs / spec.eigenvalues[keep]) @ vecs.T


def effective_resistance(graph: Graph, u: int, v: int) -> float:
    """``(1_u - 1_v)^T L^+ (1_u - 1_v)``; ``inf`` across components."""
    if u == v:
        raise ValueError("effective resistance needs two distinct nodes")
    if not np.isfinite(shortest_path_lengths(graph, u)[v]):
        return math.inf
    lp = _pinv(graph)
    return float(lp[u, u] + lp[v, v] - 2.0 * lp[u, v])


def resistance_matrix(graph: Graph) -> np.ndarray:
    lp = _pinv(graph)
    diag = np.diag(lp)
    r = diag[:, None] + diag[None, :] - 2.0 * lp
    r[~np.isfinite(all_pairs_distances(graph))] = math.inf
    np.fill_diagonal(r, 0.0)
    return r


def total_effective_resistance(graph: Graph) -> float:
    """``n * sum(1 / lambda_i)`` over the nonzero Laplacian eigenvalues."""
    if not is_connected(graph):
        return math.inf
    vals = laplacian_spectrum(graph).eigenvalues
    nz = vals[vals > KERNEL_CUTOFF]
    return float(graph.num_nodes * np.sum(1.0 / nz))


def pairwise_total_resistance(graph: Graph) -> float:
    """Sum of ``R_uv`` over unordered pairs, one linear solve per pair."""
    n = graph.num_nodes
    if not is_connected(graph):
        return math.inf
    lap = laplacian(graph)
    total = 0.0
    for u in range(n):
        for v in range(u + 1, n):
            # ground v and inject a unit current at u
            keep = np.arange(n) != v
            b = np.zeros(n)
            b[u] = 1.0
            x = np.linalg.solve(lap[np.ix_(keep, keep)], b[keep])
            total += x[u if u < v else u - 1]
    return total


# --------------------------------------------------------------------------
# signal propagation


@dataclass(frozen=True)
class SignalRecord:
    graph_id: int
    r_tot: float
    h_odot: float
    normalized_r_tot: float = float("nan")


@dataclass
class SignalPropagationReport:
    records: list[SignalRecord] = field(default_factory=list)
    correlation: float = float("nan")
    spearman: float = float("nan")
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isnan(self.correlation) and not -1.0 - 1e-12 <= self.correlation <= 1.0 + 1e-12:
            raise ValueError("correlation outside [-1, 1]")


def signal_propagation(probe: NodeProbe, graph: Graph, num_sources: int = 10, seed: int = 0,
                       return_per_source: bool = False):
    """Average distance-weighted unit signal reaching other nodes from a source.

    For each sampled source the source row is set to ones (over its own width)
    and all other rows to zero. Each output row ``h_u`` contributes
    ``sum(h_u) / ||h_u|| * dist(u, v)``; the total is divided by the output
    width times the largest distance. Returns ``(h_odot, R_tot)`` averaged over
    the sampled sources.
    """
    n = graph.num_nodes
    if n < 2:
        raise SizeError(f"signal propagation needs at least 2 nodes, got {n}")
    if not is_connected(graph):
        raise ValueError("signal propagation needs a connected graph")
    rng = np.random.default_rng(seed)
    sources = rng.choice(n, size=min(num_sources, n), replace=False)
    r_tot = total_effective_resistance(graph)
    width = probe.in_width
    p_out = probe.out_width
    values = []
    for v in sources:
        h0 = np.zeros((n, width))
        h0[v, : probe.in_widths[v]] = 1.0
        out = probe(h0).data
        dist = shortest_path_lengths(graph, int(v))
        others = np.arange(n) != v
        norms = np.linalg.norm(out, axis=1)
        live = others & (norms >= 1e-12)
        unit_sums = np.zeros(n)
        unit_sums[live] = out[live].sum(axis=1) / norms[live]
        values.append(float((unit_sums * np.where(others, dist, 0.0)).sum() / (p_out * dist[others].max())))
    h_odot = float(np.mean(values))
    if return_per_source:
        return h_odot, r_tot, [int(s) for s in sources], values
    return h_odot, r_tot


# --------------------------------------------------------------------------
# sensitivity


@dataclass(frozen=True)
class SensitivityBoundParams:
    z: float
    w: float
    p: int
    ell: int

    def __post_init__(self):
        if min(self.z, self.w, self.p, self.ell) <= 0:
            raise ValueError("sensitivity bound parameters must be positive")


def max_abs_weight(params: dict, prefixes=("layers.",)) -> float:
    """Largest absolute weight-matrix entry among parameters under ``prefixes``."""
    vals = [np.abs(t.data).max() for name, t in params.items()
            if name.startswith(prefixes) and name.endswith("weight") and t.data.size]
    if not vals:
        raise ValueError("no weight matrices matched")
    return float(max(vals))


def _jacobian_rows(probe: NodeProbe, graph: Graph, v: int, targets, h0=None) -> dict[int, np.ndarray]:
    n = graph.num_nodes
    start = np.zeros((n, probe.in_width)) if h0 is None else np.asarray(h0, dtype=np.float64)
    x = ad.parameter(start.reshape(n, probe.in_width))
    with ad.Tape() as tape:
        out = probe(x)
    rows = int(probe.out_widths[v])
    blocks = {u: np.zeros((rows, int(probe.in_widths[u]))) for u in targets}
    seed = np.zeros(out.shape)
    for t in range(rows):
        seed[v, t] = 1.0
        (g,) = tape.gradient(out, [x], seed=seed)
        seed[v, t] = 0.0
        for u in targets:
            blocks[u][t] = g[u, : probe.in_widths[u]]
    return blocks


def jacobian_block(probe: NodeProbe, graph: Graph, v: int, u: int, h0=None) -> np.ndarray:
    """``d h_v^(out) / d h_u^(0)`` by reverse mode, at ``h0`` (zeros by default)."""
    return _jacobian_rows(probe, graph, v, [u], h0)[u]


def _matrix_norm(j: np.ndarray, norm: str) -> float:
    if norm == "entrywise":
        return float(np.abs(j).sum())
    if norm == "operator":
        return float(np.abs(j).sum(axis=0).max()) if j.size else 0.0
    raise ValueError(f"unknown norm {norm!r}")


def sensitivity_pairs(probe: NodeProbe, graph: Graph, ell: int, num_pairs: int = 64, seed: int = 0,
                      norm: str = "entrywise", h0=None) -> list[tuple[int, int, float]]:
    """Jacobian norms for up to ``num_pairs`` pairs at hop distance <= ``ell``.

    Pairs are drawn uniformly without replacement. ``h0`` is the point the
    Jacobian is taken at; by default a standard-normal draw from ``seed``, which
    keeps ReLU preactivations off their kink. ``norm`` is ``"entrywise"`` (sum of
    absolute entries) or ``"operator"`` (induced 1-norm, max column sum).
    """
    dist = all_pairs_distances(graph)
    eligible = np.argwhere(dist <= ell)
    if len(eligible) == 0:
        raise EmptySampleError(f"no node pairs within distance {ell}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(eligible), size=min(num_pairs, len(eligible)), replace=False)
    if h0 is None:
        h0 = rng.standard_normal((graph.num_nodes, probe.in_width))
    chosen = sorted((int(v), int(u)) for v, u in eligible[pick])
    by_target: dict[int, list[int]] = {}
    for v, u in chosen:
        by_target.setdefault(v, []).append(u)
    out = []
    for v, us in by_target.items():
        blocks = _jacobian_rows(probe, graph, v, us, h0)
        out.extend((v, u, _matrix_norm(blocks[u], norm)) for u in us)
    return out


def empirical_sensitivity(probe: NodeProbe, graph: Graph, ell: int, num_pairs: int = 64, seed: int = 0,
                          norm: str = "entrywise", h0=None) -> float:
    """Mean Jacobian norm over sampled pairs within ``ell`` hops."""
    pairs = sensitivity_pairs(probe, graph, ell, num_pairs, seed, norm, h0)
    return float(np.mean([s for _, _, s in pairs]))


def sensitivity_bound(params: SensitivityBoundParams, S: ShiftMatrix, v: int, u: int) -> float:
    """``(z w p)^ell * (S^ell)[v, u]``."""
    factor = 1.0
    base = params.z * params.w * params.p
    for _ in range(params.ell):
        factor *= base
    return factor * float(S.power(params.ell)[v, u])


# --------------------------------------------------------------------------
# smoothness


def dirichlet_energy(graph: Graph, H) -> float:
    """``trace(H^T L~ H)`` with the symmetric normalized Laplacian."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != graph.num_nodes:
        raise ShapeError(f"H has {H.shape[0]} rows, graph has {graph.num_nodes} nodes")
    return float(np.trace(H.T @ normalized_laplacian(graph) @ H))


def dirichlet_energy_pairwise(graph: Graph, H) -> float:
    """``1/2 * sum_{v,u} A_vu ||h_v/sqrt(d_v) - h_u/sqrt(d_u)||^2``."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != graph.num_nodes:
        raise ShapeError(f"H has {H.shape[0]} rows, graph has {graph.num_nodes} nodes")
    d = np.sqrt(degrees(graph).astype(np.float64))
    total = 0.0
    for v in range(graph.num_nodes):
        for u in graph.neighbors(v):
            diff = H[v] / d[v] - H[u] / d[u]
            total += float(diff @ diff)
    return 0.5 * total


# --------------------------------------------------------------------------
# correlation


def minmax_normalize(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def _check_columns(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("correlation needs two equal-length vectors")
    if len(x) < 3:
        raise SizeError(f"correlation needs at least 3 rows, got {len(x)}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("a column has zero variance")
    return x, y


def pearson(x, y) -> float:
    x, y = _check_columns(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    r = float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))
    return max(-1.0, min(1.0, r))


def spearman(x, y) -> float:
    x, y = _check_columns(x, y)
    return pearson(stats.rankdata(x), stats.rankdata(y))


def resistance_propagation_correlation(rows) -> float:
    """Pearson r between normalized ``R_tot`` and ``h_odot``.

    ``rows`` are ``(normalized_r_tot, h_odot)`` pairs or :class:`SignalRecord`
    objects; records are min-max normalized here.
    """
    rows = list(rows)
    if rows and isinstance(rows[0], SignalRecord):
        r = minmax_normalize([rec.r_tot for rec in rows])
        h = [rec.h_odot for rec in rows]
    else:
        r = [a for a, _ in rows]
        h = [b for _, b in rows]
    return pearson(r, h)


def build_signal_report(records: list[SignalRecord], metadata: dict | None = None) -> SignalPropagationReport:
    """Normalize ``R_tot`` across records and attach both correlations."""
    norm = minmax_normalize([r.r_tot for r in records])
    recs = [SignalRecord(r.graph_id, r.r_tot, r.h_odot, float(nr)) for r, nr in zip(records, norm)]
    h = [r.h_odot for r in recs]
    return SignalPropagationReport(recs, pearson(norm, h), spearman(norm, h), dict(metadata or {}))
