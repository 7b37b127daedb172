import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import graphs, random_graph
from panda import autodiff as ad
from panda.centrality import ExpansionMask
from panda.errors import ShapeError, SizeError, UsageError
from panda.graph import Graph, degrees
from panda.layers import (
    MLP,
    PandaGcnLayerParams,
    PandaGinLayerParams,
    ScoreNet,
    gcn_layer,
    gin_layer,
    panda_gcn_layer,
    panda_gin_layer,
    partition_edges,
    project_up,
    readout_and_classify,
    reunify,
    select_down,
    selection_indices,
    split_features,
)

PATH3 = Graph.from_edges(3, [(0, 1), (1, 2)])
STAR = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])


def const_eta(values):
    """Score net stand-in that ignores its input."""
    values = np.asarray(values, dtype=np.float64)
    return lambda x: np.tile(values, (len(x), 1))


def identity_mlp(width):
    eye = ad.parameter(np.eye(width))
    zero = ad.parameter(np.zeros(width))
    return MLP(eye, zero, eye, zero)


def dual_from_full(h, mask, p, p_high):
    """Split a full-width (n, p_high) matrix into populations, truncating narrow rows."""
    bits = mask.bits.astype(bool)
    return split_features(h[~bits][:, :p], h[bits][:, :p_high], mask)


class TestPartition:
    def test_path_example(self):
        part = partition_edges(PATH3, ExpansionMask.from_ids(3, [1]))
        assert part.pairs("low_to_high") == {(0, 1), (2, 1)}
        assert part.pairs("high_to_low") == {(1, 0), (1, 2)}
        assert part.pairs("low_low") == set() and part.pairs("high_high") == set()

    def test_all_low_all_high(self):
        g = random_graph(np.random.default_rng(0), 7)
        low = partition_edges(g, ExpansionMask.empty(7))
        assert low.sizes()["low_low"] == 2 * g.num_edges
        high = partition_edges(g, ExpansionMask.from_ids(7, range(7)))
        assert high.sizes()["high_high"] == 2 * g.num_edges

    def test_mask_length(self):
        with pytest.raises(ShapeError):
            partition_edges(PATH3, ExpansionMask.empty(2))

    @given(graphs(min_nodes=1, max_nodes=9), st.data())
    @settings(max_examples=60)
    def test_coverage_and_reversal(self, g, data):
        ids = data.draw(st.lists(st.integers(0, g.num_nodes - 1), unique=True))
        part = partition_edges(g, ExpansionMask.from_ids(g.num_nodes, ids))
        groups = [part.pairs(name) for name in part.GROUPS]
        src, dst = g.directed_edges()
        directed = set(zip(src.tolist(), dst.tolist()))
        assert set().union(*groups) == directed
        assert sum(len(x) for x in groups) == len(directed) == 2 * g.num_edges
        assert {(v, u) for u, v in part.pairs("low_to_high")} == part.pairs("high_to_low")


class TestCrossWidth:
    def test_project_up_examples(self):
        W = np.array([[1.0], [0.0], [0.0]])
        assert project_up(np.array([2.0]), W).data.tolist() == [2.0, 0.0, 0.0]
        assert project_up(np.zeros(1), W).data.tolist() == [0.0, 0.0, 0.0]

    def test_project_up_linear(self, rng):
        W = rng.standard_normal((5, 3))
        x, y = rng.standard_normal(3), rng.standard_normal(3)
        a, b = 1.7, -0.3
        lhs = project_up(a * x + b * y, W).data
        rhs = a * project_up(x, W).data + b * project_up(y, W).data
        assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)
        with pytest.raises(ShapeError):
            project_up(np.zeros(4), W)

    def test_select_down_topk(self):
        out = select_down(np.zeros(2), np.array([10.0, 20.0, 30.0, 40.0]), const_eta([3, 2, 1, 0]))
        assert out.data.tolist() == [10.0, 20.0]

    def test_select_down_sorted_positions(self):
        # dims 3 and 1 win; output keeps dimension order, not score order
        out = select_down(np.zeros(2), np.array([10.0, 20.0, 30.0, 40.0]), const_eta([0, 1, 0, 5]))
        assert out.data.tolist() == [20.0, 40.0]

    def test_select_down_ties(self):
        out = select_down(np.zeros(2), np.array([10.0, 20.0, 30.0, 40.0]), const_eta([0, 0, 0, 0]))
        assert out.data.tolist() == [10.0, 20.0]
        # negative scores are clipped by relu, so they tie with zero
        idx = selection_indices(np.zeros((1, 2)), np.zeros((1, 4)), const_eta([-1, -3, 0, 2]), 2)
        assert idx.tolist() == [[0, 3]]

    def test_select_down_shape_errors(self):
        with pytest.raises(ShapeError):
            select_down(np.zeros(5), np.zeros(4), const_eta([0, 0, 0, 0]))
        with pytest.raises(ShapeError):
            selection_indices(np.zeros((1, 2)), np.zeros((1, 4)), const_eta([0, 0, 0]), 2)

    def test_select_down_gradient_on_selected_dims(self, rng):
        eta = const_eta([0.0, 3.0, 1.0, 2.0])  # clear winners: dims 1 and 3
        h_v = rng.standard_normal(2)
        c = rng.standard_normal(2)
        h_u = ad.parameter(rng.standard_normal(4))
        with ad.Tape() as tape:
            y = ad.sum_all(ad.mul(select_down(h_v, h_u, eta), c))
        (g,) = tape.gradient(y, [h_u])
        assert np.flatnonzero(g).tolist() == [1, 3]
        assert ad.grad_check(lambda t: ad.sum_all(ad.mul(select_down(h_v, t, eta), c)), h_u.data) < 1e-8

    def test_score_net_shape(self, rng):
        p, ph = 2, 4
        eta = ScoreNet(*(ad.parameter(rng.standard_normal(s)) for s in [(ph, ph + p), (ph,), (ph, ph), (ph,)]))
        idx = selection_indices(rng.standard_normal((3, p)), rng.standard_normal((3, ph)), eta, p)
        assert idx.shape == (3, p)
        assert np.all(np.diff(idx, axis=1) > 0)


class TestPandaGcn:
    def test_hand_computed_path(self):
        # nodes 0 and 2 narrow (p=1), node 1 wide (p_high=2); degrees on A+I are [2, 3, 2]
        mask = ExpansionMask.from_ids(3, [1])
        dual = split_features(np.array([[1.0], [2.0]]), np.array([[0.5, 0.5]]), mask)
        params = PandaGcnLayerParams(
            W_low=ad.parameter([[2.0]]),
            W_high=ad.parameter([[1.0, 0.0], [0.0, -1.0]]),
            W_f=ad.parameter([[1.0], [2.0]]),
            eta=const_eta([1.0, 5.0]),
        )
        out = panda_gcn_layer(dual, partition_edges(PATH3, mask), params, degrees(PATH3, True))
        s6 = math.sqrt(6)
        # node 1: W_f (1 + 2) / sqrt6 = [3, 6]/sqrt6 -> W_high -> [3, -6]/sqrt6 -> relu
        assert np.allclose(out.high.data, [[0.5 + 3 / s6, 0.5]], atol=1e-12)
        # nodes 0, 2: g keeps dim 1 of node 1 (0.5), scaled by 1/sqrt6 and W_low = 2
        assert np.allclose(out.low.data, [[1 + 1 / s6], [2 + 1 / s6]], atol=1e-12)
        assert out.depth == 1

    def test_all_low_equals_residual_gcn(self, rng):
        g = random_graph(rng, 8)
        h = rng.standard_normal((8, 4))
        W = ad.parameter(rng.standard_normal((4, 4)))
        mask = ExpansionMask.empty(8)
        dual = split_features(h, np.zeros((0, 6)), mask)
        out = panda_gcn_layer(dual, partition_edges(g, mask), PandaGcnLayerParams(W), degrees(g, True))
        ref = gcn_layer(ad.constant(h), g, W).data
        assert np.allclose(out.low.data, ref, atol=1e-12, rtol=0)
        # independent dense formula
        a = g.dense_adjacency()
        d = degrees(g, True)
        dense = h + np.maximum((a / np.sqrt(np.outer(d, d))) @ h @ W.data.T, 0)
        assert np.allclose(ref, dense, atol=1e-12)

    def test_no_edges_identity(self, rng):
        g = Graph.from_edges(4, [])
        mask = ExpansionMask.from_ids(4, [2])
        dual = split_features(rng.standard_normal((3, 2)), rng.standard_normal((1, 3)), mask)
        params = PandaGcnLayerParams(ad.parameter(rng.standard_normal((2, 2))),
                                     ad.parameter(rng.standard_normal((3, 3))),
                                     ad.parameter(rng.standard_normal((3, 2))), const_eta([0, 0, 0]))
        out = panda_gcn_layer(dual, partition_edges(g, mask), params, degrees(g, True))
        assert np.array_equal(out.low.data, dual.low.data)
        assert np.array_equal(out.high.data, dual.high.data)

    def test_width_mismatch(self, rng):
        mask = ExpansionMask.empty(3)
        dual = split_features(np.zeros((3, 2)), np.zeros((0, 4)), mask)
        with pytest.raises(ShapeError):
            panda_gcn_layer(dual, partition_edges(PATH3, mask), PandaGcnLayerParams(ad.parameter(np.eye(3))),
                            degrees(PATH3, True))


class TestPandaGin:
    def test_hand_computed_star(self):
        # centre wide (2 dims), leaves narrow (1 dim); eps = 0.5; MLPs are identity on positives
        mask = ExpansionMask.from_ids(4, [0])
        dual = split_features(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0, 2.0]]), mask)
        params = PandaGinLayerParams(
            mlp_low=identity_mlp(1),
            epsilon=ad.parameter(0.5),
            mlp_high=identity_mlp(2),
            W_f=ad.parameter([[1.0], [1.0]]),
            eta=const_eta([0.0, 1.0]),
        )
        out = panda_gin_layer(dual, partition_edges(STAR, mask), params)
        # centre: 1.5 * [1, 2] + W_f (1 + 2 + 3) = [7.5, 9]
        assert np.allclose(out.high.data, [[7.5, 9.0]])
        # leaf x: 1.5 x + (selected dim 1 of the centre = 2)
        assert np.allclose(out.low.data, [[3.5], [5.0], [6.5]])

    def test_no_edges_identity(self):
        g = Graph.from_edges(3, [])
        mask = ExpansionMask.empty(3)
        h = np.array([[1.0, 2.0], [0.5, 0.1], [3.0, 4.0]])
        dual = split_features(h, np.zeros((0, 4)), mask)
        out = panda_gin_layer(dual, partition_edges(g, mask), PandaGinLayerParams(identity_mlp(2), ad.parameter(0.0)))
        assert np.array_equal(out.low.data, h)

    def test_all_low_equals_gin(self, rng):
        g = random_graph(rng, 7)
        h = rng.standard_normal((7, 3))
        mlp = MLP(*(ad.parameter(rng.standard_normal(s)) for s in [(3, 3), (3,), (3, 3), (3,)]))
        eps = ad.parameter(0.2)
        mask = ExpansionMask.empty(7)
        dual = split_features(h, np.zeros((0, 5)), mask)
        out = panda_gin_layer(dual, partition_edges(g, mask), PandaGinLayerParams(mlp, eps))
        ref = gin_layer(ad.constant(h), g, mlp, eps).data
        assert np.allclose(out.low.data, ref, atol=1e-12)
        a = g.dense_adjacency()
        z = 1.2 * h + a @ h
        dense = np.maximum(z @ mlp.W1.data.T + mlp.b1.data, 0) @ mlp.W2.data.T + mlp.b2.data
        assert np.allclose(ref, dense, atol=1e-12)


class TestReunify:
    def test_all_low_identity(self, rng):
        h = rng.standard_normal((4, 3))
        dual = split_features(h, np.zeros((0, 5)), ExpansionMask.empty(4))
        assert np.array_equal(reunify(dual, np.zeros((3, 5))).data, h)

    def test_truncation_map(self, rng):
        mask = ExpansionMask.from_ids(3, [1])
        wide = rng.standard_normal((1, 5))
        dual = split_features(rng.standard_normal((2, 3)), wide, mask)
        W_down = np.hstack([np.eye(3), np.zeros((3, 2))])
        assert np.array_equal(reunify(dual, W_down).data[1], wide[0, :3])

    def test_node_order_matches_loop(self, rng):
        n, p, ph = 7, 2, 4
        mask = ExpansionMask.from_ids(n, [5, 1, 3])
        low, high = rng.standard_normal((4, p)), rng.standard_normal((3, ph))
        W_down = rng.standard_normal((p, ph))
        dual = split_features(low, high, mask)
        expected = np.zeros((n, p))
        li = hi = 0
        for v in range(n):
            if mask.bits[v]:
                expected[v] = W_down @ high[hi]
                hi += 1
            else:
                expected[v] = low[li]
                li += 1
        assert np.allclose(reunify(dual, W_down).data, expected, atol=1e-12)

    def test_mid_stack_usage_error(self):
        dual = split_features(np.zeros((2, 2)), np.zeros((0, 3)), ExpansionMask.empty(2))
        with pytest.raises(UsageError):
            reunify(dual, np.zeros((2, 3)), expected_depth=4)


class TestReadout:
    def test_equal_rows(self, rng):
        W, b = rng.standard_normal((2, 3)), rng.standard_normal(2)
        row = rng.standard_normal(3)
        out = readout_and_classify(np.tile(row, (5, 1)), W, b).data
        assert np.allclose(out, (W @ row + b)[None])
        single = readout_and_classify(row[None], W, b).data
        assert np.allclose(single, out)

    def test_multiset_invariant(self, rng):
        W, b = rng.standard_normal((2, 3)), rng.standard_normal(2)
        h = rng.standard_normal((6, 3))
        a = readout_and_classify(h, W, b).data
        c = readout_and_classify(h[rng.permutation(6)], W, b).data
        assert np.allclose(a, c, atol=1e-12)

    def test_batched(self, rng):
        W, b = rng.standard_normal((2, 3)), rng.standard_normal(2)
        h = rng.standard_normal((5, 3))
        out = readout_and_classify(h, W, b, graph_index=[0, 0, 1, 1, 1], num_graphs=2).data
        assert np.allclose(out[0], W @ h[:2].mean(0) + b)
        assert np.allclose(out[1], W @ h[2:].mean(0) + b)

    def test_empty(self):
        with pytest.raises(SizeError):
            readout_and_classify(np.zeros((0, 3)), np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(SizeError):
            readout_and_classify(np.zeros((1, 3)), np.zeros((2, 3)), np.zeros(2), graph_index=[0], num_graphs=2)
