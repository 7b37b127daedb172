import json
import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import graphs
from panda.errors import BoundsError, ParseError, SchemaError, ShapeError, SizeError
from panda.graph import (
    Graph,
    GraphSample,
    all_pairs_distances,
    as_features,
    degrees,
    disjoint_union,
    load_dataset,
    read_split_manifest,
    save_dataset,
    shift_matrix,
    shortest_path_lengths,
    split_dataset,
    split_indices,
    write_split_manifest,
)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


class TestGraph:
    def test_from_edges_canonical(self):
        g = Graph.from_edges(4, [(2, 0), (0, 1), (1, 0), (3, 3), (0, 2)])
        assert g.num_edges == 2
        assert list(g.row_offsets) == [0, 2, 3, 4, 4]
        assert list(g.neighbors(0)) == [1, 2]
        assert g.edges() == [(0, 1), (0, 2)]

    def test_arrays_are_read_only(self, path3):
        with pytest.raises(ValueError):
            path3.col_indices[0] = 2

    def test_bounds(self):
        with pytest.raises(BoundsError):
            Graph.from_edges(3, [(0, 5)])
        with pytest.raises(BoundsError):
            Graph.from_edges(3, [(-1, 0)])

    def test_bad_offsets(self):
        with pytest.raises(ShapeError):
            Graph(3, np.array([0, 1]), np.array([1]))

    def test_empty_graph(self):
        g = Graph.from_edges(0, [])
        assert g.num_nodes == 0 and g.num_edges == 0

    def test_permute_and_equality(self, path3):
        g = path3.permute([2, 1, 0])
        assert g == path3
        assert hash(g) == hash(path3)
        h = path3.permute([1, 0, 2])
        assert h.edges() == [(0, 1), (0, 2)]

    @given(graphs())
    def test_invariants(self, g):
        src, dst = g.directed_edges()
        pairs = set(zip(src.tolist(), dst.tolist()))
        assert all((v, u) in pairs for u, v in pairs)
        assert all(u != v for u, v in pairs)
        for v in range(g.num_nodes):
            nb = g.neighbors(v)
            assert np.all(np.diff(nb) > 0)
        assert degrees(g).sum() == 2 * g.num_edges


class TestDegreesAndPaths:
    def test_degrees(self, path3):
        assert degrees(path3).tolist() == [1, 2, 1]
        assert degrees(path3, with_self_loops=True).tolist() == [2, 3, 2]
        g = Graph.from_edges(3, [(0, 1)])
        assert degrees(g).tolist() == [1, 1, 0]

    def test_shortest_paths(self, path3, cycle4):
        assert shortest_path_lengths(path3, 0).tolist() == [0, 1, 2]
        assert shortest_path_lengths(cycle4, 0).tolist() == [0, 1, 2, 1]
        d = shortest_path_lengths(Graph.from_edges(2, []), 0)
        assert d[0] == 0 and math.isinf(d[1])
        with pytest.raises(BoundsError):
            shortest_path_lengths(path3, 3)

    def test_cycle_distances_by_enumeration(self, cycle4):
        # brute force: shortest length over all simple paths
        adj = cycle4.dense_adjacency()

        def paths(u, target, seen):
            if u == target:
                yield 0
                return
            for w in np.flatnonzero(adj[u]):
                if w not in seen:
                    for rest in paths(int(w), target, seen | {int(w)}):
                        yield rest + 1

        expected = [min(paths(0, t, {0})) for t in range(4)]
        assert shortest_path_lengths(cycle4, 0).tolist() == expected

    def test_all_pairs_symmetric(self, cycle4):
        d = all_pairs_distances(cycle4)
        assert np.array_equal(d, d.T)


class TestShiftMatrix:
    def test_sym_normalized_entries(self, path3):
        s = shift_matrix(path3).values.toarray()
        d = np.array([2, 3, 2])
        assert s[0, 1] == pytest.approx(1 / math.sqrt(d[0] * d[1]))
        assert s[1, 1] == pytest.approx(1 / 3)
        assert s[0, 2] == 0

    def test_adjacency_kinds(self, path3):
        a = shift_matrix(path3, "adjacency")
        assert a.kind == "adjacency"
        assert np.array_equal(a.values.toarray(), path3.dense_adjacency())
        b = shift_matrix(path3, "adjacency", self_loops=True)
        assert b.kind == "adjacency+I"
        assert np.array_equal(b.values.toarray(), path3.dense_adjacency() + np.eye(3))

    def test_isolated_node_has_unit_self_weight(self):
        s = shift_matrix(Graph.from_edges(3, [(0, 1)])).values.toarray()
        assert s[2, 2] == 1.0

    def test_power(self, path3):
        s = shift_matrix(path3, "adjacency")
        assert s.power(2).toarray()[0, 2] == 1
        assert np.array_equal(s.power(0).toarray(), np.eye(3))

    def test_unknown_kind(self, path3):
        with pytest.raises(ValueError):
            shift_matrix(path3, "laplacian")

    @given(graphs(min_nodes=1))
    @settings(max_examples=50)
    def test_sym_normalized_spectrum(self, g):
        # row sums are positive and the spectrum lies in (-1, 1] with top eigenvalue 1
        s = shift_matrix(g).values.toarray()
        assert np.allclose(s, s.T)
        assert np.all(s.sum(axis=1) > 0)
        lam = np.linalg.eigvalsh(s)
        assert lam.max() == pytest.approx(1.0, abs=1e-9)
        assert lam.min() > -1.0

    def test_row_sums_can_exceed_one(self):
        # star centre: 1/3 + 2/sqrt(6) > 1, so row sums are not bounded by one
        s = shift_matrix(Graph.from_edges(3, [(0, 1), (0, 2)])).values.toarray()
        assert s[0].sum() == pytest.approx(1 / 3 + 2 / math.sqrt(6))
        assert s[0].sum() > 1


class TestFeaturesAndUnion:
    def test_as_features_validation(self):
        with pytest.raises(ShapeError):
            as_features([1.0, 2.0])
        with pytest.raises(SchemaError):
            as_features([[np.nan]])
        with pytest.raises(ShapeError):
            as_features([[1.0]], num_nodes=2)

    def test_sample_checks_rows(self, path3):
        with pytest.raises(ShapeError):
            GraphSample(path3, np.zeros((2, 1)), 0)

    def test_disjoint_union(self, path3, cycle4):
        g, off = disjoint_union([path3, cycle4])
        assert off.tolist() == [0, 3, 7]
        assert g.num_edges == 2 + 4
        assert (3, 4) in g.edges() and (3, 6) in g.edges()
        assert (2, 3) not in g.edges()


class TestDatasetIO:
    def test_smallest_record(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":2,"edges":[[0,1]],"node_feat":[[1],[0]],"label":0}'])
        (s,) = load_dataset(p)
        assert s.graph.num_edges == 1
        assert s.features.shape == (2, 1)

    def test_duplicate_directions(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":2,"edges":[[0,1],[1,0]],"node_feat":[[1],[0]],"label":0}'])
        (s,) = load_dataset(p)
        assert degrees(s.graph).tolist() == [1, 1]

    def test_bounds_error(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":3,"edges":[[0,5]],"node_feat":[[1],[0],[0]],"label":0}'])
        with pytest.raises(BoundsError, match="line 1"):
            load_dataset(p)

    def test_parse_error_has_line(self, tmp_path):
        good = '{"num_nodes":1,"edges":[],"node_feat":[[1]],"label":0}'
        p = _write_lines(tmp_path / "d.jsonl", [good, "{not json"])
        with pytest.raises(ParseError) as info:
            load_dataset(p)
        assert info.value.line == 2

    def test_missing_key(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":1,"edges":[],"label":0}'])
        with pytest.raises(ParseError, match="node_feat"):
            load_dataset(p)

    def test_width_mismatch(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", [
            '{"num_nodes":1,"edges":[],"node_feat":[[1]],"label":0}',
            '{"num_nodes":1,"edges":[],"node_feat":[[1,2]],"label":1}',
        ])
        with pytest.raises(SchemaError):
            load_dataset(p)

    def test_row_count_mismatch(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":2,"edges":[],"node_feat":[[1]],"label":0}'])
        with pytest.raises(SchemaError):
            load_dataset(p)

    def test_bad_label(self, tmp_path):
        p = _write_lines(tmp_path / "d.jsonl", ['{"num_nodes":1,"edges":[],"node_feat":[[1]],"label":-1}'])
        with pytest.raises(ParseError):
            load_dataset(p)

    def test_round_trip(self, tmp_path, rng):
        from conftest import random_graph

        samples = [GraphSample(random_graph(rng, n), rng.standard_normal((n, 3)), n % 2) for n in range(1, 8)]
        p = tmp_path / "d.jsonl"
        save_dataset(samples, p)
        back = load_dataset(p)
        for a, b in zip(samples, back):
            assert a.graph == b.graph
            assert np.array_equal(a.features, b.features)
            assert a.label == b.label
        q = tmp_path / "e.jsonl"
        save_dataset(back, q)
        assert p.read_bytes() == q.read_bytes()

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset(tmp_path / "x", format="csv")


class TestSplits:
    def test_sizes(self):
        assert [len(x) for x in split_indices(20, 0)] == [16, 2, 2]
        assert [len(x) for x in split_indices(188, 0)] == [152, 18, 18]
        # floor(188 * 0.1) = 18 and the remainder goes to train
        assert 188 - 2 * math.floor(188 * 0.1) == 152

    def test_deterministic_and_disjoint(self):
        a = split_indices(50, 7)
        b = split_indices(50, 7)
        assert all(x == y for x, y in zip(a, b))
        merged = sorted(i for part in a for i in part)
        assert merged == list(range(50))
        assert split_indices(50, 8)[0] != a[0]

    def test_too_small(self):
        with pytest.raises(SizeError):
            split_indices(9, 0)

    def test_split_dataset(self):
        data = list("abcdefghijkl")
        tr, va, te = split_dataset(data, 3)
        assert sorted(tr + va + te) == data

    def test_manifest_round_trip(self, tmp_path):
        parts = split_indices(30, 1)
        p = tmp_path / "m.split"
        write_split_manifest(p, parts)
        assert len(p.read_text().splitlines()) == 3
        assert read_split_manifest(p) == tuple(list(x) for x in parts)

    def test_manifest_bad(self, tmp_path):
        p = tmp_path / "m.split"
        p.write_text("1 2\n")
        with pytest.raises(ParseError):
            read_split_manifest(p)
