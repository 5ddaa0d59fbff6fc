import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DIAMOND_EDGES, random_graph
from monstor.graph import (DirectedGraph, GraphFormatError, assign_weighted_cascade, from_edges,
                           generate_rmat, load_edge_list, propagate, write_edge_list)
from oracles import dense_propagate


def _write(tmp_path, text, name="g.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoad:
    def test_path_file(self, tmp_path):
        g = load_edge_list(_write(tmp_path, "0\t1\t0.5\n1\t2\t0.5\n"))
        assert (g.node_count, g.edge_count) == (3, 2)
        assert g.edges() == [(0, 1, 0.5), (1, 2, 0.5)]

    def test_empty_file(self, tmp_path):
        with pytest.raises(GraphFormatError, match="no edges"):
            load_edge_list(_write(tmp_path, "# only a comment\n\n"))

    def test_probability_out_of_range(self, tmp_path):
        with pytest.raises(GraphFormatError, match="line 1: probability out of range"):
            load_edge_list(_write(tmp_path, "0 1 1.5\n"))

    @pytest.mark.parametrize("text, msg", [
        ("a\tb\t0.1\na\tb\t0.2\n", "line 2: duplicate edge"),
        ("a\tb\t0.1\nc\tc\t0.2\n", "line 2: self-loop"),
        ("a\tb\n", "line 1: expected 3 fields"),
        ("a\tb\tx\n", "line 1: bad probability"),
    ])
    def test_errors_carry_line_numbers(self, tmp_path, text, msg):
        with pytest.raises(GraphFormatError, match=msg):
            load_edge_list(_write(tmp_path, text))

    def test_labels_dense_in_first_appearance_order(self, tmp_path):
        g = load_edge_list(_write(tmp_path, "# c\nzed\tamy\t0.25\namy\tbob\t1\n"),
                           node_map=tmp_path / "g.nodes.tsv")
        assert g.labels == ("zed", "amy", "bob")
        assert g.node_id("bob") == 2
        lines = (tmp_path / "g.nodes.tsv").read_text().splitlines()
        assert lines[1:] == ["zed\t0", "amy\t1", "bob\t2"]

    def test_round_trip(self, tmp_path, rng):
        n, edges = random_graph(rng)
        g = from_edges(edges, n)
        write_edge_list(g, tmp_path / "o.tsv", header="x")
        h = load_edge_list(tmp_path / "o.tsv")
        got = sorted((h.label(u), h.label(v), p) for u, v, p in h.edges())
        assert got == sorted((str(u), str(v), p) for u, v, p in edges)


class TestInvariants:
    def test_rejects_bad_construction(self):
        with pytest.raises(GraphFormatError):
            from_edges([(0, 0, 0.5)], 2)
        with pytest.raises(GraphFormatError):
            from_edges([(0, 1, 0.5), (0, 1, 0.2)], 2)
        with pytest.raises(GraphFormatError):
            from_edges([(0, 1, -0.1)], 2)

    def test_both_indexes_describe_same_edges(self, rng):
        for _ in range(20):
            n, edges = random_graph(rng)
            g = from_edges(edges, n)
            by_src = {(u, int(v)) for u in range(n) for v in g.out_neighbors(u)}
            by_dst = {(int(u), v) for v in range(n) for u in g.in_neighbors(v)}
            assert by_src == by_dst == {(u, v) for u, v, _ in edges}

    def test_immutable(self, diamond):
        with pytest.raises(ValueError):
            diamond.prob[0] = 0.9


class TestPropagate:
    def test_path(self, path_graph):
        np.testing.assert_array_equal(propagate([0, 0.5, 0], path_graph), [0, 0, 0.25])

    def test_zero(self, diamond):
        np.testing.assert_array_equal(propagate(np.zeros(4), diamond), np.zeros(4))

    def test_diamond(self, diamond):
        np.testing.assert_array_equal(propagate([1, 0, 0, 0], diamond), [0, 0.5, 0.5, 0])

    def test_length_mismatch(self, diamond):
        with pytest.raises(ValueError):
            propagate(np.zeros(3), diamond)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linear_and_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, edges = random_graph(rng, 2, 64, max_edges=200)
        g = from_edges(edges, n)
        u, v = rng.random(n), rng.random(n)
        a, b = rng.normal(size=2)
        lhs = propagate(a * u + b * v, g)
        rhs = a * propagate(u, g) + b * propagate(v, g)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)
        np.testing.assert_allclose(propagate(u, g), dense_propagate(n, edges, u.tolist()),
                                   rtol=0, atol=1e-12)


class TestRmat:
    def test_node_count_rule(self):
        g = generate_rmat(4, seed=3)
        assert g.node_count == 4 == math.ceil(0.2 * 16)
        assert 1 <= g.edge_count <= 16
        assert np.all(g.prob == 0)

    def test_deterministic(self):
        a, b = generate_rmat(12, seed=9), generate_rmat(12, seed=9)
        assert a.edges() == b.edges()
        assert a.edges() != generate_rmat(12, seed=10).edges()

    def test_bad_params(self):
        with pytest.raises(ValueError, match="sum to 1"):
            generate_rmat(8, 0.5, 0.1, 0.1, 0.1)
        with pytest.raises(ValueError):
            generate_rmat(3)

    def test_skewed_towards_a_quadrant(self):
        g = generate_rmat(14, seed=0)
        assert g.node_count == math.ceil(0.2 * 2**14)
        assert g.edge_count <= 2**14
        deg = np.sort(g.out_degree())[::-1]
        assert deg[0] > 20 * max(1.0, np.median(deg))  # heavy-tailed degrees

    def test_node_count_is_fifth_of_edges(self):
        # the generator needs only the node count rule at this scale
        assert math.ceil(0.2 * 2**20) == 209716


class TestWeightedCascade:
    def test_star(self):
        g = assign_weighted_cascade(from_edges([(0, 3, 0), (1, 3, 0), (2, 3, 0)], 4))
        np.testing.assert_array_equal(g.prob, [1 / 3] * 3)

    def test_single_edge(self):
        assert assign_weighted_cascade(from_edges([(0, 1, 0)], 2)).prob.tolist() == [1.0]

    def test_indegree_four(self):
        g = assign_weighted_cascade(from_edges([(i, 4, 0) for i in range(4)], 5))
        assert g.prob.tolist() == [0.25] * 4 and g.prob.sum() == 1.0

    def test_no_edges(self):
        with pytest.raises(ValueError):
            assign_weighted_cascade(DirectedGraph(2, [], [], []))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(4, 12), st.integers(0, 1000))
    def test_in_probabilities_sum_to_one(self, k, seed):
        g = assign_weighted_cascade(generate_rmat(k, seed=seed))
        sums = np.bincount(g.dst, weights=g.prob, minlength=g.node_count)
        has_in = g.in_degree() > 0
        np.testing.assert_allclose(sums[has_in], 1.0, rtol=0, atol=1e-12)
        assert np.all(sums[~has_in] == 0)


def test_diamond_fixture_matches_constant(diamond):
    assert diamond.edges() == DIAMOND_EDGES
