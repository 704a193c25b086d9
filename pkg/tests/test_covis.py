import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maptwin.covis import (CovisibilityGraph, Frame, NotPositiveDefinite, UncertaintyParams, add_frame,
                           cut_vertices, dump_graph, edge_weight, is_connected, log_det_spd,
                           parse_graph_snapshot, reduced_laplacian, remove_frames, spanning_tree_weight,
                           uncertainty, uncertainty_direct)


def weighted_graph(n, edges):
    """A graph with prescribed integer edge weights, realised through shared points."""
    pts = {i: set() for i in range(n)}
    nxt = 0
    for (a, b), w in edges.items():
        for _ in range(w):
            pts[a].add(nxt)
            pts[b].add(nxt)
            nxt += 1
    return CovisibilityGraph.from_frames(Frame(i, 0, frozenset(pts[i])) for i in range(n))


def triangle(w=1):
    return weighted_graph(3, {(0, 1): w, (1, 2): w, (0, 2): w})


def brute_tree_sum(n, edges):
    """Independent Kirchhoff oracle: count edge subsets that form trees via DFS."""
    items = list(edges.items())
    total = 0
    for sub in itertools.combinations(items, n - 1):
        adj = {i: [] for i in range(n)}
        for (a, b), _ in sub:
            adj[a].append(b)
            adj[b].append(a)
        seen, todo = {0}, [0]
        while todo:
            for nb in adj[todo.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        if len(seen) == n:
            total += math.prod(w for _, w in sub)
    return total


# ---------------------------------------------------------------- edge weights

def test_edge_weight_examples():
    assert edge_weight(Frame(0, 0, {1, 2, 3}), Frame(1, 0, {2, 3, 4})) == 2
    assert edge_weight(Frame(0, 0, {1, 2}), Frame(1, 0, {5, 6})) == 0
    s = frozenset(range(7))
    assert edge_weight(Frame(0, 0, s), Frame(1, 0, s)) == 7


@given(st.frozensets(st.integers(0, 60)), st.frozensets(st.integers(0, 60)))
def test_edge_weight_symmetric_and_matches_sets(a, b):
    f, g = Frame(0, 0, a), Frame(1, 0, b)
    assert edge_weight(f, g) == edge_weight(g, f) == len(a & b)


def test_negative_point_id_rejected():
    with pytest.raises(ValueError):
        Frame(0, 0, {-1})


# ------------------------------------------------------------ graph operations

def test_add_frame_cases():
    g = add_frame(CovisibilityGraph(), Frame(0, 0, {1, 2}))
    assert len(g) == 1 and g.edges == {}
    g = add_frame(g, Frame(1, 0, {2, 3}))
    g3 = add_frame(g, Frame(2, 0, {1, 3, 9}))
    assert len(g3) == 3
    assert g3.edges == {(0, 1): 1, (0, 2): 1, (1, 2): 1}
    lonely = add_frame(g, Frame(5, 0, {40}))
    assert len(lonely) == 3 and not is_connected(lonely)


def test_add_duplicate_rejected():
    g = add_frame(CovisibilityGraph(), Frame(0, 0, {1}))
    with pytest.raises(ValueError, match="already"):
        add_frame(g, Frame(0, 1, {2}))


def test_zero_weight_edges_absent():
    g = CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {2}), Frame(2, 0, {1, 2})])
    assert (0, 1) not in g.edges
    assert all(w >= 1 for w in g.edges.values())


def test_remove_frames_cases():
    t = triangle()
    assert remove_frames(t, set()) == t
    two = remove_frames(t, {2})
    assert len(two) == 2 and len(two.edges) == 1
    path = weighted_graph(3, {(0, 1): 1, (1, 2): 1})
    assert not is_connected(remove_frames(path, {1}))
    with pytest.raises(KeyError):
        remove_frames(t, {7})


@given(st.lists(st.frozensets(st.integers(0, 20), min_size=1), min_size=1, max_size=6),
       st.frozensets(st.integers(0, 20), min_size=1))
def test_add_then_remove_roundtrip(sets, extra):
    g = CovisibilityGraph.from_frames(Frame(i, 0, s) for i, s in enumerate(sets))
    assert remove_frames(add_frame(g, Frame(99, 1, extra)), {99}) == g


def test_is_connected_conventions():
    assert is_connected(triangle())
    assert not is_connected(CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {2})]))
    assert is_connected(CovisibilityGraph.from_frames([Frame(0, 0, {1})]))
    assert is_connected(CovisibilityGraph())


def test_cut_vertices_against_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(60):
        n = int(rng.integers(2, 8))
        edges = {(a, b): 1 for a, b in itertools.combinations(range(n), 2) if rng.random() < 0.4}
        g = weighted_graph(n, edges)
        if not is_connected(g):
            continue
        expect = {v for v in range(n) if not is_connected(remove_frames(g, {v}))}
        assert cut_vertices(g) == expect


# ----------------------------------------------------------------- matrices

def test_reduced_laplacian_examples():
    g = weighted_graph(2, {(0, 1): 3})
    for a in (0, 1):
        np.testing.assert_array_equal(reduced_laplacian(g, a), [[3.0]])
    for a in range(3):
        np.testing.assert_array_equal(reduced_laplacian(triangle(), a), [[2, -1], [-1, 2]])
    disc = CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {1}), Frame(2, 0, {5})])
    assert abs(np.linalg.det(reduced_laplacian(disc))) < 1e-12


def test_reduced_laplacian_needs_two_nodes():
    with pytest.raises(ValueError):
        reduced_laplacian(CovisibilityGraph.from_frames([Frame(0, 0, {1})]))


def test_log_det_examples():
    assert log_det_spd([[1.0]]) == 0.0
    assert log_det_spd([[2, -1], [-1, 2]]) == pytest.approx(math.log(3), abs=1e-12)
    with pytest.raises(NotPositiveDefinite):
        log_det_spd([[1, 1], [1, 1]])


def test_log_det_input_checks():
    with pytest.raises(ValueError):
        log_det_spd(np.ones((2, 3)))
    with pytest.raises(ValueError):
        log_det_spd([[1, 0.5], [0.0, 1]])
    # asymmetry inside the tolerance is accepted
    log_det_spd([[2, 1 + 1e-12], [1, 2]])


def test_log_det_matches_numpy_on_random_spd():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=(6, 6))
        m = a @ a.T + 0.1 * np.eye(6)
        assert log_det_spd(m) == pytest.approx(np.linalg.slogdet(m)[1], rel=1e-10)


# ---------------------------------------------------------------- uncertainty

def test_uncertainty_examples():
    assert uncertainty(weighted_graph(2, {(0, 1): 1})) == 0.0
    assert uncertainty(triangle()) == pytest.approx(-6 * math.log(3), abs=1e-12)
    path = weighted_graph(3, {(0, 1): 1, (1, 2): 1})
    assert uncertainty(path) == pytest.approx(0.0, abs=1e-12)
    assert uncertainty(triangle()) < uncertainty(path)
    assert uncertainty(CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {2})])) == math.inf
    assert uncertainty(CovisibilityGraph.from_frames([Frame(0, 0, {1})])) == math.inf


def test_uncertainty_scale_term():
    g = triangle(2)
    for k in (0.5, 2.0):
        shift = -6 * (len(g) - 1) * math.log(k)
        assert uncertainty(g, UncertaintyParams(k)) == pytest.approx(uncertainty(g) + shift, abs=1e-12)


def test_uncertainty_params_validation():
    with pytest.raises(ValueError):
        UncertaintyParams(0.0)
    with pytest.raises(ValueError):
        UncertaintyParams(1.0, pi_dim=3)


def test_kronecker_exponents_pinned():
    """Factored and explicit Kronecker forms agree only with det(A)^6 det(Pi)^(n-1).

    On a graph whose reduced Laplacian has det != 1 and with kappa != 1, the
    swapped exponents give a different number, so this test catches that mutation.
    """
    g = weighted_graph(4, {(0, 1): 2, (1, 2): 3, (2, 3): 1, (0, 3): 2})
    p = UncertaintyParams(2.0)
    n_red = len(g) - 1
    ld = math.log(spanning_tree_weight(g))
    right = -(6 * ld + n_red * 6 * math.log(2.0))
    swapped = -(n_red * ld + 6 * 6 * math.log(2.0))
    assert uncertainty(g, p) == pytest.approx(right, abs=1e-10)
    assert uncertainty_direct(g, p) == pytest.approx(right, abs=1e-8)
    assert abs(swapped - right) > 1.0


def test_uncertainty_anchor_independent():
    g = weighted_graph(5, {(0, 1): 2, (1, 2): 3, (2, 3): 1, (3, 4): 4, (0, 4): 1, (1, 3): 5})
    lds = [np.linalg.slogdet(reduced_laplacian(g, a))[1] for a in range(5)]
    assert max(lds) - min(lds) < 1e-9


# ------------------------------------------------------------ spanning trees

def test_spanning_tree_examples():
    assert spanning_tree_weight(triangle()) == 3.0
    assert spanning_tree_weight(weighted_graph(2, {(0, 1): 5})) == 5.0
    assert spanning_tree_weight(CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {2})])) == 0.0


def test_spanning_tree_matches_independent_oracle():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(2, 7))
        edges = {e: int(rng.integers(1, 5)) for e in itertools.combinations(range(n), 2) if rng.random() < 0.6}
        assert spanning_tree_weight(weighted_graph(n, edges)) == brute_tree_sum(n, edges)


def test_spanning_tree_cap():
    g = CovisibilityGraph.from_frames(Frame(i, 0, {0}) for i in range(9))
    with pytest.raises(ValueError):
        spanning_tree_weight(g)


# ------------------------------------------------------------- serialization

def test_snapshot_roundtrip():
    g = CovisibilityGraph.from_frames([Frame(3, 1, {1, 2, 3}, True), Frame(1, 0, {2, 3}), Frame(7, 2, {3, 9})])
    text = dump_graph(g)
    assert text.splitlines()[0] == "1 0 2 0"
    nodes, edges = parse_graph_snapshot(text)
    assert nodes == [(1, 0, 2, False), (3, 1, 3, True), (7, 2, 2, False)]
    assert edges == g.edges


def test_snapshot_golden():
    g = triangle(2)
    assert dump_graph(g) == "0 0 4 0\n1 0 4 0\n2 0 4 0\n0 1 2\n0 2 2\n1 2 2\n"


def test_snapshot_rejects_bad_lines():
    with pytest.raises(ValueError, match="line 2"):
        parse_graph_snapshot("0 0 1 0\n1 x 2\n")
    with pytest.raises(ValueError, match="fields"):
        parse_graph_snapshot("0 1\n")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.data())
def test_matrix_tree_property(n, data):
    pairs = list(itertools.combinations(range(n), 2))
    chosen = data.draw(st.lists(st.sampled_from(pairs), min_size=n - 1, unique=True))
    edges = {e: data.draw(st.integers(1, 9)) for e in chosen}
    g = weighted_graph(n, edges)
    if not is_connected(g):
        return
    want = spanning_tree_weight(g)
    for a in range(n):
        got = math.exp(log_det_spd(reduced_laplacian(g, a)))
        assert abs(got - want) / want < 1e-9


def test_pendant_node_shifts_u_by_its_weight():
    # a leaf joined by one edge of weight w multiplies the tree sum by w
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        edges = {(i, i + 1): int(rng.integers(1, 10)) for i in range(n - 1)}
        g = weighted_graph(n, edges)
        for w in (1, 2, 7):
            for kappa in (0.5, 1.0, 2.0):
                p = UncertaintyParams(kappa)
                g2 = weighted_graph(n + 1, {**edges, (int(rng.integers(n)), n): w})
                assert uncertainty(g2, p) - uncertainty(g, p) == pytest.approx(
                    -6 * math.log(w) - 6 * math.log(kappa), abs=1e-9)


def test_extra_edges_and_multi_edge_nodes_strictly_lower_u():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        edges = {(i, i + 1): int(rng.integers(1, 10)) for i in range(n - 1)}
        u = uncertainty(weighted_graph(n, edges))
        if n >= 3:
            assert uncertainty(weighted_graph(n, {**edges, (0, n - 1): 1})) < u
        two = {**edges, (0, n): 1, (n - 1, n): 1}
        assert uncertainty(weighted_graph(n + 1, two)) < u
