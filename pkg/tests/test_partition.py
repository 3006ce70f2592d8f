import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasdi.circuits import reference_circuit
from rasdi.errors import EmptyInterface, NotACover, UnknownSelector
from rasdi.partition import AdjacencyGraph, grow_overlap, interface_map, partition_from_json

PATH4 = AdjacencyGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])


def _sets(arrs):
    return [arr.tolist() for arr in arrs]


def test_path_graph_p0():
    part = grow_overlap(PATH4, [[0, 1], [2, 3]], 0)
    assert _sets(part.extended) == [[0, 1], [2, 3]]
    assert _sets(part.external) == [[2], [1]]


def test_path_graph_p1():
    part = grow_overlap(PATH4, [[0, 1], [2, 3]], 1)
    assert _sets(part.extended) == [[0, 1, 2], [1, 2, 3]]
    assert _sets(part.external) == [[3], [0]]
    imap = interface_map(part)
    assert imap.gamma.tolist() == [3, 0] and imap.n_gamma == 2
    assert imap.slots(1) == slice(1, 2)


def test_restrictions():
    part = grow_overlap(PATH4, [[0, 1], [2, 3]], 1)
    v = np.array([10.0, 20.0, 30.0, 40.0])
    np.testing.assert_array_equal(part.restrict(v, 0), [10, 20, 30])
    np.testing.assert_array_equal(part.restrict(v, 0, "owned"), [10, 20, 0])
    np.testing.assert_array_equal(part.restrict(v, 0, "base"), [10, 20])
    np.testing.assert_array_equal(part.restrict(v, 0, "external"), [40])
    r = part.operator(0)
    np.testing.assert_array_equal(r.T @ r @ v, [10, 20, 30, 0])
    with pytest.raises(UnknownSelector):
        part.restrict(v, 0, "sideways")


def test_kind_restrictions():
    mask = np.array([True, True, False, False])
    part = grow_overlap(PATH4, [[0, 1], [2, 3]], 1, mask)
    assert part.n1 == 2
    np.testing.assert_array_equal(part.restrict(np.array([1.0, 2.0]), 0, kind="d"), [1, 2])
    np.testing.assert_array_equal(part.restrict(np.array([7.0, 8.0]), 0, kind="a"), [7])
    np.testing.assert_array_equal(part.restrict(np.array([7.0, 8.0]), 0, "owned", kind="a"), [0])


def test_not_a_cover():
    with pytest.raises(NotACover):
        grow_overlap(PATH4, [[0, 1], [1, 2, 3]], 0)
    with pytest.raises(NotACover):
        grow_overlap(PATH4, [[0, 1], [2]], 0)
    with pytest.raises(ValueError):
        grow_overlap(PATH4, [[0, 1], [2, 3]], -1)


def test_empty_interface():
    graph = AdjacencyGraph.from_edges(4, [(0, 1), (2, 3)])
    part = grow_overlap(graph, [[0, 1], [2, 3]], 0)
    with pytest.raises(EmptyInterface):
        interface_map(part)


def test_swallowed_flag():
    part = grow_overlap(PATH4, [[0], [1, 2, 3]], 2)
    assert part.swallowed == (True, True)
    assert not any(grow_overlap(PATH4, [[0, 1], [2, 3]], 0).swallowed)


def test_json_round_trip():
    names = ["a", "b", "c", "d"]
    part = grow_overlap(PATH4, [[0, 1], [2, 3]], 1, np.array([True, False, False, False]))
    back = partition_from_json(part.to_json(names), PATH4, names)
    assert _sets(back.extended) == _sets(part.extended)
    np.testing.assert_array_equal(back.diff_mask, part.diff_mask)


@pytest.mark.parametrize("which, inner, outer", [("ex1", ["e1", "e2"], ["i1"]), ("ex2", ["e1", "er"], ["i1"])])
def test_reference_interfaces(which, inner, outer):
    circ, part = reference_circuit(which)
    names = circ.names
    assert sorted(names[k] for k in part.external[0]) == sorted(inner)
    assert [names[k] for k in part.external[1]] == outer
    assert interface_map(part).n_gamma == 3


@st.composite
def graphs_and_splits(draw):
    n = draw(st.integers(2, 12))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    edges += [(k, k + 1) for k in range(n - 1)]
    owner = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    base = [[v for v in range(n) if owner[v] == i] for i in range(3)]
    base = [b for b in base if b]
    return AdjacencyGraph.from_edges(n, edges), base, draw(st.integers(0, 3))


@settings(max_examples=80, deadline=None)
@given(graphs_and_splits())
def test_overlap_invariants(args):
    graph, base, p = args
    part = grow_overlap(graph, base, p)
    cover = np.concatenate(part.base)
    assert sorted(cover.tolist()) == list(range(graph.n))
    for i in range(part.n_parts):
        ext, out = set(part.extended[i].tolist()), set(part.external[i].tolist())
        assert set(part.base[i].tolist()) <= ext
        assert not ext & out
        assert ext | out == graph.ring(ext)
        for arr in (part.extended[i], part.external[i]):
            assert np.all(np.diff(arr) > 0)
        # the extended set is exactly p rings around the base
        w = set(part.base[i].tolist())
        for _ in range(p):
            w = graph.ring(w)
        assert w == ext
        r = part.operator(i)
        proj = r.T @ r
        np.testing.assert_array_equal(np.diag(proj), np.isin(np.arange(graph.n), part.extended[i]))
    # owned restrictions add up to the identity
    total = sum(part.operator(i).T @ part.operator(i, "owned") for i in range(part.n_parts))
    np.testing.assert_array_equal(total, np.eye(graph.n))
