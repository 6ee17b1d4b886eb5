import itertools
import math

import pytest
from hypothesis import given, strategies as st

from sparseif.trees import (Tree, add_leaf, canonical_class, enumerate_trees, parse_tree, path, singleton,
                            star)


def all_parent_arrays(k):
    """Brute-force oracle: every array with parent(j) in [1, j-1]."""
    return [tuple(p) for p in itertools.product(*[range(1, j) for j in range(2, k + 1)])]


@st.composite
def trees(draw, max_size=8):
    k = draw(st.integers(1, max_size))
    return Tree(tuple(draw(st.integers(1, j - 1)) for j in range(2, k + 1)))


def test_singleton_base_case():
    t = singleton()
    assert t.size == 1 and len(t) == 1
    assert t.edges == []
    assert str(t) == "singleton" and t.serialize() == ""


def test_add_leaf_examples():
    p2 = add_leaf(singleton(), 1)
    assert p2.edges == [(1, 2)]
    assert add_leaf(p2, 1).edges == [(1, 2), (1, 3)]
    assert add_leaf(p2, 2).edges == [(1, 2), (2, 3)]
    assert add_leaf(p2, 1) == star(3) and add_leaf(p2, 2) == path(3)


def test_add_leaf_out_of_range():
    with pytest.raises(IndexError):
        add_leaf(path(2), 3)
    with pytest.raises(IndexError):
        add_leaf(path(2), 0)


def test_invalid_parent_rejected():
    with pytest.raises(ValueError):
        Tree((2,))
    with pytest.raises(ValueError):
        Tree((1, 0))


@pytest.mark.parametrize("n_max,counts", [(1, [1]), (3, [1, 1, 2]), (5, [1, 1, 2, 6, 24])])
def test_enumeration_counts(n_max, counts):
    assert [len(l) for l in enumerate_trees(n_max)] == counts


def test_enumeration_matches_bruteforce_oracle():
    levels = enumerate_trees(6)
    for k, level in enumerate(levels, start=1):
        assert sorted(t.parent for t in level) == sorted(all_parent_arrays(k))
        assert len(level) == math.factorial(k - 1)
        for t in level:
            assert all(p < j for j, p in enumerate(t.parent, start=2))


def test_enumeration_limits():
    with pytest.raises(ValueError):
        enumerate_trees(0)
    with pytest.raises(ValueError):
        enumerate_trees(9)
    assert len(enumerate_trees(9, allow_large=True)[-1]) == math.factorial(8)


def test_dedup_gives_rooted_tree_counts():
    # number of unlabeled rooted trees with n vertices
    assert [len(l) for l in enumerate_trees(8, dedup_isomorphic=True)] == [1, 1, 2, 4, 9, 20, 48, 115]


def test_canonical_class_examples():
    assert canonical_class(singleton()) == "()"
    assert canonical_class(star(3)) != canonical_class(path(3))
    # 1->2, 1->3, 3->4 is the same shape as 1->2, 2->3, 1->4
    assert canonical_class(Tree((1, 1, 3))) == canonical_class(Tree((1, 2, 1)))
    assert canonical_class(Tree((1, 1, 3))) != canonical_class(Tree((1, 1, 1)))


@given(trees(), st.data())
def test_add_leaf_then_remove_last(t, data):
    m = data.draw(st.integers(1, t.size))
    grown = add_leaf(t, m)
    assert grown.size == t.size + 1
    assert grown.parent_of(grown.size) == m
    assert grown.remove_last() == t


@given(trees())
def test_serialize_round_trip(t):
    assert parse_tree(t.serialize()) == t
    assert parse_tree(str(t)) == t


@given(trees())
def test_structure_invariants(t):
    assert len(t.edges) == t.size - 1
    assert sorted(t.subtree(1)) == list(range(1, t.size + 1))
    assert sum(len(c) for c in t.children.values()) == t.size - 1


@given(trees(max_size=7), st.randoms(use_true_random=False))
def test_canonical_class_invariant_under_relabeling(t, rnd):
    # relabel by a random increasing order: visit vertices whose parent is already placed
    placed, order = {1: 1}, [1]
    frontier = list(t.children[1])
    while frontier:
        v = frontier.pop(rnd.randrange(len(frontier)))
        placed[v] = len(order) + 1
        order.append(v)
        frontier.extend(t.children[v])
    parents = [0] * (t.size - 1)
    for v in order[1:]:
        parents[placed[v] - 2] = placed[t.parent_of(v)]
    relabeled = Tree(tuple(parents))
    assert canonical_class(relabeled) == canonical_class(t)


def test_parse_tree_errors():
    with pytest.raises(ValueError):
        parse_tree("1,x")
