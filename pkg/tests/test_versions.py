import random

import pytest

from stratakv.errors import (DeletedVersionError, RootDeletionError,
                             RootExistsError, UnknownVersionError,
                             VersionHasChildrenError)
from stratakv.versions import VersionTree

from conftest import random_tree


def test_create_root_empty_tree():
    tree = VersionTree()
    assert tree.create_root() == 0
    assert tree.parent(0) is None
    assert tree.children(0) == []


def test_create_root_twice_errors():
    tree = VersionTree()
    tree.create_root()
    with pytest.raises(RootExistsError):
        tree.create_root()


def test_clone_assigns_dense_ids_in_order():
    tree = VersionTree()
    tree.create_root()
    assert tree.clone(0) == 1
    assert tree.clone(0) == 2
    assert tree.children(0) == [1, 2]


def test_clone_chain_path():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(0)
    assert tree.clone(1) == 3
    assert tree.path(3) == (3, 1, 0)


def test_clone_of_deleted_version_errors():
    tree = VersionTree()
    tree.create_root()
    v1 = tree.clone(0)
    tree.delete_version(v1)
    with pytest.raises(DeletedVersionError):
        tree.clone(v1)


def test_clone_of_unknown_version_errors():
    tree = VersionTree()
    tree.create_root()
    with pytest.raises(UnknownVersionError):
        tree.clone(7)


def test_closest_ancestor_chain():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)  # v1
    tree.clone(0)  # v2
    tree.clone(1)  # v3: v3 -> v1 -> v0
    assert tree.closest_ancestor_in(3, {0, 1}) == 1


def test_closest_ancestor_sibling_is_absent():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)  # v1
    tree.clone(0)  # v2
    assert tree.closest_ancestor_in(2, {1}) is None


def test_closest_ancestor_identity():
    tree = VersionTree()
    tree.create_root()
    assert tree.closest_ancestor_in(0, {0}) == 0


def test_delete_version_leaf_then_queries_error():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(1)  # v2 leaf
    tree.delete_version(2)
    assert tree.is_deleted(2)
    with pytest.raises(DeletedVersionError):
        tree.check_usable(2)


def test_delete_version_with_children_errors():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(1)
    with pytest.raises(VersionHasChildrenError):
        tree.delete_version(1)


def test_delete_root_errors():
    tree = VersionTree()
    tree.create_root()
    with pytest.raises(RootDeletionError):
        tree.delete_version(0)


def test_delete_parent_after_all_children_deleted():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(1)
    tree.delete_version(2)
    tree.delete_version(1)  # now childless in the live tree
    assert tree.is_deleted(1)


def test_parent_id_always_below_child_id():
    rng = random.Random(11)
    for _ in range(50):
        tree = random_tree(rng, rng.randrange(2, 30))
        for v in tree.all_versions():
            parent = tree.parent(v)
            if parent is not None:
                assert parent < v


def _brute_closest(tree, v, members):
    """Independent reference: breadth-first depth labels, then argmax."""
    depth = {0: 0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for c in tree.children(u):
                depth[c] = depth[u] + 1
                nxt.append(c)
        frontier = nxt
    chain = []
    cursor = v
    while cursor is not None:
        chain.append(cursor)
        cursor = tree.parent(cursor)
    hits = [u for u in chain if u in members]
    if not hits:
        return None
    return max(hits, key=lambda u: depth[u])


def test_closest_ancestor_matches_brute_force():
    rng = random.Random(5)
    for _ in range(100):
        n = rng.randrange(2, 20)
        tree = random_tree(rng, n)
        v = rng.randrange(n)
        members = {u for u in range(n) if rng.random() < 0.4}
        assert tree.closest_ancestor_in(v, members) == _brute_closest(tree, v, members)


def test_serialize_roundtrip():
    rng = random.Random(3)
    tree = random_tree(rng, 12)
    tree.delete_version(max(v for v in tree.all_versions() if tree.is_leaf(v)))
    other = VersionTree.deserialize(tree.serialize())
    assert len(other) == len(tree)
    assert other.deleted_set == tree.deleted_set
    for v in tree.all_versions():
        assert other.parent(v) == tree.parent(v)


def test_ancestor_set_and_depth():
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(1)
    assert tree.ancestor_set(2) == {0, 1, 2}
    assert tree.depth(2) == 2
    assert tree.is_ancestor_or_self(0, 2)
    assert not tree.is_ancestor_or_self(2, 0)
