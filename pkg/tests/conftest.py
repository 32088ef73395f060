import random

import pytest

from stratakv.config import StoreConfig
from stratakv.store import SdaStore
from stratakv.versions import VersionTree


@pytest.fixture
def small_config():
    """Tiny flush threshold so a handful of writes exercises merging."""
    return StoreConfig(flush_entries=8, capacity_blocks=4096)


@pytest.fixture
def ram_store(small_config):
    store = SdaStore.create_ram(small_config)
    yield store
    store.close()


def make_chain(n: int) -> VersionTree:
    """v0 -> v1 -> ... -> v(n-1)."""
    tree = VersionTree()
    tree.create_root()
    for i in range(n - 1):
        tree.clone(i)
    return tree


def make_fork() -> VersionTree:
    """v1 and v2 are siblings under v0."""
    tree = VersionTree()
    tree.create_root()
    tree.clone(0)
    tree.clone(0)
    return tree


def random_tree(rng: random.Random, n: int) -> VersionTree:
    tree = VersionTree()
    tree.create_root()
    for i in range(1, n):
        tree.clone(rng.randrange(i))
    return tree
