"""Deterministic benchmark workload generation.

The stream interleaves random-key inserts to random leaf versions with
periodic clone events and periodic range queries: one clone after every
``clone_interval`` inserts (a random leaf version with probability 1/3,
otherwise a random internal version, falling back to a leaf while no
internal version exists), and one range query of ``range_query_size``
keys at a uniformly random version after every ``range_query_interval``
inserts. Identical seeds produce byte-identical streams.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


@dataclass(frozen=True)
class WorkloadSpec:
    seed: int = 1
    total_inserts: int = 100_000
    key_len: int = 16
    value_len: int = 84
    clone_interval: int = 100_000
    leaf_clone_prob: float = 1 / 3
    range_query_size: int = 1000
    range_query_interval: int = 10_000
    block_size: int = 32768

    @property
    def entry_bytes(self) -> int:
        return self.key_len + self.value_len

    def entries_per_block(self) -> int:
        """Entries per block at the on-disk encoding of this workload."""
        from .model import HEADER_SIZE
        return self.block_size // (HEADER_SIZE + self.entry_bytes)


class _ShadowTree:
    """Mirror of the version tree the generator builds as it emits clones."""

    def __init__(self):
        self.parents: dict[int, int] = {}
        self.children_count: dict[int, int] = {0: 0}
        self.next_id = 1

    def clone(self, parent: int) -> int:
        child = self.next_id
        self.next_id += 1
        self.parents[child] = parent
        self.children_count[child] = 0
        self.children_count[parent] += 1
        return child

    def leaves(self) -> list[int]:
        return [v for v, n in self.children_count.items() if n == 0]

    def internals(self) -> list[int]:
        return [v for v, n in self.children_count.items() if n > 0]

    def versions(self) -> list[int]:
        return list(self.children_count)


def gen_workload(spec: WorkloadSpec):
    """Yield operation tuples:

    ("put", key, value, version)
    ("clone", parent)           -- the new child takes the next dense id
    ("range", start_key, size, version)
    """
    rng = random.Random(spec.seed)
    shadow = _ShadowTree()
    leaves = [0]
    for i in range(1, spec.total_inserts + 1):
        key = rng.randbytes(spec.key_len)
        value = rng.randbytes(spec.value_len)
        version = leaves[rng.randrange(len(leaves))]
        yield ("put", key, value, version)
        if i % spec.range_query_interval == 0:
            start = rng.randbytes(spec.key_len)
            target = shadow.versions()
            yield ("range", start, spec.range_query_size,
                   target[rng.randrange(len(target))])
        if i % spec.clone_interval == 0:
            internals = shadow.internals()
            if rng.random() < spec.leaf_clone_prob or not internals:
                parent = leaves[rng.randrange(len(leaves))]
            else:
                parent = internals[rng.randrange(len(internals))]
            shadow.clone(parent)
            yield ("clone", parent)
            leaves = shadow.leaves()
            leaves.sort()
