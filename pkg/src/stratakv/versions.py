"""Rooted version tree with ancestry queries.

Version ids are dense creation-order integers (root is 0), so a child's
id is always greater than its parent's. The id order doubles as the
deterministic tie-break wherever a total order over versions is needed.

Deletion is restricted to childless non-root versions and is lazy: the
version is only marked, and its entries are dropped the next time a
merge touches an array containing them.
"""

from __future__ import annotations

import struct

from .errors import (
    DeletedVersionError,
    RootDeletionError,
    RootExistsError,
    UnknownVersionError,
    VersionHasChildrenError,
)

ROOT_VERSION = 0


class VersionTree:
    def __init__(self):
        self._parent: dict[int, int] = {}
        self._children: dict[int, list[int]] = {}
        self._deleted: set[int] = set()
        self._next_id = 0
        # per-version caches; paths are immutable once a version exists
        self._path_cache: dict[int, tuple[int, ...]] = {}
        self._anc_cache: dict[int, frozenset[int]] = {}

    # -- construction -------------------------------------------------

    def create_root(self) -> int:
        if self._next_id != 0:
            raise RootExistsError("version tree already has a root")
        self._children[ROOT_VERSION] = []
        self._next_id = 1
        return ROOT_VERSION

    def clone(self, parent: int) -> int:
        """Register a new child of ``parent``. Pure in-memory mutation."""
        self.check_usable(parent)
        child = self._next_id
        self._next_id += 1
        self._parent[child] = parent
        self._children[child] = []
        self._children[parent].append(child)
        return child

    def delete_version(self, v: int) -> None:
        self.check_usable(v)
        if v == ROOT_VERSION:
            raise RootDeletionError("the root version cannot be deleted")
        if self.live_children(v):
            raise VersionHasChildrenError(f"version {v} still has live children")
        self._deleted.add(v)

    # -- predicates and accessors --------------------------------------

    def exists(self, v: int) -> bool:
        return 0 <= v < self._next_id

    def is_deleted(self, v: int) -> bool:
        return v in self._deleted

    def check_exists(self, v: int) -> None:
        if not self.exists(v):
            raise UnknownVersionError(f"unknown version {v}")

    def check_usable(self, v: int) -> None:
        """Raise unless v exists and is not deleted."""
        self.check_exists(v)
        if v in self._deleted:
            raise DeletedVersionError(f"version {v} was deleted")

    def parent(self, v: int):
        self.check_exists(v)
        return self._parent.get(v)

    def children(self, v: int) -> list[int]:
        self.check_exists(v)
        return list(self._children[v])

    def live_children(self, v: int) -> list[int]:
        return [c for c in self._children[v] if c not in self._deleted]

    def is_leaf(self, v: int) -> bool:
        """Leaf in the live tree: no non-deleted children."""
        return not self.live_children(v)

    def all_versions(self) -> range:
        return range(self._next_id)

    def live_versions(self) -> list[int]:
        return [v for v in range(self._next_id) if v not in self._deleted]

    @property
    def deleted_set(self) -> frozenset[int]:
        return frozenset(self._deleted)

    def __len__(self) -> int:
        return self._next_id

    # -- ancestry -------------------------------------------------------

    def path(self, v: int) -> tuple[int, ...]:
        """Versions from v up to the root, v first."""
        self.check_exists(v)
        cached = self._path_cache.get(v)
        if cached is not None:
            return cached
        chain = [v]
        parent = self._parent.get(v)
        while parent is not None:
            chain.append(parent)
            parent = self._parent.get(parent)
        result = tuple(chain)
        self._path_cache[v] = result
        return result

    def ancestor_set(self, v: int) -> frozenset[int]:
        cached = self._anc_cache.get(v)
        if cached is not None:
            return cached
        result = frozenset(self.path(v))
        self._anc_cache[v] = result
        return result

    def is_ancestor_or_self(self, u: int, v: int) -> bool:
        return u in self.ancestor_set(v)

    def depth(self, v: int) -> int:
        """Distance from the root (root has depth 0)."""
        return len(self.path(v)) - 1

    def closest_ancestor_in(self, v: int, members) -> int | None:
        """The member of ``members`` nearest to v on the root-to-v path,
        v itself allowed; None when the path misses the set entirely."""
        self.check_exists(v)
        for u in self.path(v):
            if u in members:
                return u
        return None

    def subtree_members(self, v: int, members) -> set[int]:
        """Members of ``members`` that are descendant-or-self of v."""
        return {w for w in members if v in self.ancestor_set(w)}

    # -- serialization (manifest payload) -------------------------------

    def serialize(self) -> bytes:
        count = self._next_id
        out = [struct.pack("<QI", count, len(self._deleted))]
        for child in range(1, count):
            out.append(struct.pack("<QQ", child, self._parent[child]))
        for v in sorted(self._deleted):
            out.append(struct.pack("<Q", v))
        return b"".join(out)

    @classmethod
    def deserialize(cls, blob: bytes) -> "VersionTree":
        tree = cls()
        count, n_deleted = struct.unpack_from("<QI", blob, 0)
        offset = 12
        if count > 0:
            tree.create_root()
        for _ in range(count - 1):
            child, parent = struct.unpack_from("<QQ", blob, offset)
            offset += 16
            got = tree.clone(parent)
            if got != child:
                raise ValueError("version ids not dense in serialized tree")
        for _ in range(n_deleted):
            (v,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            tree._deleted.add(v)
        return tree
