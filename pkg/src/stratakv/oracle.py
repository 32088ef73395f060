"""Brute-force in-memory versioned dictionary.

This is the ground truth for every equivalence test: per-version maps
plus an explicit ancestry walk per query, no caching, no cleverness.
A read at version v returns the payload written in the closest
ancestor-or-self of v; a tombstone there means absent.
"""

from __future__ import annotations

from .errors import ValidationError
from .model import validate_key, validate_value
from .versions import VersionTree


class ReferenceOracle:
    def __init__(self):
        self.tree = VersionTree()
        # version -> {key -> value bytes | None (tombstone)}
        self._maps: dict[int, dict[bytes, bytes | None]] = {}

    # -- mutations -------------------------------------------------------

    def create_root(self) -> int:
        v = self.tree.create_root()
        self._maps[v] = {}
        return v

    def clone(self, parent: int) -> int:
        child = self.tree.clone(parent)
        self._maps[child] = {}
        return child

    def delete_version(self, v: int) -> None:
        self.tree.delete_version(v)

    def put(self, key: bytes, value: bytes, v: int) -> None:
        validate_key(key)
        validate_value(value)
        self.tree.check_usable(v)
        self._maps[v][key] = value

    def delete_key(self, key: bytes, v: int) -> None:
        validate_key(key)
        self.tree.check_usable(v)
        self._maps[v][key] = None

    # -- queries ----------------------------------------------------------

    def get(self, key: bytes, v: int) -> bytes | None:
        """Value at the closest ancestor-or-self write; None when absent."""
        validate_key(key)
        self.tree.check_usable(v)
        for u in self.tree.path(v):
            m = self._maps[u]
            if key in m:
                return m[key]  # a stored None (tombstone) means absent
        return None

    def range_query(self, start: bytes, end: bytes | None, v: int,
                    limit: int | None = None) -> list[tuple[bytes, bytes]]:
        """Live (key, value) pairs with start <= key <= end, ascending.

        ``end=None`` means unbounded above; ``limit`` caps the result size.
        """
        validate_key(start)
        if end is not None:
            validate_key(end)
            if start > end:
                raise ValidationError("range start exceeds end")
        self.tree.check_usable(v)
        path = self.tree.path(v)
        candidates: set[bytes] = set()
        for u in path:
            for key in self._maps[u]:
                if key >= start and (end is None or key <= end):
                    candidates.add(key)
        out: list[tuple[bytes, bytes]] = []
        for key in sorted(candidates):
            for u in path:
                m = self._maps[u]
                if key in m:
                    if m[key] is not None:
                        out.append((key, m[key]))
                    break
            if limit is not None and len(out) >= limit:
                break
        return out

    def live_count(self, v: int) -> int:
        """Number of keys visible at v."""
        self.tree.check_usable(v)
        path = self.tree.path(v)
        seen: set[bytes] = set()
        count = 0
        for u in path:
            for key, value in self._maps[u].items():
                if key in seen:
                    continue
                seen.add(key)
                if value is not None:
                    count += 1
        return count

    def keys_at(self, v: int) -> list[bytes]:
        """All live keys at v, ascending (test helper)."""
        self.tree.check_usable(v)
        return [k for k, _ in self.range_query(b"\x00", None, v)]

    def apply(self, op: tuple) -> None:
        """Apply one workload operation tuple (mutations only)."""
        kind = op[0]
        if kind == "put":
            _, key, value, v = op
            self.put(key, value, v)
        elif kind == "delete_key":
            _, key, v = op
            self.delete_key(key, v)
        elif kind == "clone":
            self.clone(op[1])
        elif kind == "delete_version":
            self.delete_version(op[1])
        else:
            raise ValueError(f"unknown op {kind!r}")
