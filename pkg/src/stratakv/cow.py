"""Copy-on-write B-tree baseline with per-version roots.

Updates may only touch nodes of their own version: descending for an
update at version v copies every node of a different version on the
path (an entire root-to-leaf path in the worst case), which is exactly
the write and space behaviour this baseline exists to measure. Updates
inside a node's own version happen in place. There is no garbage
collection: cross-version copies are permanent.

Updates are expected at leaf versions, per the dictionary contract.
Path copying freezes a snapshot of the ancestor's tree, so writing to a
version that already has children would not be visible to them; with
leaf-only updates the snapshots coincide with closest-ancestor
semantics, because a cloned version never receives another write.

The tree shares the accounted block-device layer with the main store so
IO comparisons are apples to apples. One node occupies one block.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from collections import OrderedDict

from .allocator import ExtentAllocator
from .device import BlockDevice
from .errors import CorruptionError, ValidationError
from .model import validate_key, validate_value
from .versions import VersionTree

LEAF = 0
INTERNAL = 1

_NODE_HEADER = struct.Struct("<QBH")  # version, kind, key count
_NODE_BASE = _NODE_HEADER.size + 4    # header + trailing crc


class _Node:
    __slots__ = ("version", "kind", "keys", "values", "children", "bytes_used")

    def __init__(self, version: int, kind: int, keys=None, values=None, children=None):
        self.version = version
        self.kind = kind
        self.keys: list[bytes] = keys if keys is not None else []
        self.values: list[bytes] = values if values is not None else []
        self.children: list[int] = children if children is not None else []
        self.bytes_used = _NODE_BASE
        if kind == LEAF:
            for k, v in zip(self.keys, self.values):
                self.bytes_used += 6 + len(k) + len(v)
        else:
            self.bytes_used += 8 * len(self.children)
            for k in self.keys:
                self.bytes_used += 2 + len(k)

    def copy_as(self, version: int) -> "_Node":
        node = _Node(version, self.kind, list(self.keys),
                     list(self.values), list(self.children))
        return node

    def encode(self) -> bytes:
        parts = [_NODE_HEADER.pack(self.version, self.kind, len(self.keys))]
        if self.kind == LEAF:
            for k, v in zip(self.keys, self.values):
                parts.append(struct.pack("<HI", len(k), len(v)))
                parts.append(k)
                parts.append(v)
        else:
            for k in self.keys:
                parts.append(struct.pack("<H", len(k)))
                parts.append(k)
            parts.append(struct.pack(f"<{len(self.children)}Q", *self.children))
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def decode(cls, raw: bytes) -> "_Node":
        version, kind, count = _NODE_HEADER.unpack_from(raw, 0)
        offset = _NODE_HEADER.size
        keys: list[bytes] = []
        if kind == LEAF:
            values: list[bytes] = []
            for _ in range(count):
                klen, vlen = struct.unpack_from("<HI", raw, offset)
                offset += 6
                keys.append(bytes(raw[offset:offset + klen]))
                offset += klen
                values.append(bytes(raw[offset:offset + vlen]))
                offset += vlen
            node = cls(version, LEAF, keys, values)
        else:
            for _ in range(count):
                (klen,) = struct.unpack_from("<H", raw, offset)
                offset += 2
                keys.append(bytes(raw[offset:offset + klen]))
                offset += klen
            children = list(struct.unpack_from(f"<{count + 1}Q", raw, offset))
            offset += 8 * (count + 1)
            node = cls(version, INTERNAL, keys, children=children)
        (crc,) = struct.unpack_from("<I", raw, offset)
        if zlib.crc32(raw[:offset]) != crc:
            raise CorruptionError("CoW node checksum mismatch")
        return node


class CowTree:
    """Versioned B-tree baseline sharing the accounted device layer."""

    def __init__(self, device: BlockDevice, allocator: ExtentAllocator,
                 tree: VersionTree | None = None,
                 max_leaf_entries: int | None = None,
                 max_internal_children: int | None = None,
                 cache_nodes: int = 8192):
        self.device = device
        self.allocator = allocator
        self.tree = tree if tree is not None else VersionTree()
        if tree is None:
            self.tree.create_root()
        self.roots: dict[int, int] = {}
        self.max_leaf_entries = max_leaf_entries
        self.max_internal_children = max_internal_children
        self._cache: OrderedDict[int, _Node] = OrderedDict()
        self._cache_cap = cache_nodes

    # -- version tree ----------------------------------------------------

    def clone(self, v: int) -> int:
        """Register a new child version; no IO, root copy is deferred."""
        return self.tree.clone(v)

    # -- node IO -----------------------------------------------------------

    def _read_node(self, addr: int, stream) -> _Node:
        raw = self.device.read_block(addr, stream)
        node = self._cache.get(addr)
        if node is not None:
            self._cache.move_to_end(addr)
            return node
        node = _Node.decode(raw)
        self._cache_put(addr, node)
        return node

    def _write_node(self, addr: int, node: _Node, stream) -> None:
        raw = node.encode()
        if len(raw) > self.device.block_size:
            raise ValidationError("CoW node exceeds block size")
        self.device.write_block(addr, raw, stream)
        self._cache_put(addr, node)

    def _cache_put(self, addr: int, node: _Node) -> None:
        self._cache[addr] = node
        self._cache.move_to_end(addr)
        if len(self._cache) > self._cache_cap:
            self._cache.popitem(last=False)

    def _alloc(self) -> int:
        return self.allocator.allocate(1)[0][0]

    # -- capacity -------------------------------------------------------------

    def _overflows(self, node: _Node) -> bool:
        if node.bytes_used > self.device.block_size:
            return True
        if node.kind == LEAF:
            return (self.max_leaf_entries is not None
                    and len(node.keys) > self.max_leaf_entries)
        return (self.max_internal_children is not None
                and len(node.children) > self.max_internal_children)

    # -- public operations ------------------------------------------------------

    def update(self, key: bytes, value: bytes, v: int) -> None:
        """Write key=value at version v, path-copying foreign nodes."""
        validate_key(key)
        validate_value(value)
        self.tree.check_usable(v)
        stream = self.device.new_stream()
        dirty: dict[int, _Node] = {}

        root_owner = self.tree.closest_ancestor_in(v, self.roots)
        if root_owner is None:
            leaf = _Node(v, LEAF, [key], [value])
            addr = self._alloc()
            self.roots[v] = addr
            self._write_node(addr, leaf, stream)
            return

        # read the path, then copy every foreign-version node on it
        path: list[tuple[int, _Node]] = []
        addr = self.roots[root_owner]
        while True:
            node = self._read_node(addr, stream)
            path.append((addr, node))
            if node.kind == LEAF:
                break
            addr = node.children[bisect_right(node.keys, key)]

        for i, (addr, node) in enumerate(path):
            if node.version != v:
                copy = node.copy_as(v)
                new_addr = self._alloc()
                path[i] = (new_addr, copy)
                if i == 0:
                    self.roots[v] = new_addr
                else:
                    parent_addr, parent = path[i - 1]
                    parent.children[bisect_right(parent.keys, key)] = new_addr
                    dirty[parent_addr] = parent
                dirty[new_addr] = copy

        leaf_addr, leaf = path[-1]
        idx = bisect_right(leaf.keys, key)
        if idx > 0 and leaf.keys[idx - 1] == key:
            old = leaf.values[idx - 1]
            leaf.values[idx - 1] = value
            leaf.bytes_used += len(value) - len(old)
        else:
            leaf.keys.insert(idx, key)
            leaf.values.insert(idx, value)
            leaf.bytes_used += 6 + len(key) + len(value)
        dirty[leaf_addr] = leaf

        self._split_upward(path, dirty, v)
        for addr, node in dirty.items():
            self._write_node(addr, node, stream)

    def _split_upward(self, path, dirty, v: int) -> None:
        """Split overflowing nodes bottom-up; all touched nodes are version v."""
        level = len(path) - 1
        while level >= 0:
            addr, node = path[level]
            if not self._overflows(node):
                break
            if node.kind == LEAF:
                mid = len(node.keys) // 2
                right = _Node(v, LEAF, node.keys[mid:], node.values[mid:])
                separator = right.keys[0]
                node.keys = node.keys[:mid]
                node.values = node.values[:mid]
            else:
                mid = len(node.keys) // 2
                separator = node.keys[mid]
                right = _Node(v, INTERNAL, node.keys[mid + 1:],
                              children=node.children[mid + 1:])
                node.keys = node.keys[:mid]
                node.children = node.children[:mid + 1]
            node.bytes_used = _Node(v, node.kind, node.keys, node.values,
                                    node.children).bytes_used
            right_addr = self._alloc()
            dirty[addr] = node
            dirty[right_addr] = right
            if level == 0:
                new_root = _Node(v, INTERNAL, [separator], children=[addr, right_addr])
                root_addr = self._alloc()
                self.roots[v] = root_addr
                dirty[root_addr] = new_root
                path.insert(0, (root_addr, new_root))
                break
            parent_addr, parent = path[level - 1]
            pidx = bisect_right(parent.keys, separator)
            parent.keys.insert(pidx, separator)
            parent.children.insert(pidx + 1, right_addr)
            parent.bytes_used += 2 + len(separator) + 8
            dirty[parent_addr] = parent
            level -= 1

    def lookup(self, key: bytes, v: int) -> bytes | None:
        """Standard B-tree search from the closest root at or above v."""
        validate_key(key)
        self.tree.check_usable(v)
        root_owner = self.tree.closest_ancestor_in(v, self.roots)
        if root_owner is None:
            return None
        stream = self.device.new_stream()
        addr = self.roots[root_owner]
        while True:
            node = self._read_node(addr, stream)
            if node.kind == LEAF:
                idx = bisect_right(node.keys, key)
                if idx > 0 and node.keys[idx - 1] == key:
                    return node.values[idx - 1]
                return None
            addr = node.children[bisect_right(node.keys, key)]

    def range_query(self, start: bytes, end: bytes | None, v: int,
                    limit: int | None = None) -> list[tuple[bytes, bytes]]:
        """In-order traversal of v's tree restricted to [start, end]."""
        validate_key(start)
        if end is not None:
            validate_key(end)
            if start > end:
                raise ValidationError("range start exceeds end")
        self.tree.check_usable(v)
        root_owner = self.tree.closest_ancestor_in(v, self.roots)
        if root_owner is None:
            return []
        stream = self.device.new_stream()
        out: list[tuple[bytes, bytes]] = []
        self._collect(self.roots[root_owner], start, end, limit, out, stream)
        return out

    def _collect(self, addr: int, start: bytes, end: bytes | None,
                 limit: int | None, out: list, stream) -> bool:
        """Depth-first in-order collection; returns False when done."""
        node = self._read_node(addr, stream)
        if node.kind == LEAF:
            idx = bisect_right(node.keys, start)
            if idx > 0 and node.keys[idx - 1] == start:
                idx -= 1
            for i in range(idx, len(node.keys)):
                key = node.keys[i]
                if end is not None and key > end:
                    return False
                out.append((key, node.values[i]))
                if limit is not None and len(out) >= limit:
                    return False
            return True
        first = bisect_right(node.keys, start)
        for i in range(first, len(node.children)):
            if i > 0 and end is not None and node.keys[i - 1] > end:
                return False
            if not self._collect(node.children[i], start, end, limit, out, stream):
                return False
        return True

    def depth(self, v: int) -> int:
        """Root-to-leaf node count for v's effective tree (0 when empty)."""
        root_owner = self.tree.closest_ancestor_in(v, self.roots)
        if root_owner is None:
            return 0
        stream = self.device.new_stream()
        addr = self.roots[root_owner]
        depth = 0
        while True:
            node = self._read_node(addr, stream)
            depth += 1
            if node.kind == LEAF:
                return depth
            addr = node.children[0]
