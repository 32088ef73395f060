"""First-fit extent allocator with a chunking fallback.

A request is satisfied from the first free region large enough to hold
it in one piece. When no such region exists the request degrades to
chunking: extents of at most one chunk are carved from free regions in
address order until the request is covered, so large arrays stay
sequential to within the chunk size even on a fragmented device.
"""

from __future__ import annotations

import struct

from .errors import DoubleFreeError, OutOfSpaceError

Extent = tuple[int, int]  # (start block, length in blocks)


class ExtentAllocator:
    def __init__(self, capacity_blocks: int, chunk_blocks: int,
                 free_extents: list[Extent] | None = None):
        self.capacity_blocks = capacity_blocks
        self.chunk_blocks = chunk_blocks
        if free_extents is None:
            self._free: list[list[int]] = [[0, capacity_blocks]]
        else:
            merged: list[list[int]] = []
            for start, length in sorted(free_extents):
                if merged and merged[-1][0] + merged[-1][1] == start:
                    merged[-1][1] += length
                else:
                    merged.append([start, length])
            self._free = merged

    # -- queries ---------------------------------------------------------

    def free_blocks(self) -> int:
        return sum(length for _, length in self._free)

    def free_extents(self) -> list[Extent]:
        return [(start, length) for start, length in self._free]

    def largest_free_region(self) -> int:
        return max((length for _, length in self._free), default=0)

    # -- allocate / release ------------------------------------------------

    def allocate(self, blocks: int) -> list[Extent]:
        """Allocate ``blocks`` blocks; single extent when first-fit succeeds,
        otherwise a chunked extent list. State unchanged on failure."""
        if blocks < 1:
            raise ValueError("allocation must be at least one block")
        for i, (start, length) in enumerate(self._free):
            if length >= blocks:
                if length == blocks:
                    del self._free[i]
                else:
                    self._free[i] = [start + blocks, length - blocks]
                return [(start, blocks)]
        if self.free_blocks() < blocks:
            raise OutOfSpaceError(
                f"need {blocks} blocks, {self.free_blocks()} free")
        return self._allocate_chunked(blocks)

    def _allocate_chunked(self, blocks: int) -> list[Extent]:
        out: list[Extent] = []
        need = blocks
        chunk = self.chunk_blocks
        i = 0
        while need > 0:
            start, length = self._free[i]
            take = min(need, chunk, length)
            out.append((start, take))
            if take == length:
                del self._free[i]
            else:
                self._free[i] = [start + take, length - take]
            need -= take
        return out

    def release(self, extents: list[Extent]) -> None:
        """Return extents to the free list, coalescing neighbours."""
        for start, length in extents:
            if length < 1:
                raise ValueError("cannot release an empty extent")
            self._insert_free(start, length)

    def _insert_free(self, start: int, length: int) -> None:
        end = start + length
        lo, hi = 0, len(self._free)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._free[mid][0] < start:
                lo = mid + 1
            else:
                hi = mid
        i = lo
        prev = self._free[i - 1] if i > 0 else None
        nxt = self._free[i] if i < len(self._free) else None
        if prev is not None and prev[0] + prev[1] > start:
            raise DoubleFreeError(f"extent ({start},{length}) overlaps free region")
        if nxt is not None and end > nxt[0]:
            raise DoubleFreeError(f"extent ({start},{length}) overlaps free region")
        merged_prev = prev is not None and prev[0] + prev[1] == start
        merged_next = nxt is not None and end == nxt[0]
        if merged_prev and merged_next:
            prev[1] += length + nxt[1]
            del self._free[i]
        elif merged_prev:
            prev[1] += length
        elif merged_next:
            nxt[0] = start
            nxt[1] += length
        else:
            self._free.insert(i, [start, length])

    # -- invariants and serialization ---------------------------------------

    def audit_partition(self, referenced: list[Extent]) -> list[str]:
        """Check free + referenced extents tile the device exactly once."""
        problems: list[str] = []
        marks: list[tuple[int, int, str]] = []
        for start, length in self._free:
            marks.append((start, start + length, "free"))
        for start, length in referenced:
            marks.append((start, start + length, "used"))
        marks.sort()
        cursor = 0
        for start, end, kind in marks:
            if start < cursor:
                problems.append(f"overlap at block {start} ({kind})")
            elif start > cursor:
                problems.append(f"leaked blocks [{cursor}, {start})")
            cursor = max(cursor, end)
        if cursor < self.capacity_blocks:
            problems.append(f"leaked blocks [{cursor}, {self.capacity_blocks})")
        elif cursor > self.capacity_blocks:
            problems.append("extents run past device capacity")
        return problems

    def serialize(self) -> bytes:
        out = [struct.pack("<I", len(self._free))]
        for start, length in self._free:
            out.append(struct.pack("<QQ", start, length))
        return b"".join(out)

    @classmethod
    def deserialize(cls, blob: bytes, offset: int, capacity_blocks: int,
                    chunk_blocks: int) -> tuple["ExtentAllocator", int]:
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        extents: list[Extent] = []
        for _ in range(count):
            start, length = struct.unpack_from("<QQ", blob, offset)
            offset += 16
            extents.append((start, length))
        return cls(capacity_blocks, chunk_blocks, extents), offset
