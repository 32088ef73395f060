"""Accounted block devices.

Every block read and write in the system goes through one of these, so
IO counters (not wall-clock) are the currency of all performance tests.
Sequentiality is judged per stream: an IO is sequential when its block
address is exactly one past the stream's previous IO of the same kind,
and the first IO of a stream establishes the head position (it counts
as sequential). Each array scan, array write or tree descent owns its
own stream, mirroring one disk-head sweep.

The file-backed device is the production shape; the RAM-backed device
has identical accounting and serves tests and benchmarks that would
otherwise be disk-bound.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ValidationError


@dataclass
class IoCounters:
    reads: int = 0
    writes: int = 0
    seq_reads: int = 0
    seq_writes: int = 0

    @property
    def seeks(self) -> int:
        return (self.reads - self.seq_reads) + (self.writes - self.seq_writes)

    def snapshot(self) -> "IoCounters":
        return IoCounters(self.reads, self.writes, self.seq_reads, self.seq_writes)

    def delta(self, earlier: "IoCounters") -> "IoCounters":
        return IoCounters(
            self.reads - earlier.reads,
            self.writes - earlier.writes,
            self.seq_reads - earlier.seq_reads,
            self.seq_writes - earlier.seq_writes,
        )

    def sequential_fraction(self) -> float:
        total = self.reads + self.writes
        if total == 0:
            return 1.0
        return (self.seq_reads + self.seq_writes) / total


class IoStream:
    """Tracks the head position of one logical IO stream."""

    __slots__ = ("last_read", "last_write")

    def __init__(self):
        self.last_read = -2  # never adjacent to any first address
        self.last_write = -2


class BlockDevice:
    """Common accounting; subclasses provide _read_raw/_write_raw."""

    def __init__(self, block_size: int, capacity_blocks: int):
        self.block_size = block_size
        self.capacity_blocks = capacity_blocks
        self.counters = IoCounters()
        self._default_stream = IoStream()

    def new_stream(self) -> IoStream:
        return IoStream()

    def _check(self, addr: int, data_len: int | None = None) -> None:
        if not 0 <= addr < self.capacity_blocks:
            raise ValidationError(f"block address {addr} outside device")
        if data_len is not None and data_len > self.block_size:
            raise ValidationError("block payload exceeds block size")

    def read_block(self, addr: int, stream: IoStream | None = None) -> bytes:
        """Read one block; short blocks are implicitly zero-padded."""
        self._check(addr)
        s = stream or self._default_stream
        c = self.counters
        c.reads += 1
        if s.last_read == -2 or addr == s.last_read + 1:
            c.seq_reads += 1
        s.last_read = addr
        return self._read_raw(addr)

    def write_block(self, addr: int, data: bytes, stream: IoStream | None = None) -> None:
        self._check(addr, len(data))
        s = stream or self._default_stream
        c = self.counters
        c.writes += 1
        if s.last_write == -2 or addr == s.last_write + 1:
            c.seq_writes += 1
        s.last_write = addr
        self._write_raw(addr, data)

    def fsync(self) -> None:
        pass

    def close(self) -> None:
        pass

    def _read_raw(self, addr: int) -> bytes:
        raise NotImplementedError

    def _write_raw(self, addr: int, data: bytes) -> None:
        raise NotImplementedError


class RamBlockDevice(BlockDevice):
    def __init__(self, block_size: int, capacity_blocks: int):
        super().__init__(block_size, capacity_blocks)
        self._blocks: dict[int, bytes] = {}

    def _read_raw(self, addr: int) -> bytes:
        return self._blocks.get(addr, b"")

    def _write_raw(self, addr: int, data: bytes) -> None:
        self._blocks[addr] = bytes(data)

    def used_bytes(self) -> int:
        return sum(len(b) for b in self._blocks.values())


class FileBlockDevice(BlockDevice):
    def __init__(self, path, block_size: int, capacity_blocks: int):
        super().__init__(block_size, capacity_blocks)
        self.path = str(path)
        flags = os.O_RDWR | os.O_CREAT
        self._fd = os.open(self.path, flags, 0o644)

    def _read_raw(self, addr: int) -> bytes:
        return os.pread(self._fd, self.block_size, addr * self.block_size)

    def _write_raw(self, addr: int, data: bytes) -> None:
        os.pwrite(self._fd, data, addr * self.block_size)

    def fsync(self) -> None:
        os.fsync(self._fd)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1
