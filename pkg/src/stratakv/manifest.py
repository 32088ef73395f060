"""Crash-consistent manifest: the atomically swapped root of the store.

A manifest names the committed version tree, the live array descriptors
and the allocator free list. Commit writes the full manifest to the
alternate slot file, syncs it, then atomically replaces a tiny epoch
pointer record; until that pointer moves, the previous manifest stays
authoritative, so a crash anywhere inside a commit loses at most the
uncommitted work. Arrays written but never committed are reclaimed for
free because the surviving manifest's free list still covers them.

Kill hooks let tests inject a simulated crash at each commit stage:
``pre_slot``, ``mid_slot`` (torn slot bytes), ``pre_epoch``,
``post_epoch``.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

from .allocator import Extent
from .arrayfile import ArrayDescriptor
from .errors import CorruptionError, NoValidManifestError

MANIFEST_MAGIC = b"STKMANIF"
EPOCH_MAGIC = b"STKEPOCH"
FORMAT_VERSION = 1

COMMIT_STAGES = ("pre_slot", "mid_slot", "pre_epoch", "post_epoch")

_MANIFEST_FIXED = struct.Struct("<8sBQIQIQI")
_EPOCH_REC = struct.Struct("<8sBQBI")


@dataclass(frozen=True)
class Manifest:
    epoch: int
    block_size: int
    capacity_blocks: int
    chunk_blocks: int
    next_seq: int
    tree_blob: bytes
    arrays: tuple[ArrayDescriptor, ...]
    free_extents: tuple[Extent, ...]

    def referenced_extents(self) -> list[Extent]:
        out: list[Extent] = []
        for desc in self.arrays:
            out.extend(desc.extents)
        return out


def _encode_descriptor(desc: ArrayDescriptor) -> bytes:
    tag = sorted(desc.tag)
    parts = [struct.pack("<QHIQQIII", desc.seq, desc.level, len(tag),
                         desc.entry_count, desc.entry_bytes, desc.entry_blocks,
                         desc.index_blocks, desc.bloom_blocks)]
    if tag:
        parts.append(struct.pack(f"<{len(tag)}Q", *tag))
    parts.append(struct.pack("<I", len(desc.extents)))
    for start, length in desc.extents:
        parts.append(struct.pack("<QQ", start, length))
    parts.append(struct.pack("<HH", len(desc.min_key), len(desc.max_key)))
    parts.append(desc.min_key)
    parts.append(desc.max_key)
    return b"".join(parts)


def _decode_descriptor(buf: bytes, offset: int) -> tuple[ArrayDescriptor, int]:
    (seq, level, tag_count, entry_count, entry_bytes, entry_blocks,
     index_blocks, bloom_blocks) = struct.unpack_from("<QHIQQIII", buf, offset)
    offset += struct.calcsize("<QHIQQIII")
    tag = frozenset(struct.unpack_from(f"<{tag_count}Q", buf, offset)) if tag_count else frozenset()
    offset += 8 * tag_count
    (n_extents,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    extents = []
    for _ in range(n_extents):
        start, length = struct.unpack_from("<QQ", buf, offset)
        offset += 16
        extents.append((start, length))
    min_len, max_len = struct.unpack_from("<HH", buf, offset)
    offset += 4
    min_key = bytes(buf[offset:offset + min_len])
    offset += min_len
    max_key = bytes(buf[offset:offset + max_len])
    offset += max_len
    desc = ArrayDescriptor(
        seq=seq, level=level, tag=tag, entry_count=entry_count,
        entry_bytes=entry_bytes, entry_blocks=entry_blocks,
        index_blocks=index_blocks, bloom_blocks=bloom_blocks,
        extents=tuple(extents), min_key=min_key, max_key=max_key)
    return desc, offset


def encode_manifest(m: Manifest) -> bytes:
    parts = [_MANIFEST_FIXED.pack(
        MANIFEST_MAGIC, FORMAT_VERSION, m.epoch, m.block_size,
        m.capacity_blocks, m.chunk_blocks, m.next_seq, len(m.tree_blob))]
    parts.append(m.tree_blob)
    parts.append(struct.pack("<I", len(m.arrays)))
    for desc in m.arrays:
        parts.append(_encode_descriptor(desc))
    parts.append(struct.pack("<I", len(m.free_extents)))
    for start, length in m.free_extents:
        parts.append(struct.pack("<QQ", start, length))
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode_manifest(blob: bytes) -> Manifest:
    if len(blob) < _MANIFEST_FIXED.size + 4:
        raise CorruptionError("manifest too short")
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CorruptionError("manifest checksum mismatch")
    (magic, fmt, epoch, block_size, capacity, chunk_blocks, next_seq,
     tree_len) = _MANIFEST_FIXED.unpack_from(body, 0)
    if magic != MANIFEST_MAGIC:
        raise CorruptionError("bad manifest magic")
    if fmt != FORMAT_VERSION:
        raise CorruptionError(f"unsupported manifest format {fmt}")
    offset = _MANIFEST_FIXED.size
    tree_blob = bytes(body[offset:offset + tree_len])
    offset += tree_len
    (n_arrays,) = struct.unpack_from("<I", body, offset)
    offset += 4
    arrays = []
    for _ in range(n_arrays):
        desc, offset = _decode_descriptor(body, offset)
        arrays.append(desc)
    (n_free,) = struct.unpack_from("<I", body, offset)
    offset += 4
    free = []
    for _ in range(n_free):
        start, length = struct.unpack_from("<QQ", body, offset)
        offset += 16
        free.append((start, length))
    return Manifest(epoch=epoch, block_size=block_size,
                    capacity_blocks=capacity, chunk_blocks=chunk_blocks,
                    next_seq=next_seq, tree_blob=tree_blob,
                    arrays=tuple(arrays), free_extents=tuple(free))


class ManifestIO:
    """Slot + epoch-pointer storage. Subclasses supply the byte transport."""

    SLOTS = ("A", "B")

    def write_slot(self, slot: str, data: bytes) -> None:
        raise NotImplementedError

    def read_slot(self, slot: str) -> bytes | None:
        raise NotImplementedError

    def write_epoch_record(self, data: bytes) -> None:
        raise NotImplementedError

    def read_epoch_record(self) -> bytes | None:
        raise NotImplementedError

    # -- commit / recover ---------------------------------------------------

    def commit(self, manifest: Manifest, kill_hook=None) -> None:
        """Write-new-then-switch. ``kill_hook(stage)`` may raise CrashPoint."""
        data = encode_manifest(manifest)
        slot = self.SLOTS[manifest.epoch % 2]
        if kill_hook is not None:
            kill_hook("pre_slot")
            self.write_slot(slot, data[:max(1, len(data) // 2)])
            kill_hook("mid_slot")
        self.write_slot(slot, data)
        if kill_hook is not None:
            kill_hook("pre_epoch")
        rec = EPOCH_MAGIC + struct.pack("<BQB", FORMAT_VERSION, manifest.epoch,
                                        ord(slot))
        self.write_epoch_record(rec + struct.pack("<I", zlib.crc32(rec)))
        if kill_hook is not None:
            kill_hook("post_epoch")

    def _try_slot(self, slot: str) -> Manifest | None:
        raw = self.read_slot(slot)
        if not raw:
            return None
        try:
            return decode_manifest(raw)
        except CorruptionError:
            return None

    def _read_pointer(self) -> tuple[int, str] | None:
        raw = self.read_epoch_record()
        if not raw or len(raw) != _EPOCH_REC.size:
            return None
        magic = raw[:8]
        fmt, epoch, slot_byte = struct.unpack_from("<BQB", raw, 8)
        (crc,) = struct.unpack_from("<I", raw, 18)
        if magic != EPOCH_MAGIC or fmt != FORMAT_VERSION:
            return None
        if zlib.crc32(raw[:-4]) != crc:
            return None
        return epoch, chr(slot_byte)

    def recover(self) -> Manifest:
        """Load the committed manifest.

        The epoch pointer is the commit point: a slot fully written but
        not yet switched to is ignored, so a crash before the switch
        recovers the previous epoch. A torn pointer or pointed-at slot
        falls back to the newest checksum-valid slot.
        """
        pointer = self._read_pointer()
        if pointer is not None:
            epoch, slot = pointer
            m = self._try_slot(slot)
            if m is not None and m.epoch == epoch:
                return m
        candidates = [m for m in (self._try_slot(s) for s in self.SLOTS) if m]
        if pointer is not None:
            bounded = [m for m in candidates if m.epoch <= pointer[0]]
            if bounded:
                candidates = bounded
        if not candidates:
            raise NoValidManifestError("no checksum-valid manifest found")
        return max(candidates, key=lambda m: m.epoch)


class FileManifestIO(ManifestIO):
    """MANIFEST.A / MANIFEST.B plus an EPOCH pointer file, fsync'd."""

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)

    def _slot_path(self, slot: str) -> str:
        return os.path.join(self.directory, f"MANIFEST.{slot}")

    def _epoch_path(self) -> str:
        return os.path.join(self.directory, "EPOCH")

    def write_slot(self, slot: str, data: bytes) -> None:
        path = self._slot_path(slot)
        with open(path, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())

    def read_slot(self, slot: str) -> bytes | None:
        try:
            with open(self._slot_path(slot), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            return None

    def write_epoch_record(self, data: bytes) -> None:
        path = self._epoch_path()
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        dir_fd = os.open(self.directory, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)

    def read_epoch_record(self) -> bytes | None:
        try:
            with open(self._epoch_path(), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            return None


class RamManifestIO(ManifestIO):
    """In-memory slots for tests and RAM-backed benchmark stores."""

    def __init__(self):
        self._slots: dict[str, bytes] = {}
        self._epoch: bytes | None = None

    def write_slot(self, slot: str, data: bytes) -> None:
        self._slots[slot] = bytes(data)

    def read_slot(self, slot: str) -> bytes | None:
        return self._slots.get(slot)

    def write_epoch_record(self, data: bytes) -> None:
        self._epoch = bytes(data)

    def read_epoch_record(self) -> bytes | None:
        return self._epoch
