"""Immutable on-disk sorted runs ("tagged arrays").

Layout, all regions block-aligned and independently checksummed:

    block 0            header (magic, ids, tag, region sizes, CRCs)
    entry region       encoded entries in entry order; entries may span
                       block boundaries
    index region       one fence per entry-region block: block CRC, the
                       offset and key of the first entry starting there
    bloom region       bloom filter over the distinct keys

The fence index and bloom filter are held in memory per open array, so
a point lookup touches at most the one or two entry blocks that can
contain the key, and a bloom miss touches none.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from bisect import bisect_left
from dataclasses import dataclass, field, replace

from .allocator import Extent, ExtentAllocator
from .config import StoreConfig
from .device import BlockDevice, IoStream
from .errors import CorruptionError, ValidationError
from .model import HEADER_SIZE, Entry, decode_entry, encode_entry

_ENTRY_HEADER = struct.Struct("<HQBI")  # must match model's wire format

ARRAY_MAGIC = b"STKARRAY"
ARRAY_FORMAT_VERSION = 1
_NO_START = 0xFFFF

_HDR_FIXED = struct.Struct("<8sBQHQQIIIQIHHIII")
_FENCE_FIXED = struct.Struct("<IHH")
_BLOOM_HDR = struct.Struct("<QB8sQI")


class BloomFilter:
    """Standard double-hashed bloom filter over keys, salted per array."""

    __slots__ = ("m_bits", "hashes", "salt", "bits")

    def __init__(self, m_bits: int, hashes: int, salt: bytes, bits: bytearray):
        self.m_bits = m_bits
        self.hashes = hashes
        self.salt = salt
        self.bits = bits

    @classmethod
    def build(cls, keys, n_keys: int, bits_per_key: int, hashes: int, salt: bytes) -> "BloomFilter":
        m_bits = max(64, n_keys * bits_per_key)
        bits = bytearray((m_bits + 7) // 8)
        bf = cls(m_bits, hashes, salt, bits)
        for key in keys:
            bf._add(key)
        return bf

    def _positions(self, key: bytes):
        digest = hashlib.blake2b(key, digest_size=16, salt=self.salt).digest()
        h1 = int.from_bytes(digest[:8], "little")
        h2 = int.from_bytes(digest[8:], "little") | 1
        m = self.m_bits
        return [(h1 + i * h2) % m for i in range(self.hashes)]

    def _add(self, key: bytes) -> None:
        bits = self.bits
        for pos in self._positions(key):
            bits[pos >> 3] |= 1 << (pos & 7)

    def might_contain(self, key: bytes) -> bool:
        bits = self.bits
        for pos in self._positions(key):
            if not bits[pos >> 3] & (1 << (pos & 7)):
                return False
        return True

    def to_bytes(self) -> bytes:
        blob = bytes(self.bits)
        head = _BLOOM_HDR.pack(self.m_bits, self.hashes, self.salt,
                               len(blob), zlib.crc32(blob))
        return head + blob

    @classmethod
    def from_bytes(cls, buf: bytes) -> "BloomFilter":
        m_bits, hashes, salt, blob_len, crc = _BLOOM_HDR.unpack_from(buf, 0)
        blob = buf[_BLOOM_HDR.size:_BLOOM_HDR.size + blob_len]
        if zlib.crc32(blob) != crc:
            raise CorruptionError("bloom region checksum mismatch")
        return cls(m_bits, hashes, salt, bytearray(blob))


@dataclass(frozen=True)
class ArrayDescriptor:
    """Everything the manifest records about one committed array."""

    seq: int
    level: int
    tag: frozenset[int]
    entry_count: int
    entry_bytes: int
    entry_blocks: int
    index_blocks: int
    bloom_blocks: int
    extents: tuple[Extent, ...]
    min_key: bytes
    max_key: bytes

    @property
    def total_blocks(self) -> int:
        return 1 + self.entry_blocks + self.index_blocks + self.bloom_blocks


@dataclass
class _Fences:
    keys: list[bytes] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)  # _NO_START when none
    crcs: list[int] = field(default_factory=list)

    def append(self, crc: int, offset: int, key: bytes) -> None:
        self.crcs.append(crc)
        self.offsets.append(offset)
        self.keys.append(key)

    def to_bytes(self) -> bytes:
        out = [struct.pack("<I", len(self.keys))]
        for crc, off, key in zip(self.crcs, self.offsets, self.keys):
            out.append(_FENCE_FIXED.pack(crc, off, len(key)))
            out.append(key)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "_Fences":
        (count,) = struct.unpack_from("<I", buf, 0)
        offset = 4
        fences = cls()
        for _ in range(count):
            crc, off, key_len = _FENCE_FIXED.unpack_from(buf, offset)
            offset += _FENCE_FIXED.size
            key = bytes(buf[offset:offset + key_len])
            offset += key_len
            fences.append(crc, off, key)
        return fences


def _blocks_needed(nbytes: int, block_size: int) -> int:
    return max(1, (nbytes + block_size - 1) // block_size)


def _encode_header(desc: ArrayDescriptor, crcs: tuple[int, int, int]) -> bytes:
    tag_sorted = sorted(desc.tag)
    body = _HDR_FIXED.pack(
        ARRAY_MAGIC, ARRAY_FORMAT_VERSION, desc.seq, desc.level,
        desc.entry_count, desc.entry_bytes, desc.entry_blocks,
        desc.index_blocks, desc.bloom_blocks, 0,
        len(tag_sorted), len(desc.min_key), len(desc.max_key),
        crcs[0], crcs[1], crcs[2],
    )
    parts = [body]
    parts.append(struct.pack(f"<{len(tag_sorted)}Q", *tag_sorted) if tag_sorted else b"")
    parts.append(desc.min_key)
    parts.append(desc.max_key)
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def _decode_header(buf: bytes) -> tuple[dict, tuple[int, int, int]]:
    fields = _HDR_FIXED.unpack_from(buf, 0)
    (magic, fmt, seq, level, entry_count, entry_bytes, entry_blocks,
     index_blocks, bloom_blocks, _reserved, tag_count, min_len, max_len,
     entry_crc, index_crc, bloom_crc) = fields
    if magic != ARRAY_MAGIC:
        raise CorruptionError("bad array magic")
    if fmt != ARRAY_FORMAT_VERSION:
        raise CorruptionError(f"unsupported array format {fmt}")
    offset = _HDR_FIXED.size
    tag = frozenset(struct.unpack_from(f"<{tag_count}Q", buf, offset)) if tag_count else frozenset()
    offset += 8 * tag_count
    min_key = bytes(buf[offset:offset + min_len])
    offset += min_len
    max_key = bytes(buf[offset:offset + max_len])
    offset += max_len
    (stored_crc,) = struct.unpack_from("<I", buf, offset)
    if zlib.crc32(buf[:offset]) != stored_crc:
        raise CorruptionError("array header checksum mismatch")
    info = dict(seq=seq, level=level, tag=tag, entry_count=entry_count,
                entry_bytes=entry_bytes, entry_blocks=entry_blocks,
                index_blocks=index_blocks, bloom_blocks=bloom_blocks,
                min_key=min_key, max_key=max_key)
    return info, (entry_crc, index_crc, bloom_crc)


class _ExtentMap:
    """Logical-to-physical block translation over an extent list."""

    __slots__ = ("bases", "extents", "total")

    def __init__(self, extents):
        self.extents = list(extents)
        self.bases = []
        logical = 0
        for _, length in self.extents:
            self.bases.append(logical)
            logical += length
        self.total = logical

    def physical(self, logical_block: int) -> int:
        i = bisect_left(self.bases, logical_block + 1) - 1
        if i < 0:
            raise ValidationError(f"logical block {logical_block} out of array")
        start, length = self.extents[i]
        offset = logical_block - self.bases[i]
        if offset >= length:
            raise ValidationError(f"logical block {logical_block} out of array")
        return start + offset


class ArrayHandle:
    """An open committed array: fences and bloom resident, entries on device."""

    def __init__(self, device: BlockDevice, desc: ArrayDescriptor,
                 fences: _Fences, bloom: BloomFilter):
        self.device = device
        self.desc = desc
        self.fences = fences
        self.bloom = bloom
        self._extent_map = _ExtentMap(desc.extents)

    # -- addressing -------------------------------------------------------

    def _physical(self, logical_block: int) -> int:
        return self._extent_map.physical(logical_block)

    def _read_entry_block(self, region_block: int, stream: IoStream) -> bytes:
        data = self.device.read_block(self._physical(1 + region_block), stream)
        expect = self.fences.crcs[region_block]
        padded = data.ljust(self.device.block_size, b"\x00")
        if zlib.crc32(padded) != expect:
            raise CorruptionError(
                f"entry block {region_block} of array {self.desc.seq} corrupt")
        return padded

    # -- queries -----------------------------------------------------------

    def _start_block_for(self, key: bytes) -> int:
        """Leftmost entry-region block that can hold entries >= key."""
        idx = bisect_left(self.fences.keys, key)
        block = max(0, idx - 1)
        while block > 0 and self.fences.offsets[block] == _NO_START:
            block -= 1
        return block

    def search(self, key: bytes, versions=None, stream: IoStream | None = None) -> list[Entry]:
        """All entries for ``key`` (optionally filtered to a version set).

        A bloom miss answers [] with zero block reads; otherwise at most
        1 + ceil(entry span / block size) entry blocks are read.
        """
        if key < self.desc.min_key or key > self.desc.max_key:
            return []
        if not self.bloom.might_contain(key):
            return []
        if stream is None:
            stream = self.device.new_stream()
        out: list[Entry] = []
        for entry in self._parse_from(self._start_block_for(key), stream):
            if entry[0] < key:
                continue
            if entry[0] != key:
                break
            if versions is None or entry[1] in versions:
                out.append(entry)
        return out

    def scan(self, start: bytes | None = None, end: bytes | None = None,
             stream: IoStream | None = None):
        """Yield entries with start <= key <= end, lazily, in entry order."""
        if self.desc.entry_count == 0:
            return
        if end is not None and end < self.desc.min_key:
            return
        if start is not None and start > self.desc.max_key:
            return
        if stream is None:
            stream = self.device.new_stream()
        first = 0 if start is None else self._start_block_for(start)
        for entry in self._parse_from(first, stream):
            if start is not None and entry[0] < start:
                continue
            if end is not None and entry[0] > end:
                break
            yield entry

    def iter_entries(self, stream: IoStream | None = None):
        return self.scan(None, None, stream)

    def _parse_from(self, region_block: int, stream: IoStream):
        """Decode entries starting at the given block's first fence entry."""
        bs = self.device.block_size
        offsets = self.fences.offsets
        if offsets[region_block] == _NO_START:
            return
        total = self.desc.entry_bytes
        pos = region_block * bs + offsets[region_block]
        buf = bytearray()
        buf_base = pos
        next_block = region_block
        blocks = self.desc.entry_blocks
        while pos < total:
            # ensure the whole next entry is buffered
            while True:
                have = buf_base + len(buf) - pos
                if have >= HEADER_SIZE:
                    key_len, _, _, value_len = _ENTRY_HEADER.unpack_from(
                        buf, pos - buf_base)
                    need = HEADER_SIZE + key_len + value_len
                    if have >= need:
                        break
                if next_block >= blocks:
                    return
                data = self._read_entry_block(next_block, stream)
                if next_block == region_block:
                    buf += data[offsets[region_block]:]
                else:
                    buf += data
                next_block += 1
            entry, consumed = decode_entry(buf, pos - buf_base)
            pos = buf_base + consumed
            yield entry
            if pos - buf_base > 4 * bs:
                buf = buf[pos - buf_base:]
                buf_base = pos


def write_tagged_array(device: BlockDevice, allocator: ExtentAllocator,
                       config: StoreConfig, entries: list[Entry],
                       tag: frozenset[int], level: int, seq: int) -> ArrayHandle:
    """Materialize a sorted run on the device.

    The caller must hold entries in entry order. All regions are written
    through one stream in logical order (header first), so every
    entry-region write lands at predecessor+1 within an extent. The new
    array is not visible until the next manifest commit.
    """
    if not entries:
        raise ValidationError("cannot write an empty array")
    bs = device.block_size

    entry_blocks: list[bytes] = []
    fences = _Fences()
    cur = bytearray()
    block_first: tuple[int, bytes] | None = None
    distinct = 0
    prev_key = None
    salt = hashlib.blake2b(seq.to_bytes(8, "little"), digest_size=8).digest()
    bloom_keys: list[bytes] = []
    entry_bytes = 0

    def flush_block():
        nonlocal cur, block_first
        data = bytes(cur[:bs]).ljust(bs, b"\x00")
        if block_first is None:
            fences.append(zlib.crc32(data), _NO_START,
                          fences.keys[-1] if fences.keys else b"")
        else:
            fences.append(zlib.crc32(data), block_first[0], block_first[1])
        entry_blocks.append(data)
        del cur[:bs]
        block_first = None

    for e in entries:
        while len(cur) >= bs:
            flush_block()
        if block_first is None:
            block_first = (len(cur), e[0])
        if e[0] != prev_key:
            distinct += 1
            bloom_keys.append(e[0])
            prev_key = e[0]
        enc = encode_entry(e)
        cur += enc
        entry_bytes += len(enc)
    while cur:
        flush_block()

    bloom = BloomFilter.build(bloom_keys, distinct, config.bloom_bits_per_key,
                              config.bloom_hashes, salt)
    index_bytes = fences.to_bytes()
    bloom_bytes = bloom.to_bytes()
    index_blocks = _blocks_needed(len(index_bytes), bs)
    bloom_blocks = _blocks_needed(len(bloom_bytes), bs)

    entry_crc = 0
    for block in entry_blocks:
        entry_crc = zlib.crc32(block, entry_crc)
    desc = ArrayDescriptor(
        seq=seq, level=level, tag=frozenset(tag),
        entry_count=len(entries), entry_bytes=entry_bytes,
        entry_blocks=len(entry_blocks), index_blocks=index_blocks,
        bloom_blocks=bloom_blocks, extents=(),
        min_key=entries[0][0], max_key=entries[-1][0],
    )
    extents = tuple(allocator.allocate(desc.total_blocks))
    desc = replace(desc, extents=extents)

    header = _encode_header(desc, (entry_crc,
                                   zlib.crc32(index_bytes),
                                   zlib.crc32(bloom_bytes)))
    stream = device.new_stream()
    handle = ArrayHandle(device, desc, fences, bloom)

    logical = 0

    def write_next(data: bytes):
        nonlocal logical
        device.write_block(handle._physical(logical), data[:bs], stream)
        logical += 1

    write_next(header)
    for block in entry_blocks:
        write_next(block)
    for i in range(index_blocks):
        write_next(index_bytes[i * bs:(i + 1) * bs])
    for i in range(bloom_blocks):
        write_next(bloom_bytes[i * bs:(i + 1) * bs])
    return handle


def open_array(device: BlockDevice, desc: ArrayDescriptor) -> ArrayHandle:
    """Open a committed array: read header, index and bloom regions."""
    bs = device.block_size
    extent_map = _ExtentMap(desc.extents)
    stream = device.new_stream()
    header_raw = device.read_block(extent_map.physical(0), stream)
    info, crcs = _decode_header(header_raw.ljust(bs, b"\x00"))
    if info["seq"] != desc.seq or info["entry_count"] != desc.entry_count:
        raise CorruptionError(
            f"array {desc.seq}: header disagrees with manifest descriptor")

    base = 1 + desc.entry_blocks
    index_raw = b"".join(
        device.read_block(extent_map.physical(base + i), stream).ljust(bs, b"\x00")
        for i in range(desc.index_blocks))
    if zlib.crc32(index_raw[:_index_len(index_raw)]) != crcs[1]:
        raise CorruptionError(f"array {desc.seq}: index region checksum mismatch")
    fences = _Fences.from_bytes(index_raw)

    base += desc.index_blocks
    bloom_raw = b"".join(
        device.read_block(extent_map.physical(base + i), stream).ljust(bs, b"\x00")
        for i in range(desc.bloom_blocks))
    bloom = BloomFilter.from_bytes(bloom_raw)
    return ArrayHandle(device, desc, fences, bloom)


def _index_len(raw: bytes) -> int:
    """Length of the meaningful prefix of a padded index region."""
    (count,) = struct.unpack_from("<I", raw, 0)
    offset = 4
    for _ in range(count):
        _, _, key_len = _FENCE_FIXED.unpack_from(raw, offset)
        offset += _FENCE_FIXED.size + key_len
    return offset
