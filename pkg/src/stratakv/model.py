"""Keys, payloads, entries and the canonical entry order.

An entry is the atomic unit of storage: ``(key, version, payload)``
where the payload is either a value or a tombstone (``value is None``).
Every sorted run in the system is ordered by ``entry_order``: key bytes
ascending, then version id ascending. Payload never participates in the
order, so two entries compare equal iff their (key, version) agree.

The ``shadow`` flag marks extraction copies: when a low-density run is
split along version subtrees, entries duplicated into a piece that does
not own their version are snapshots, not the authoritative copy. The
mark is sticky and decides recency ties, so a stale snapshot can never
outrank the original write's lineage.
"""

from __future__ import annotations

import struct
from typing import NamedTuple, Optional

from .errors import ValidationError

MIN_KEY_LEN = 1
MAX_KEY_LEN = 1024
MAX_VALUE_LEN = 65535

# key_len:u16  version:u64  flags:u8  value_len:u32, little-endian
_HEADER = struct.Struct("<HQBI")
HEADER_SIZE = _HEADER.size
FLAG_TOMBSTONE = 0x01
FLAG_SHADOW = 0x02


class Entry(NamedTuple):
    key: bytes
    version: int
    value: Optional[bytes]  # None encodes a tombstone
    shadow: bool = False

    @property
    def is_tombstone(self) -> bool:
        return self.value is None


def validate_key(key: bytes) -> None:
    if not isinstance(key, bytes):
        raise ValidationError(f"key must be bytes, got {type(key).__name__}")
    if not MIN_KEY_LEN <= len(key) <= MAX_KEY_LEN:
        raise ValidationError(f"key length {len(key)} outside [{MIN_KEY_LEN}, {MAX_KEY_LEN}]")


def validate_value(value: bytes) -> None:
    if not isinstance(value, bytes):
        raise ValidationError(f"value must be bytes, got {type(value).__name__}")
    if len(value) > MAX_VALUE_LEN:
        raise ValidationError(f"value length {len(value)} exceeds {MAX_VALUE_LEN}")


def entry_order(a: Entry, b: Entry) -> int:
    """Total order on entries: -1, 0 or 1. Payload is ignored."""
    if a.key != b.key:
        return -1 if a.key < b.key else 1
    if a.version != b.version:
        return -1 if a.version < b.version else 1
    return 0


def sort_key(e: Entry):
    return (e[0], e[1])


def encoded_size(e: Entry) -> int:
    return HEADER_SIZE + len(e[0]) + (0 if e[2] is None else len(e[2]))


def encode_entry(e: Entry) -> bytes:
    """Serialize one entry to the wire format."""
    key, version, value, shadow = e
    flags = FLAG_SHADOW if shadow else 0
    if value is None:
        return _HEADER.pack(len(key), version, flags | FLAG_TOMBSTONE, 0) + key
    return _HEADER.pack(len(key), version, flags, len(value)) + key + value


def decode_entry(buf, offset: int = 0) -> tuple[Entry, int]:
    """Parse one entry at ``offset``; returns (entry, next offset)."""
    key_len, version, flags, value_len = _HEADER.unpack_from(buf, offset)
    offset += HEADER_SIZE
    key = bytes(buf[offset:offset + key_len])
    offset += key_len
    shadow = bool(flags & FLAG_SHADOW)
    if flags & FLAG_TOMBSTONE:
        return Entry(key, version, None, shadow), offset
    value = bytes(buf[offset:offset + value_len])
    offset += value_len
    return Entry(key, version, value, shadow), offset
