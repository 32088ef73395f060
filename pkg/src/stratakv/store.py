"""The stratified doubling-array store.

Writes land in an in-memory buffer; full buffers are split into dense
pieces and flushed as immutable level-0 tagged arrays. Whenever a level
holds several arrays with intersecting version tags they are merged,
re-split for density, and oversized pieces are promoted to the next
level, so arrays roughly double in size per level and tags within a
level stay pairwise disjoint at rest.

Readers work against an immutable snapshot (the committed array set of
one manifest epoch plus the current buffer); the visible array set only
ever changes by an atomic swap, and retired arrays stay allocated until
the last reader holding them finishes.
"""

from __future__ import annotations

import heapq
import os
import threading
from dataclasses import dataclass

from . import density as density_mod
from .allocator import Extent, ExtentAllocator
from .arrayfile import ArrayHandle, open_array, write_tagged_array
from .config import StoreConfig, dump_config, load_config
from .device import BlockDevice, FileBlockDevice, RamBlockDevice
from .errors import ExtentInUseError, ValidationError
from .manifest import FileManifestIO, Manifest, ManifestIO, RamManifestIO
from .model import HEADER_SIZE, Entry, sort_key, validate_key, validate_value
from .versions import VersionTree

DEVICE_FILENAME = "device.blk"
CONFIG_FILENAME = "config.toml"

_MISSING = object()


@dataclass
class StoreStats:
    total_written: int
    stored_entries: int
    buffer_entries: int
    buffer_bytes: int
    dup_factor: float
    per_level: dict[int, int]
    level_count: int


class _EpochState:
    """One committed epoch's immutable array set, refcounted by readers.

    ``query_order`` sorts candidates by (level asc, seq desc): an entry
    whose version is inside the array's tag ("authoritative" copy) is
    newest at the lowest level, and within a level newer arrays carry
    higher seqs. Extraction copies (version outside the tag) rank below
    any authoritative copy regardless of position.
    """

    __slots__ = ("epoch", "by_level", "query_order", "refs")

    def __init__(self, epoch: int, by_level: dict[int, tuple[ArrayHandle, ...]]):
        self.epoch = epoch
        self.by_level = by_level
        handles = [h for level in sorted(by_level) for h in by_level[level]]
        handles.sort(key=lambda h: (h.desc.level, -h.desc.seq))
        self.query_order = tuple(handles)
        self.refs = 0


class _Snapshot:
    """A reader's view: epoch state plus the buffer reference."""

    __slots__ = ("state", "buffer", "_store")

    def __init__(self, store: "SdaStore"):
        self._store = store
        with store._swap_lock:
            self.state = store._current_state
            self.state.refs += 1
            self.buffer = store._buffer

    def release(self) -> None:
        store = self._store
        with store._swap_lock:
            self.state.refs -= 1
            store._drain_retired_locked()

    def __enter__(self) -> "_Snapshot":
        return self

    def __exit__(self, *exc) -> None:
        self.release()


class SdaStore:
    """Fully-versioned dictionary over an accounted block device."""

    def __init__(self, device: BlockDevice, manifest_io: ManifestIO,
                 config: StoreConfig, *, _recover: bool):
        self.config = config
        self.device = device
        self._io = manifest_io
        self._swap_lock = threading.Lock()
        self._writer_lock = threading.RLock()
        self._buffer: dict[tuple[bytes, int], bytes | None] = {}
        self._buffer_bytes = 0
        self._working: dict[int, list[ArrayHandle]] = {}
        self._retire_queue: list[tuple[int, list[Extent]]] = []
        self._epoch_states: dict[int, _EpochState] = {}
        self._written_keys: set[int] = set()
        self._total_written = 0
        self.commit_count = 0
        self.kill_hook = None  # callable(stage, commit_index) for crash tests
        self.density_check_failures: list[str] = []
        self.closed = False

        if _recover:
            m = self._io.recover()
            if m.block_size != config.block_size:
                raise ValidationError("config block_size disagrees with manifest")
            self.tree = VersionTree.deserialize(m.tree_blob)
            self.allocator = ExtentAllocator(
                m.capacity_blocks, config.chunk_blocks, list(m.free_extents))
            self._next_seq = m.next_seq
            self._epoch = m.epoch
            for desc in m.arrays:
                self._working.setdefault(desc.level, []).append(
                    open_array(device, desc))
        else:
            self.tree = VersionTree()
            self.tree.create_root()
            self.allocator = ExtentAllocator(
                config.capacity_blocks, config.chunk_blocks)
            self._next_seq = 1
            self._epoch = -1
            self._commit()
        self._publish(clear_buffer=False)
        if _recover:
            # a crash can land between a flush commit and its maintenance
            # commit; finish the interrupted maintenance so the at-rest
            # invariants (disjoint tags per level, density floor) hold
            with self._writer_lock:
                for level in sorted(self._working):
                    self._maintain_locked(level)

    # -- constructors --------------------------------------------------------

    @classmethod
    def create(cls, directory, config: StoreConfig | None = None) -> "SdaStore":
        """Initialize a fresh file-backed store in ``directory``."""
        config = config or StoreConfig()
        os.makedirs(directory, exist_ok=True)
        epoch_path = os.path.join(directory, "EPOCH")
        if os.path.exists(epoch_path):
            raise ValidationError(f"store already exists in {directory}")
        with open(os.path.join(directory, CONFIG_FILENAME), "w") as fh:
            fh.write(dump_config(config))
        device = FileBlockDevice(os.path.join(directory, DEVICE_FILENAME),
                                 config.block_size, config.capacity_blocks)
        return cls(device, FileManifestIO(directory), config, _recover=False)

    @classmethod
    def open(cls, directory) -> "SdaStore":
        """Recover the committed state of an existing store directory."""
        config_path = os.path.join(directory, CONFIG_FILENAME)
        config = load_config(config_path) if os.path.exists(config_path) else StoreConfig()
        io = FileManifestIO(directory)
        probe = io.recover()
        config = config.with_overrides(
            block_size=probe.block_size, capacity_blocks=probe.capacity_blocks)
        device = FileBlockDevice(os.path.join(directory, DEVICE_FILENAME),
                                 probe.block_size, probe.capacity_blocks)
        return cls(device, io, config, _recover=True)

    @classmethod
    def create_ram(cls, config: StoreConfig | None = None) -> "SdaStore":
        """A RAM-backed store with identical accounting (tests, benches)."""
        config = config or StoreConfig()
        device = RamBlockDevice(config.block_size, config.capacity_blocks)
        return cls(device, RamManifestIO(), config, _recover=False)

    # -- version operations ----------------------------------------------------

    def clone(self, parent: int) -> int:
        """O(1) version-tree mutation; performs no block IO."""
        with self._writer_lock:
            return self.tree.clone(parent)

    def delete_version(self, v: int) -> None:
        with self._writer_lock:
            self.tree.delete_version(v)
            # entries at a deleted leaf are unreachable; purge buffered ones
            with self._swap_lock:
                stale = [kv for kv in self._buffer if kv[1] == v]
                for kv in stale:
                    old = self._buffer.pop(kv)
                    self._buffer_bytes -= HEADER_SIZE + len(kv[0])
                    self._buffer_bytes -= len(old) if old is not None else 0

    # -- writes ------------------------------------------------------------------

    def put(self, key: bytes, value: bytes, v: int) -> None:
        validate_key(key)
        validate_value(value)
        with self._writer_lock:
            self.tree.check_usable(v)
            self._buffer_insert(key, v, value)
            self._note_write(key, v)
            if len(self._buffer) >= self.config.flush_entries:
                self._flush_locked()

    def delete_key(self, key: bytes, v: int) -> None:
        """Record a tombstone that shadows ancestor values for v's subtree."""
        validate_key(key)
        with self._writer_lock:
            self.tree.check_usable(v)
            self._buffer_insert(key, v, None)
            self._note_write(key, v)
            if len(self._buffer) >= self.config.flush_entries:
                self._flush_locked()

    def _buffer_insert(self, key: bytes, v: int, value: bytes | None) -> None:
        # mutations share the swap lock with readers that iterate the
        # buffer, so a range scan never sees the dict resize midway
        with self._swap_lock:
            old = self._buffer.get((key, v), _MISSING)
            if old is not _MISSING:
                self._buffer_bytes -= len(old) if old is not None else 0
            else:
                self._buffer_bytes += HEADER_SIZE + len(key)
            self._buffer_bytes += len(value) if value is not None else 0
            self._buffer[(key, v)] = value

    def _note_write(self, key: bytes, v: int) -> None:
        token = hash((key, v))
        if token not in self._written_keys:
            self._written_keys.add(token)
            self._total_written += 1

    # -- reads --------------------------------------------------------------------

    def get(self, key: bytes, v: int) -> bytes | None:
        """Value at the closest ancestor-or-self write, or None.

        Duplicate (key, version) copies are resolved newest-first: the
        buffer, then authoritative copies (entry version inside the
        array tag) in (level asc, seq desc) order, then extraction
        copies. Extraction copies are snapshots of some earlier
        authoritative state, so an authoritative hit always wins.
        """
        validate_key(key)
        self.tree.check_usable(v)
        path = self.tree.path(v)
        anc = self.tree.ancestor_set(v)
        index_of = {u: i for i, u in enumerate(path)}  # 0 = closest
        best = None  # (path_idx, is_extraction_copy, scan_rank)
        best_value = None
        with _Snapshot(self) as snap:
            buffer = snap.buffer
            for i, u in enumerate(path):
                hit = buffer.get((key, u), _MISSING)
                if hit is not _MISSING:
                    best, best_value = (i, False, -1), hit
                    break
            if best is not None and best[0] == 0:
                return best_value
            for rank, handle in enumerate(snap.state.query_order):
                if not (handle.desc.tag & anc):
                    continue
                for entry in handle.search(key, anc):
                    cand = (index_of[entry[1]], entry[3], rank)
                    if best is None or cand < best:
                        best, best_value = cand, entry[2]
                if best is not None and best[0] == 0 and not best[1]:
                    break  # an authoritative exact-version hit is final
        return best_value

    def range_query(self, start: bytes, end: bytes | None, v: int,
                    limit: int | None = None) -> list[tuple[bytes, bytes]]:
        """Live (key, value) pairs in [start, end] at v, ascending by key.

        ``end=None`` is unbounded; ``limit`` caps the number of results
        (the scan stops issuing IO once it is reached).
        """
        validate_key(start)
        if end is not None:
            validate_key(end)
            if start > end:
                raise ValidationError("range start exceeds end")
        self.tree.check_usable(v)
        path = self.tree.path(v)
        anc = self.tree.ancestor_set(v)
        index_of = {u: i for i, u in enumerate(path)}
        out: list[tuple[bytes, bytes]] = []
        with _Snapshot(self) as snap:
            with self._swap_lock:
                buffered = [
                    (kv[0], (index_of[kv[1]], False, -1), val)
                    for kv, val in snap.buffer.items()
                    if kv[1] in anc and kv[0] >= start and (end is None or kv[0] <= end)
                ]
            buffered.sort(key=lambda t: t[0])
            sources = [iter(buffered)]
            for rank, handle in enumerate(snap.state.query_order):
                if handle.desc.tag & anc:
                    sources.append(self._array_source(handle, rank, start, end,
                                                      anc, index_of))
            merged = heapq.merge(*sources, key=lambda t: t[0])
            group_key = None
            group_rank = None
            group_value = None
            for key, rank_tuple, value in merged:
                if key != group_key:
                    if group_rank is not None and group_value is not None:
                        out.append((group_key, group_value))
                        if limit is not None and len(out) >= limit:
                            group_rank = None
                            break
                    group_key = key
                    group_rank, group_value = rank_tuple, value
                elif rank_tuple < group_rank:
                    group_rank, group_value = rank_tuple, value
            if group_rank is not None and group_value is not None:
                if limit is None or len(out) < limit:
                    out.append((group_key, group_value))
        return out

    @staticmethod
    def _array_source(handle: ArrayHandle, rank: int, start: bytes,
                      end: bytes | None, anc: frozenset[int],
                      index_of: dict[int, int]):
        for entry in handle.scan(start, end):
            if entry[1] in anc:
                yield (entry[0], (index_of[entry[1]], entry[3], rank), entry[2])

    # -- flush and maintenance --------------------------------------------------

    def flush(self) -> None:
        with self._writer_lock:
            if not self._buffer:
                raise ValidationError("flush requires a non-empty buffer")
            self._flush_locked()

    def _flush_locked(self) -> None:
        entries = sorted(
            (Entry(k, u, val) for (k, u), val in self._buffer.items()),
            key=sort_key)
        tag = frozenset(u for _, u in self._buffer)
        pieces = density_mod.amplify(entries, tag, self.tree,
                                     self.config.min_density)
        for piece_entries, piece_tag in pieces:
            handle = self._write_array(piece_entries, piece_tag, 0)
            self._working.setdefault(0, []).append(handle)
        self._commit()
        self._publish(clear_buffer=True)
        self._maintain_locked(0)

    def maintain_level(self, level: int) -> None:
        """Merge intersecting tags at ``level``, amplify, promote, commit."""
        with self._writer_lock:
            self._maintain_locked(level)

    def _maintain_locked(self, level: int) -> None:
        pending = {level}
        while pending:
            current = min(pending)
            pending.discard(current)
            received = self._maintain_one_level(current)
            pending.update(x for x in received if x > current)

    def _maintain_one_level(self, level: int) -> set[int]:
        handles = self._working.get(level, [])
        if not handles:
            return set()
        deleted = self.tree.deleted_set
        groups = self._intersection_groups(handles)
        received: set[int] = set()
        changed = False
        retired_extents: list[Extent] = []
        for group in groups:
            needs = (len(group) >= 2
                     or any(h.desc.tag & deleted for h in group)
                     or any(h.desc.entry_count >= self._level_bound(level)
                            for h in group))
            if not needs:
                continue
            changed = True
            merged = self._merge_group(group, deleted)
            union_tag = frozenset().union(*(h.desc.tag for h in group)) - deleted
            for h in group:
                self._working[level].remove(h)
                retired_extents.extend(h.desc.extents)
            if merged and union_tag:
                pieces = density_mod.amplify(merged, union_tag, self.tree,
                                             self.config.min_density)
                for piece_entries, piece_tag in pieces:
                    # promotion moves one level at a time so that, for any
                    # (key, version), arrays owning that version lower in
                    # the hierarchy are always at least as fresh as those
                    # above; a still-oversized piece keeps climbing on the
                    # next round via the size-bound rebuild trigger
                    target = level
                    if len(piece_entries) >= self._level_bound(level):
                        target = level + 1
                    handle = self._write_array(piece_entries, piece_tag, target)
                    self._working.setdefault(target, []).append(handle)
                    received.add(target)
        if changed:
            # queued before the commit so its serialized free list covers
            # the retired extents (they are no longer referenced)
            if retired_extents:
                self._retire_queue.append((self._epoch + 1, retired_extents))
            self._commit()
            self._publish(clear_buffer=False)
        return received

    def _level_bound(self, level: int) -> int:
        return self.config.flush_entries * (2 ** (level + 1))

    @staticmethod
    def _intersection_groups(handles: list[ArrayHandle]) -> list[list[ArrayHandle]]:
        """Group arrays by the transitive closure of tag intersection."""
        parent = list(range(len(handles)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        by_version: dict[int, int] = {}
        for i, h in enumerate(handles):
            for v in h.desc.tag:
                if v in by_version:
                    ri, rj = find(i), find(by_version[v])
                    if ri != rj:
                        parent[ri] = rj
                else:
                    by_version[v] = i
        buckets: dict[int, list[ArrayHandle]] = {}
        for i, h in enumerate(handles):
            buckets.setdefault(find(i), []).append(h)
        return list(buckets.values())

    def _merge_group(self, group: list[ArrayHandle], deleted: frozenset[int]) -> list[Entry]:
        """Merge-sort a group resolving (key, version) duplicates newest
        first (authoritative copies over extraction copies, then higher
        seq), dropping entries whose version was deleted. Tombstones
        survive: they must keep shadowing ancestor values elsewhere."""

        def tagged_source(handle: ArrayHandle):
            neg_seq = -handle.desc.seq
            for entry in handle.iter_entries():
                yield entry, (entry[3], neg_seq)

        sources = [tagged_source(h) for h in group]
        merged: list[Entry] = []
        last = None
        best_rank = None
        best_entry = None
        for entry, rank in heapq.merge(*sources, key=lambda t: sort_key(t[0])):
            kv = (entry[0], entry[1])
            if kv != last:
                if best_entry is not None and best_entry[1] not in deleted:
                    merged.append(best_entry)
                last = kv
                best_rank, best_entry = rank, entry
            elif rank < best_rank:
                best_rank, best_entry = rank, entry
        if best_entry is not None and best_entry[1] not in deleted:
            merged.append(best_entry)
        return merged

    def _write_array(self, entries: list[Entry], tag: frozenset[int],
                     level: int) -> ArrayHandle:
        seq = self._next_seq
        self._next_seq += 1
        if self.config.paranoid_density_checks:
            self._check_density(entries, tag, level, seq)
        return write_tagged_array(self.device, self.allocator, self.config,
                                  entries, tag, level, seq)

    def _check_density(self, entries, tag, level, seq) -> None:
        from fractions import Fraction
        live_tag = tag - self.tree.deleted_set
        if not live_tag or not entries:
            return
        report = density_mod.density(entries, live_tag, self.tree)
        for w, (live, _) in report.per_version.items():
            if Fraction(live, len(entries)) < self.config.min_density:
                self.density_check_failures.append(
                    f"array seq={seq} level={level}: density {live}/"
                    f"{len(entries)} at version {w} below the floor at write time")

    # -- commit / publish / retire ------------------------------------------------

    def _all_descriptors(self):
        return tuple(
            h.desc
            for level in sorted(self._working)
            for h in self._working[level])

    def _serialized_free(self) -> tuple[Extent, ...]:
        """The logical free list: allocator state plus retire-pending extents."""
        pending = [e for _, extents in self._retire_queue for e in extents]
        shadow = ExtentAllocator(self.allocator.capacity_blocks,
                                 self.allocator.chunk_blocks,
                                 self.allocator.free_extents())
        if pending:
            shadow.release(pending)
        return tuple(shadow.free_extents())

    def _commit(self) -> None:
        self.device.fsync()
        epoch = self._epoch + 1
        manifest = Manifest(
            epoch=epoch, block_size=self.config.block_size,
            capacity_blocks=self.allocator.capacity_blocks,
            chunk_blocks=self.allocator.chunk_blocks,
            next_seq=self._next_seq, tree_blob=self.tree.serialize(),
            arrays=self._all_descriptors(),
            free_extents=self._serialized_free())
        index = self.commit_count
        hook = None
        if self.kill_hook is not None:
            hook = lambda stage: self.kill_hook(stage, index)
        self._io.commit(manifest, hook)
        self._epoch = epoch
        self.commit_count += 1

    def _publish(self, *, clear_buffer: bool) -> None:
        by_level = {
            level: tuple(handles)
            for level, handles in self._working.items() if handles
        }
        state = _EpochState(self._epoch, by_level)
        with self._swap_lock:
            self._epoch_states[state.epoch] = state
            self._current_state = state
            if clear_buffer:
                self._buffer = {}
                self._buffer_bytes = 0
            self._drain_retired_locked()

    def release_extents(self, extents: list[Extent]) -> None:
        """Checked release: refuses extents any live array still references."""
        with self._swap_lock:
            self._release_checked(extents)

    def _release_checked(self, extents: list[Extent]) -> None:
        for start, length in extents:
            end = start + length
            for desc in self._all_descriptors():
                for ref_start, ref_len in desc.extents:
                    if start < ref_start + ref_len and ref_start < end:
                        raise ExtentInUseError(
                            f"extent ({start},{length}) is referenced by "
                            f"array seq={desc.seq}")
        self.allocator.release(extents)

    def _drain_retired_locked(self) -> None:
        held = [s.epoch for s in self._epoch_states.values() if s.refs > 0]
        floor = min(held) if held else self._current_state.epoch
        keep: list[tuple[int, list[Extent]]] = []
        for barrier, extents in self._retire_queue:
            if barrier <= floor:
                self._release_checked(extents)
            else:
                keep.append((barrier, extents))
        self._retire_queue = keep
        for epoch in [e for e, s in self._epoch_states.items()
                      if s.refs == 0 and s is not self._current_state]:
            del self._epoch_states[epoch]

    # -- inspection -----------------------------------------------------------------

    def stats(self) -> StoreStats:
        stored = len(self._buffer) + sum(
            h.desc.entry_count for hs in self._working.values() for h in hs)
        per_level = {level: len(hs) for level, hs in sorted(self._working.items()) if hs}
        return StoreStats(
            total_written=self._total_written,
            stored_entries=stored,
            buffer_entries=len(self._buffer),
            buffer_bytes=self._buffer_bytes,
            dup_factor=stored / self._total_written if self._total_written else 1.0,
            per_level=per_level,
            level_count=len(per_level),
        )

    def candidate_array_count(self, v: int) -> int:
        """Arrays a query at v consults (tag intersects v's ancestry)."""
        anc = self.tree.ancestor_set(v)
        return sum(1 for h in self._current_state.query_order if h.desc.tag & anc)

    def audit(self) -> list[str]:
        """Recheck every structural invariant; empty list when healthy."""
        from fractions import Fraction
        violations: list[str] = []
        with self._writer_lock:
            deleted = self.tree.deleted_set
            for level, handles in sorted(self._working.items()):
                seen_tags: list[frozenset[int]] = []
                for h in handles:
                    desc = h.desc
                    label = f"array seq={desc.seq} level={level}"
                    try:
                        fresh = open_array(self.device, desc)
                        entries = list(fresh.iter_entries())
                    except Exception as exc:  # corrupt data is a violation, not a crash
                        violations.append(f"{label}: unreadable ({exc})")
                        continue
                    if len(entries) != desc.entry_count:
                        violations.append(f"{label}: entry count mismatch")
                    if any(sort_key(entries[i]) >= sort_key(entries[i + 1])
                           for i in range(len(entries) - 1)):
                        violations.append(f"{label}: entries out of order")
                    if desc.entry_count >= self._level_bound(level):
                        violations.append(f"{label}: exceeds level size bound")
                    bad_versions = [v for v in desc.tag if not self.tree.exists(v)]
                    if bad_versions:
                        violations.append(f"{label}: tag references unknown versions {bad_versions}")
                    live_tag = desc.tag - deleted
                    if live_tag and entries:
                        report = density_mod.density(entries, live_tag, self.tree)
                        for w, (live, _) in report.per_version.items():
                            if Fraction(live, len(entries)) < self.config.min_density:
                                violations.append(
                                    f"{label}: density {live}/{len(entries)} at version {w} "
                                    f"below {self.config.min_density}")
                    for other in seen_tags:
                        if other & desc.tag:
                            violations.append(f"{label}: tag overlaps a sibling at level {level}")
                    seen_tags.append(desc.tag)
            referenced = [e for d in self._all_descriptors() for e in d.extents]
            pending = [e for _, extents in self._retire_queue for e in extents]
            shadow = ExtentAllocator(self.allocator.capacity_blocks,
                                     self.allocator.chunk_blocks,
                                     self.allocator.free_extents())
            try:
                if pending:
                    shadow.release(pending)
            except Exception as exc:
                violations.append(f"retire queue overlaps free list: {exc}")
            violations.extend(shadow.audit_partition(referenced))
        return violations

    def close(self) -> None:
        if self.closed:
            return
        with self._writer_lock:
            if self._buffer:
                self._flush_locked()
            with self._swap_lock:
                self._drain_retired_locked()
            self.device.close()
            self.closed = True
