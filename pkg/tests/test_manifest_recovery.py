import pytest

from stratakv.arrayfile import ArrayDescriptor
from stratakv.errors import CrashPoint, NoValidManifestError
from stratakv.manifest import (COMMIT_STAGES, FileManifestIO, Manifest,
                               RamManifestIO, decode_manifest, encode_manifest)
from stratakv.versions import VersionTree


def sample_manifest(epoch=0, arrays=(), free=((0, 64),)) -> Manifest:
    tree = VersionTree()
    tree.create_root()
    return Manifest(epoch=epoch, block_size=4096, capacity_blocks=64,
                    chunk_blocks=16, next_seq=5, tree_blob=tree.serialize(),
                    arrays=tuple(arrays), free_extents=tuple(free))


def sample_descriptor(seq=1) -> ArrayDescriptor:
    return ArrayDescriptor(seq=seq, level=2, tag=frozenset({0, 3}),
                           entry_count=10, entry_bytes=300, entry_blocks=1,
                           index_blocks=1, bloom_blocks=1,
                           extents=((4, 4),), min_key=b"a", max_key=b"zz")


def test_codec_roundtrip():
    m = sample_manifest(epoch=3, arrays=[sample_descriptor(), sample_descriptor(9)],
                        free=((0, 4), (8, 56)))
    decoded = decode_manifest(encode_manifest(m))
    assert decoded == m


def test_commit_then_recover(tmp_path):
    io = FileManifestIO(tmp_path)
    io.commit(sample_manifest(epoch=0))
    io.commit(sample_manifest(epoch=1, free=((0, 32),)))
    recovered = io.recover()
    assert recovered.epoch == 1
    assert recovered.free_extents == ((0, 32),)


def test_recover_without_any_manifest(tmp_path):
    with pytest.raises(NoValidManifestError):
        FileManifestIO(tmp_path).recover()


class _KillAt:
    def __init__(self, stage):
        self.stage = stage

    def __call__(self, stage):
        if stage == self.stage:
            raise CrashPoint(stage)


@pytest.mark.parametrize("stage", COMMIT_STAGES)
@pytest.mark.parametrize("backend", ["file", "ram"])
def test_kill_points_recover_pre_or_post(stage, backend, tmp_path):
    io = FileManifestIO(tmp_path) if backend == "file" else RamManifestIO()
    io.commit(sample_manifest(epoch=0))
    new = sample_manifest(epoch=1, free=((0, 1),))
    with pytest.raises(CrashPoint):
        io.commit(new, kill_hook=_KillAt(stage))
    recovered = io.recover()
    if stage == "post_epoch":
        assert recovered.epoch == 1
    else:
        # the epoch pointer is the commit point: a fully written but
        # unswitched slot must not become visible
        assert recovered.epoch == 0


def test_torn_slot_falls_back_to_previous_epoch(tmp_path):
    io = FileManifestIO(tmp_path)
    io.commit(sample_manifest(epoch=0))
    io.commit(sample_manifest(epoch=1))
    # tear the slot that epoch 1 lives in, byte by byte
    slot = io.SLOTS[1 % 2]
    raw = io.read_slot(slot)
    for cut in (0, 1, len(raw) // 2, len(raw) - 1):
        io.write_slot(slot, raw[:cut])
        assert io.recover().epoch == 0
    io.write_slot(slot, raw)
    assert io.recover().epoch == 1


def test_corrupt_epoch_pointer_falls_back_to_slot_scan(tmp_path):
    io = FileManifestIO(tmp_path)
    io.commit(sample_manifest(epoch=0))
    io.write_epoch_record(b"garbage-epoch-rec")
    assert io.recover().epoch == 0


def test_corrupt_manifest_bytes_fuzz(tmp_path):
    io = FileManifestIO(tmp_path)
    io.commit(sample_manifest(epoch=0, arrays=[sample_descriptor()]))
    io.commit(sample_manifest(epoch=1, arrays=[sample_descriptor(2)]))
    slot = io.SLOTS[1]
    raw = bytearray(io.read_slot(slot))
    for i in range(0, len(raw), 7):
        corrupted = bytearray(raw)
        corrupted[i] ^= 0x5A
        io.write_slot(slot, bytes(corrupted))
        recovered = io.recover()
        assert recovered.epoch in (0, 1)  # never garbage, never a crash
    io.write_slot(slot, bytes(raw))
    assert io.recover().epoch == 1
