import pytest

from stratakv.allocator import ExtentAllocator
from stratakv.device import FileBlockDevice, RamBlockDevice
from stratakv.errors import DoubleFreeError, OutOfSpaceError, ValidationError


@pytest.fixture(params=["ram", "file"])
def device(request, tmp_path):
    if request.param == "ram":
        dev = RamBlockDevice(block_size=512, capacity_blocks=64)
    else:
        dev = FileBlockDevice(tmp_path / "dev.blk", block_size=512,
                              capacity_blocks=64)
    yield dev
    dev.close()


def test_device_roundtrip(device):
    device.write_block(3, b"hello")
    assert device.read_block(3)[:5] == b"hello"


def test_device_counts_reads_and_writes(device):
    device.write_block(0, b"a")
    device.read_block(0)
    device.read_block(0)
    assert device.counters.writes == 1
    assert device.counters.reads == 2


def test_stream_sequentiality_accounting(device):
    s = device.new_stream()
    device.write_block(5, b"x", s)   # first IO establishes the head
    device.write_block(6, b"y", s)   # +1: sequential
    device.write_block(9, b"z", s)   # jump: a seek
    c = device.counters
    assert c.writes == 3
    assert c.seq_writes == 2
    assert c.seeks == 1


def test_streams_are_independent(device):
    a, b = device.new_stream(), device.new_stream()
    device.write_block(0, b"x", a)
    device.write_block(10, b"y", b)  # interleaved, but first on its stream
    device.write_block(1, b"x", a)
    device.write_block(11, b"y", b)
    assert device.counters.seq_writes == 4
    assert device.counters.seeks == 0


def test_out_of_range_address_rejected(device):
    with pytest.raises(ValidationError):
        device.read_block(64)
    with pytest.raises(ValidationError):
        device.write_block(-1, b"x")


def test_oversized_payload_rejected(device):
    with pytest.raises(ValidationError):
        device.write_block(0, b"x" * 513)


def test_counters_delta_and_fraction(device):
    before = device.counters.snapshot()
    s = device.new_stream()
    device.write_block(0, b"a", s)
    device.write_block(1, b"b", s)
    delta = device.counters.delta(before)
    assert (delta.reads, delta.writes) == (0, 2)
    assert delta.sequential_fraction() == 1.0


# -- allocator ----------------------------------------------------------------

def test_first_fit_on_empty_device():
    alloc = ExtentAllocator(capacity_blocks=100, chunk_blocks=40)
    assert alloc.allocate(10) == [(0, 10)]


def test_chunked_fallback_across_two_regions():
    alloc = ExtentAllocator(capacity_blocks=150, chunk_blocks=40)
    # carve the device into two free 50-block regions with a wall between
    first = alloc.allocate(50)
    wall = alloc.allocate(50)
    alloc.release(first)
    del wall  # region [50,100) stays allocated
    # free: [0,50) and [100,150); ask for 80 -> chunked across both
    got = alloc.allocate(80)
    assert got == [(0, 40), (40, 10), (100, 30)]
    assert sum(length for _, length in got) == 80


def test_allocate_beyond_free_space_errors_without_side_effects():
    alloc = ExtentAllocator(capacity_blocks=10, chunk_blocks=4)
    before = alloc.free_extents()
    with pytest.raises(OutOfSpaceError):
        alloc.allocate(11)
    assert alloc.free_extents() == before


def test_release_restores_initial_free_list():
    alloc = ExtentAllocator(capacity_blocks=100, chunk_blocks=10)
    initial = alloc.free_extents()
    extents = alloc.allocate(25)
    alloc.release(extents)
    assert alloc.free_extents() == initial


def test_adjacent_releases_coalesce():
    alloc = ExtentAllocator(capacity_blocks=30, chunk_blocks=10)
    a = alloc.allocate(10)
    b = alloc.allocate(10)
    alloc.release(a)
    alloc.release(b)
    assert alloc.free_extents() == [(0, 30)]


def test_double_free_detected():
    alloc = ExtentAllocator(capacity_blocks=30, chunk_blocks=10)
    extents = alloc.allocate(5)
    alloc.release(extents)
    with pytest.raises(DoubleFreeError):
        alloc.release(extents)


def test_partition_audit_flags_leaks_and_overlaps():
    alloc = ExtentAllocator(capacity_blocks=40, chunk_blocks=10)
    used = alloc.allocate(10)
    assert alloc.audit_partition(used) == []
    assert any("leak" in p for p in alloc.audit_partition([]))
    assert any("overlap" in p for p in alloc.audit_partition(used + [(5, 10)]))


def test_serialize_roundtrip():
    alloc = ExtentAllocator(capacity_blocks=64, chunk_blocks=8)
    alloc.allocate(10)
    keep = alloc.allocate(6)
    alloc.release(keep)
    blob = alloc.serialize()
    other, consumed = ExtentAllocator.deserialize(blob, 0, 64, 8)
    assert consumed == len(blob)
    assert other.free_extents() == alloc.free_extents()
