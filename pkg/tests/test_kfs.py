import pytest

from pmsplit import faults
from pmsplit.crashcheck import TraceInterpreter
from pmsplit.crashcheck.plans import ADVERSARIAL, enumerate_plans
from pmsplit.errors import Exists, InvalidArgument, NoSpace, NotFound, Unmountable
from pmsplit.kfs import BLOCK_SIZE, Geometry, RelinkOp, mkfs, mount
from pmsplit.pmem import PmemDevice

from conftest import new_fs

BS = BLOCK_SIZE


def contents(fs) -> dict[str, bytes]:
    return {n: fs.read_direct(i, 0, fs.stat(i).size) for n, i in sorted(fs.names.items())}


def file_with(fs, name, data):
    ino = fs.create(name)
    fs.write_direct(ino, 0, data)
    return ino


def test_first_create_gets_inode_one(fs):
    assert fs.create("a") == 1


def test_create_unlink_lookup(fs):
    fs.create("a")
    fs.unlink("a")
    with pytest.raises(NotFound):
        fs.lookup("a")
    with pytest.raises(NotFound):
        fs.unlink("a")


def test_create_existing_name_fails(fs):
    fs.create("a")
    with pytest.raises(Exists):
        fs.create("a")


def test_rename_replaces_destination(fs):
    a = file_with(fs, "a", b"A" * 100)
    file_with(fs, "b", b"B" * 5000)
    free = fs.free_blocks()
    fs.rename("a", "b")
    assert fs.listdir() == ["b"]
    assert fs.lookup("b") == a
    assert fs.read_direct(a, 0, 100) == b"A" * 100
    assert fs.free_blocks() == free + 2
    assert fs.fsck() == []


def test_write_direct_and_read_direct(fs):
    ino = fs.create("f")
    fs.write_direct(ino, 0, b"hello")
    fs.write_direct(ino, 10, b"world")  # gap reads back as zeros
    assert fs.read_direct(ino, 0, 100) == b"hello" + bytes(5) + b"world"
    assert fs.stat(ino).size == 15


def test_allocate_extends_size_and_maps_blocks(fs):
    ino = fs.create("f")
    fs.allocate(ino, 0, 3 * BS)
    assert fs.stat(ino).size == 3 * BS
    assert None not in fs.block_map(ino, 0, 3)
    assert fs.read_direct(ino, 0, 3 * BS) == bytes(3 * BS)


def test_map_extents_rejects_holes(fs):
    ino = fs.create("f")
    fs.write_direct(ino, 2 * BS, b"x")  # zero-fills, so no hole
    assert sum(n for _, n in fs.map_extents(ino, 0, 2 * BS + 1)) == 2 * BS + 1
    other = fs.create("g")
    fs.allocate(other, 0, BS)
    fs.truncate(other, 0)
    with pytest.raises(InvalidArgument):
        fs.map_extents(other, 0, BS)


def test_truncate_frees_blocks_and_zeroes_tail_on_regrow(fs):
    ino = file_with(fs, "f", b"z" * (3 * BS))
    free = fs.free_blocks()
    fs.truncate(ino, 100)
    assert fs.free_blocks() == free + 2
    fs.truncate(ino, 200)
    assert fs.read_direct(ino, 0, 200) == b"z" * 100 + bytes(100)
    assert fs.fsck() == []


def test_relink_aligned_moves_blocks_without_copy(fs):
    src = file_with(fs, "src", bytes(range(256)) * 32)
    dst = fs.create("dst")
    blocks = fs.block_map(src, 0, 2)
    gen_src, gen_dst = fs.stat(src).generation, fs.stat(dst).generation
    before = fs.device.counters.relink_data_bytes_copied
    stats = fs.relink(src, 0, dst, 0, 2 * BS)
    assert fs.block_map(dst, 0, 2) == blocks
    assert fs.block_map(src, 0, 2) == [None, None]
    assert stats.copied_bytes == 0
    assert fs.device.counters.relink_data_bytes_copied == before
    assert fs.read_direct(dst, 0, 2 * BS) == bytes(range(256)) * 32
    assert fs.stat(src).generation > gen_src
    assert fs.stat(dst).generation > gen_dst
    assert fs.fsck() == []


def test_relink_unaligned_tail_copies_exactly_the_tail(fs):
    data = bytes(i % 251 for i in range(BS + 512))
    src = file_with(fs, "src", data)
    dst = fs.create("dst")
    stats = fs.relink(src, 0, dst, 0, BS + 512)
    assert len(stats.moved_blocks) == 1
    assert stats.copied_bytes == 512
    assert fs.device.counters.relink_data_bytes_copied == 512
    assert fs.read_direct(dst, 0, BS + 512) == data
    assert fs.stat(dst).size == BS + 512


def test_relink_onto_mapped_range_frees_old_blocks(fs):
    src = file_with(fs, "src", b"n" * (2 * BS))
    dst = file_with(fs, "dst", b"o" * (2 * BS))
    old = fs.block_map(dst, 0, 2)
    free = fs.free_blocks()
    fs.relink(src, 0, dst, 0, 2 * BS)
    assert fs.free_blocks() == free + 2
    owned = {b for i in fs.inodes.values() for b in i.blocks.values()}
    assert not owned & set(old)
    assert fs.read_direct(dst, 0, 2 * BS) == b"n" * (2 * BS)
    again = mount(fs.device)
    assert again.free_blocks() == free + 2
    assert again.fsck() == []


def test_relink_extends_size_only_when_range_grows(fs):
    src = file_with(fs, "src", b"s" * BS)
    dst = file_with(fs, "dst", b"d" * (3 * BS))
    fs.relink(src, 0, dst, 0, BS)
    assert fs.stat(dst).size == 3 * BS


def test_relink_hole_in_source_is_rejected(fs):
    src = fs.create("src")
    dst = fs.create("dst")
    with pytest.raises(InvalidArgument):
        fs.relink(src, 0, dst, 0, BS)


def test_relink_enospc_aborts_whole_transaction():
    fs = new_fs(1 << 20, journal_blocks=16, inode_table_blocks=1, namespace_blocks=1)
    src = file_with(fs, "src", b"q" * (BS + 100))
    dst = fs.create("dst")
    filler = fs.create("filler")
    fs.allocate(filler, 0, fs.free_blocks() * BS)
    assert fs.free_blocks() == 0
    snap = fs.device.snapshot("volatile")
    src_blocks = fs.block_map(src, 0, 2)
    with pytest.raises(NoSpace):
        fs.relink(src, 0, dst, 0, BS + 100)  # the 100-byte tail needs a fresh block
    assert fs.block_map(src, 0, 2) == src_blocks
    assert fs.stat(dst).size == 0
    assert fs.device.snapshot("volatile") == snap
    assert fs.fsck() == []


def test_relink_via_swap_fallback_matches_native(fs):
    payload = b"w" * (2 * BS)
    src = file_with(fs, "src", payload)
    dst = file_with(fs, "dst", b"o" * BS)
    free = fs.free_blocks()
    moved = fs.block_map(src, 0, 2)
    stats = fs.relink(src, 0, dst, 0, 2 * BS, via_swap=True)
    assert stats.copied_bytes == 0
    assert fs.block_map(dst, 0, 2) == moved
    assert fs.read_direct(dst, 0, 2 * BS) == payload
    assert fs.free_blocks() == free + 1
    assert fs.fsck() == []


def test_relink_batch_copy_only_copies_everything(fs):
    src = file_with(fs, "src", b"c" * (2 * BS))
    dst = fs.create("dst")
    stats = fs.relink_batch([RelinkOp(src, 0, dst, 0, 2 * BS)], copy_only=True)
    assert stats.copied_bytes == 2 * BS
    assert fs.block_map(src, 0, 2) != [None, None]
    assert fs.read_direct(dst, 0, 2 * BS) == b"c" * (2 * BS)


def test_relink_batch_replay_is_idempotent(fs):
    src = file_with(fs, "src", b"r" * (2 * BS))
    dst = fs.create("dst")
    op = RelinkOp(src, 0, dst, 0, 2 * BS)
    fs.relink_batch([op])
    state = contents(fs)
    fs.relink_batch([op], replay=True)  # source blocks already gone
    assert contents(fs) == state
    assert fs.fsck() == []


def test_mount_is_idempotent(fs):
    file_with(fs, "a", b"1" * 5000)
    b = file_with(fs, "b", b"2" * 300)
    fs.relink(b, 0, fs.lookup("a"), 0, 300)
    dev = fs.device
    first = mount(dev)
    snap = dev.snapshot()
    second = mount(dev)
    assert dev.snapshot() == snap
    assert contents(first) == contents(second) == contents(fs)


def test_mount_rejects_corrupt_superblock(fs):
    dev = fs.device
    dev.store_nt(0, b"\xff" * 8)
    dev.fence()
    with pytest.raises(Unmountable):
        mount(dev)


def test_geometry_regions_cover_device():
    g = Geometry.for_capacity(8 << 20)
    assert g.journal_start == 1
    assert g.owner_start == g.journal_start + g.journal_blocks
    assert g.inode_start == g.owner_start + g.owner_blocks
    assert g.namespace_start == g.inode_start + g.inode_table_blocks
    assert g.data_start == g.namespace_start + g.namespace_blocks
    assert g.data_start + g.data_blocks == g.total_blocks


def test_fsck_reports_conservation_breakage(fs):
    file_with(fs, "a", b"x" * BS)
    fs._used[fs._used.index(0)] = 1  # leak a block behind the allocator's back
    assert any("conservation" in p for p in fs.fsck())


# -- journal atomicity, brute-forced over every crash state ----------------------


def _traced_fs():
    dev = PmemDevice(1 << 20)
    mkfs(dev, Geometry.for_capacity(1 << 20, journal_blocks=16, inode_table_blocks=1, namespace_blocks=1))
    fs = mount(dev)
    file_with(fs, "keep", b"k" * (BS + 10))
    file_with(fs, "old", b"o" * 20)
    dev.fence()
    base = dev.snapshot()
    dev.reset_trace()
    return fs, base


def _outcome(image: bytes):
    fs = mount(PmemDevice.from_image(image))
    assert fs.fsck() == []
    return contents(fs), fs.free_blocks()


OPERATIONS = {
    "create": lambda fs: fs.create("a"),
    "unlink": lambda fs: fs.unlink("keep"),
    "rename": lambda fs: fs.rename("old", "keep"),
    "allocate": lambda fs: fs.allocate(fs.lookup("old"), 0, 3 * BS),
    "truncate": lambda fs: fs.truncate(fs.lookup("keep"), 3),
    "write_direct": lambda fs: fs.write_direct(fs.lookup("old"), 15, b"N" * 6000),
    "relink": lambda fs: fs.relink(fs.lookup("keep"), 0, fs.lookup("old"), 0, BS + 10),
}


@pytest.mark.parametrize("name", sorted(OPERATIONS))
def test_metadata_operation_is_atomic_under_every_crash(name):
    fs, base = _traced_fs()
    pre = _outcome(base)
    OPERATIONS[name](fs)
    trace = fs.device.trace()
    post = _outcome(fs.device.crash_image())
    assert post != pre
    interp = TraceInterpreter(base)
    for plan in enumerate_plans(base, trace, ADVERSARIAL, budget=400):
        interp.advance(trace, plan.point)
        got = _outcome(interp.crash_image(plan.choices))
        # write_direct stores data in place before commit, so only metadata is judged there
        if name == "write_direct" and got[1] == pre[1] and set(got[0]) == set(pre[0]):
            assert len(got[0]["old"]) == len(pre[0]["old"])
            continue
        assert got in (pre, post), (name, plan)


def test_crash_before_commit_of_create_leaves_nothing_behind():
    fs, base = _traced_fs()
    pre_free = _outcome(base)[1]
    fs.create("a")
    trace = fs.device.trace()
    fences = [i for i, e in enumerate(trace) if e.kind.value == "M"]
    # records are fenced first, the commit record second
    interp = TraceInterpreter(base)
    interp.advance(trace, fences[0] + 1)
    state, free = _outcome(interp.crash_image())
    assert "a" not in state and free == pre_free
    interp.advance(trace, fences[1] + 1)
    assert "a" in _outcome(interp.crash_image())[0]


def test_skipped_commit_exposes_a_hybrid_unlink():
    fs, base = _traced_fs()
    pre = _outcome(base)
    with faults.injected(faults.SKIP_JOURNAL_COMMIT):
        fs.unlink("keep")
    post = _outcome(fs.device.crash_image(dict.fromkeys(fs.device.dirty_lines(), 1 << 30)))
    trace = fs.device.trace()
    interp = TraceInterpreter(base)
    bad = 0
    for plan in enumerate_plans(base, trace, ADVERSARIAL, budget=400):
        interp.advance(trace, plan.point)
        fs2 = mount(PmemDevice.from_image(interp.crash_image(plan.choices)))
        if fs2.fsck() or (contents(fs2), fs2.free_blocks()) not in (pre, post):
            bad += 1
    assert bad > 0
