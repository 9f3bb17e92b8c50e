import os
import random
import signal
import subprocess
import sys
import textwrap
import time

import pytest

from testbed.eventlog import (
    BadPartition,
    EventLog,
    OffsetBeyondEnd,
    UnknownStream,
    fnv1a64,
    partition_for_key,
)

FNV_BASIS = 14695981039346656037


def test_fnv1a64_vectors():
    assert fnv1a64(b"") == FNV_BASIS
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_partition_for_key_empty_key():
    assert partition_for_key(b"", 1) == 0
    assert partition_for_key(b"", 4) == FNV_BASIS % 4


def test_partition_for_key_deterministic():
    assert partition_for_key(b"S01", 4) == partition_for_key(b"S01", 4)
    with pytest.raises(ValueError):
        partition_for_key(b"x", 0)


@pytest.fixture
def elog(tmp_path):
    log = EventLog(tmp_path / "data")
    yield log
    log.close()


def test_first_append_offset_zero(elog):
    elog.create_stream("s")
    partition, offset = elog.append("s", b"k", b"v")
    assert offset == 0
    assert partition == partition_for_key(b"k", 4)


def test_same_key_same_partition_contiguous(elog):
    elog.create_stream("s")
    p1, o1 = elog.append("s", b"S01", b"a")
    p2, o2 = elog.append("s", b"S01", b"b")
    assert p1 == p2
    assert (o1, o2) == (0, 1)


def test_unknown_stream(elog):
    with pytest.raises(UnknownStream):
        elog.append("nope", b"k", b"v")
    with pytest.raises(UnknownStream):
        elog.read("nope", 0, 0)


def test_bad_partition(elog):
    elog.create_stream("s", partition_count=2)
    with pytest.raises(BadPartition):
        elog.read("s", 2, 0)


def test_thousand_appends_recount(elog):
    elog.create_stream("s", partition_count=4)
    rng = random.Random(1)
    keys = [f"k{rng.randrange(50)}".encode() for _ in range(1000)]
    placed = [elog.append("s", key, bytes([i % 256])) for i, key in enumerate(keys)]
    # brute-force recount straight from the log
    per_partition = []
    for p in range(4):
        records = elog.read("s", p, 0, 10_000)
        assert [r.offset for r in records] == list(range(len(records)))
        for r in records:
            assert partition_for_key(r.key, 4) == p
        per_partition.append(len(records))
    assert sum(per_partition) == 1000
    for (p, off), key in zip(placed, keys):
        assert p == partition_for_key(key, 4)


def test_read_past_high_watermark_empty(elog):
    elog.create_stream("s")
    elog.append("s", b"k", b"v")
    p = partition_for_key(b"k", 4)
    assert elog.read("s", p, 1, 100) == []
    assert elog.read("s", p, 99, 100) == []


def test_read_returns_appends_in_order(elog):
    elog.create_stream("s", partition_count=1)
    values = [f"v{i}".encode() for i in range(20)]
    for v in values:
        elog.append("s", b"k", v)
    records = elog.read("s", 0, 0, 1000)
    assert [r.value for r in records] == values
    assert [r.key for r in records] == [b"k"] * 20


def test_interleaved_append_read_never_gaps(elog):
    elog.create_stream("s", partition_count=2)
    rng = random.Random(7)
    model = {0: [], 1: []}
    for i in range(400):
        if rng.random() < 0.6:
            key = f"k{rng.randrange(8)}".encode()
            value = f"v{i}".encode()
            p, off = elog.append("s", key, value)
            assert off == len(model[p])
            model[p].append(value)
        else:
            p = rng.randrange(2)
            start = rng.randrange(len(model[p]) + 1)
            n = rng.randrange(1, 50)
            got = [r.value for r in elog.read("s", p, start, n)]
            assert got == model[p][start : start + n]


def test_batch_append_matches_single_appends(tmp_path):
    log1 = EventLog(tmp_path / "one")
    log2 = EventLog(tmp_path / "two")
    log1.create_stream("s")
    log2.create_stream("s")
    entries = [(f"k{i % 5}".encode(), f"v{i}".encode()) for i in range(100)]
    singles = [log1.append("s", k, v, ingest_ts_ms=123) for k, v in entries]
    batched = log2.append_batch("s", entries, ingest_ts_ms=123)
    assert singles == batched
    for p in range(4):
        a = [(r.key, r.value, r.ingest_ts_ms) for r in log1.read("s", p, 0, 1000)]
        b = [(r.key, r.value, r.ingest_ts_ms) for r in log2.read("s", p, 0, 1000)]
        assert a == b
    log1.close()
    log2.close()


# ---------------------------------------------------------------- consumer groups


def test_fresh_group_reads_from_zero(elog):
    elog.create_stream("s")
    assert elog.committed_offset("g", "s", 0) == 0


def test_commit_then_resume(elog):
    elog.create_stream("s", partition_count=1)
    for i in range(8):
        elog.append("s", b"k", str(i).encode())
    elog.commit("g", "s", 0, 5)
    resume = elog.committed_offset("g", "s", 0)
    records = elog.read("s", 0, resume, 100)
    assert [r.value for r in records] == [b"5", b"6", b"7"]


def test_commit_beyond_end_rejected(elog):
    elog.create_stream("s", partition_count=1)
    elog.append("s", b"k", b"v")
    with pytest.raises(OffsetBeyondEnd):
        elog.commit("g", "s", 0, 2)


def test_commit_survives_reopen(tmp_path):
    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=1)
    log.append("s", b"k", b"v")
    log.commit("g", "s", 0, 1)
    log.close()
    log2 = EventLog(tmp_path / "d")
    assert log2.committed_offset("g", "s", 0) == 1
    log2.close()


def test_crash_between_append_and_commit_rereads(tmp_path):
    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=1)
    log.append("s", b"k", b"first")
    log.commit("g", "s", 0, 1)
    log.append("s", b"k", b"second")
    log.close()  # "crash" before committing the second record
    log2 = EventLog(tmp_path / "d")
    resume = log2.committed_offset("g", "s", 0)
    assert [r.value for r in log2.read("s", 0, resume, 10)] == [b"second"]
    log2.close()


def test_reset_is_idempotent_and_replays_identically(elog):
    elog.create_stream("s", partition_count=2)
    for i in range(50):
        elog.append("s", f"k{i % 6}".encode(), str(i).encode())
    first = {p: [(r.offset, r.key, r.value) for r in elog.read("s", p, 0, 100)] for p in range(2)}
    elog.commit("g", "s", 0, elog.high_watermark("s", 0))
    elog.reset("g", "s")
    elog.reset("g", "s")
    assert elog.committed_offset("g", "s", 0) == 0
    replay = {p: [(r.offset, r.key, r.value) for r in elog.read("s", p, 0, 100)] for p in range(2)}
    assert replay == first


# ---------------------------------------------------------------- durability


def test_reopen_rereads_byte_identical(tmp_path):
    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=2)
    entries = [(f"k{i % 3}".encode(), os.urandom(20)) for i in range(40)]
    log.append_batch("s", entries, ingest_ts_ms=5)
    before = {p: [(r.key, r.value, r.ingest_ts_ms) for r in log.read("s", p, 0, 100)] for p in range(2)}
    log.close()
    log2 = EventLog(tmp_path / "d")
    after = {p: [(r.key, r.value, r.ingest_ts_ms) for r in log2.read("s", p, 0, 100)] for p in range(2)}
    assert after == before
    log2.close()


def test_torn_tail_truncated_on_recovery(tmp_path):
    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=1)
    for i in range(5):
        log.append("s", b"k", f"v{i}".encode())
    log.close()
    seg = next((tmp_path / "d" / "s" / "0").glob("*.seg"))
    with open(seg, "ab") as fh:
        fh.write(b"\x40\x00\x00\x00\x99\x99")  # header promising 64 bytes, then nothing
    log2 = EventLog(tmp_path / "d")
    records = log2.read("s", 0, 0, 100)
    assert [r.value for r in records] == [b"v0", b"v1", b"v2", b"v3", b"v4"]
    assert log2.high_watermark("s", 0) == 5
    log2.close()
    # recovery rewrote the file: reopening again must be clean
    log3 = EventLog(tmp_path / "d")
    assert log3.high_watermark("s", 0) == 5
    log3.close()


def test_corrupt_crc_tail_truncated(tmp_path):
    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=1)
    for i in range(3):
        log.append("s", b"k", f"v{i}".encode())
    log.close()
    seg = next((tmp_path / "d" / "s" / "0").glob("*.seg"))
    data = seg.read_bytes()
    seg.write_bytes(data[:-1] + bytes([data[-1] ^ 0xFF]))  # flip last byte
    log2 = EventLog(tmp_path / "d")
    assert log2.high_watermark("s", 0) == 2
    log2.close()


def test_segment_rolling_and_cross_segment_read(tmp_path):
    log = EventLog(tmp_path / "d", segment_max_bytes=256)
    log.create_stream("s", partition_count=1)
    values = [f"value-{i:04d}".encode() * 3 for i in range(30)]
    for v in values:
        log.append("s", b"k", v)
    seg_dir = tmp_path / "d" / "s" / "0"
    assert len(list(seg_dir.glob("*.seg"))) > 1
    assert [r.value for r in log.read("s", 0, 0, 1000)] == values
    log.close()
    log2 = EventLog(tmp_path / "d", segment_max_bytes=256)
    assert [r.value for r in log2.read("s", 0, 0, 1000)] == values
    log2.close()


def test_kill9_during_appends_recovers_contiguous_prefix(tmp_path):
    """SIGKILL a writer subprocess mid-append; recovery must yield a clean
    contiguous prefix (at most one torn record dropped)."""
    script = textwrap.dedent(
        """
        import sys
        from testbed.eventlog import EventLog
        log = EventLog(sys.argv[1])
        log.create_stream("s", partition_count=1)
        i = 0
        while True:
            log.append("s", b"k", f"v{i:08d}".encode())
            i += 1
            print(i, flush=True)
        """
    )
    proc = subprocess.Popen(
        [sys.executable, "-c", script, str(tmp_path / "d")],
        stdout=subprocess.PIPE,
    )
    acked = 0
    deadline = time.monotonic() + 20
    while acked < 200 and time.monotonic() < deadline:
        line = proc.stdout.readline()
        if not line:
            break
        acked = int(line)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    assert acked >= 200, "writer subprocess made no progress"
    log = EventLog(tmp_path / "d")
    records = log.read("s", 0, 0, 10_000_000)
    # every append that returned (was printed) must have survived
    assert len(records) >= acked
    assert [r.offset for r in records] == list(range(len(records)))
    assert [r.value for r in records] == [f"v{i:08d}".encode() for i in range(len(records))]
    log.close()


def test_segment_byte_framing_is_bit_exact(tmp_path):
    """[u32 length][u32 crc32 of body][key_len u16][key][ingest_ts i64 ms][value],
    all little-endian: assert against independently hand-packed bytes."""
    import struct
    import zlib

    log = EventLog(tmp_path / "d")
    log.create_stream("s", partition_count=1)
    log.append("s", b"S01", b"hello", ingest_ts_ms=1488355200000)
    log.append("s", b"", b"\x00\xff", ingest_ts_ms=-1)
    log.close()

    def frame(key, ts_ms, value):
        body = struct.pack("<H", len(key)) + key + struct.pack("<q", ts_ms) + value
        return struct.pack("<II", len(body), zlib.crc32(body)) + body

    seg = next((tmp_path / "d" / "s" / "0").glob("*.seg"))
    expected = frame(b"S01", 1488355200000, b"hello") + frame(b"", -1, b"\x00\xff")
    assert seg.read_bytes() == expected
    assert seg.name == f"{0:020d}.seg"
