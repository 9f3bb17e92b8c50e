"""Append-only partitioned log on segment files.

On-disk layout: <data_dir>/<stream>/<partition>/<base_offset>.seg plus
groups.json at the root (group -> next offsets, rewritten atomically via
rename). Each record is framed little-endian as

    [u32 length][u32 crc32 of body][body = key_len u16, key, ingest_ts i64 ms, value]

CRC is validated on read; a torn tail (partial write at the moment of a
crash) is truncated at recovery. Appends are fsync'd before returning.
"""

from __future__ import annotations

import errno
import json
import logging
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger("testbed.eventlog")

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_U64 = (1 << 64) - 1

_FRAME_HEADER = struct.Struct("<II")  # length, crc32
_KEY_LEN = struct.Struct("<H")
_INGEST_TS = struct.Struct("<q")

DEFAULT_PARTITIONS = 4
DEFAULT_SEGMENT_MAX_BYTES = 64 * 1024 * 1024


class UnknownStream(KeyError):
    pass


class BadPartition(IndexError):
    pass


class OffsetBeyondEnd(ValueError):
    pass


class IoFailure(OSError):
    pass


class StorageFull(IoFailure):
    pass


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = FNV_OFFSET_BASIS
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def partition_for_key(key: bytes, partition_count: int) -> int:
    """Deterministic key placement: fnv1a64(key) mod partition_count."""
    if partition_count < 1:
        raise ValueError("partition_count must be >= 1")
    return fnv1a64(key) % partition_count


@dataclass(frozen=True)
class LogRecord:
    stream: str
    partition: int
    offset: int
    key: bytes
    value: bytes
    ingest_ts_ms: int


@dataclass(frozen=True)
class StreamConfig:
    name: str
    partition_count: int = DEFAULT_PARTITIONS
    segment_max_bytes: int = DEFAULT_SEGMENT_MAX_BYTES


def _encode_body(key: bytes, ingest_ts_ms: int, value: bytes) -> bytes:
    if len(key) > 65535:
        raise ValueError("key exceeds 65535 bytes")
    return _KEY_LEN.pack(len(key)) + key + _INGEST_TS.pack(ingest_ts_ms) + value


def _frame(body: bytes) -> bytes:
    return _FRAME_HEADER.pack(len(body), zlib.crc32(body)) + body


class _Partition:
    """Single-writer state for one partition directory."""

    def __init__(self, path: Path, segment_max_bytes: int):
        self.path = path
        self.segment_max_bytes = segment_max_bytes
        self.lock = threading.Lock()
        # parallel lists: one entry per record
        self.positions: list[tuple[Path, int]] = []  # (segment path, byte offset)
        self.segments: list[Path] = []
        self.torn_records = 0  # partial frames dropped at recovery
        self.torn_bytes = 0
        self._fh = None
        self._fh_path: Path | None = None
        self._fh_size = 0
        self._recover()

    @property
    def high_watermark(self) -> int:
        return len(self.positions)

    def _recover(self) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        self.segments = sorted(self.path.glob("*.seg"))
        for i, seg in enumerate(self.segments):
            last_good = self._scan_segment(seg)
            size = seg.stat().st_size
            if last_good < size:
                if i == len(self.segments) - 1:
                    log.warning("truncating torn tail of %s at %d (was %d)", seg, last_good, size)
                    self.torn_records += 1
                    self.torn_bytes += size - last_good
                    with open(seg, "r+b") as fh:
                        fh.truncate(last_good)
                        fh.flush()
                        os.fsync(fh.fileno())
                else:
                    raise IoFailure(f"corrupt record mid-log in {seg} at byte {last_good}")

    def _scan_segment(self, seg: Path) -> int:
        """Index all valid records; returns byte offset of the first invalid
        frame (== file size when the segment is fully valid)."""
        pos = 0
        with open(seg, "rb") as fh:
            data = fh.read()
        n = len(data)
        while pos + _FRAME_HEADER.size <= n:
            length, crc = _FRAME_HEADER.unpack_from(data, pos)
            body_start = pos + _FRAME_HEADER.size
            if body_start + length > n:
                break
            body = data[body_start : body_start + length]
            if zlib.crc32(body) != crc:
                break
            self.positions.append((seg, pos))
            pos = body_start + length
        return pos

    def append_many(self, entries: list[tuple[bytes, int, bytes]]) -> list[int]:
        """Write (key, ingest_ts_ms, value) frames, one fsync for the lot.
        Returns assigned offsets."""
        with self.lock:
            offsets = []
            frames = []
            positions = []
            fh = self._writer()
            byte_pos = self._fh_size
            for key, ts_ms, value in entries:
                if byte_pos >= self.segment_max_bytes and frames:
                    # flush what we have, roll, continue in the new segment
                    self._write_frames(fh, frames)
                    frames = []
                if byte_pos >= self.segment_max_bytes:
                    fh = self._roll()
                    byte_pos = 0
                frame = _frame(_encode_body(key, ts_ms, value))
                frames.append(frame)
                positions.append((self._fh_path, byte_pos))
                offsets.append(len(self.positions) + len(offsets))
                byte_pos += len(frame)
            self._write_frames(fh, frames)
            self._fh_size = byte_pos
            # records become visible only after the fsync above
            self.positions.extend(positions)
            return offsets

    def _writer(self):
        if self._fh is None:
            if self.segments:
                self._fh_path = self.segments[-1]
            else:
                self._fh_path = self.path / f"{0:020d}.seg"
                self.segments.append(self._fh_path)
                _fsync_dir(self.path)
            self._fh = open(self._fh_path, "ab")
            self._fh_size = self._fh_path.stat().st_size
        return self._fh

    def _roll(self):
        self._fh.close()
        base = len(self.positions)
        self._fh_path = self.path / f"{base:020d}.seg"
        self.segments.append(self._fh_path)
        self._fh = open(self._fh_path, "ab")
        self._fh_size = 0
        _fsync_dir(self.path)
        return self._fh

    def _write_frames(self, fh, frames: list[bytes]) -> None:
        if not frames:
            return
        try:
            fh.write(b"".join(frames))
            fh.flush()
            os.fsync(fh.fileno())
        except OSError as exc:
            raise _map_os_error(exc) from None

    def read(self, from_offset: int, max_records: int) -> list[tuple[int, bytes]]:
        """Returns (offset, raw body) pairs; caller decodes."""
        hw = self.high_watermark
        if from_offset >= hw or max_records <= 0:
            return []
        end = min(hw, from_offset + max_records)
        out = []
        fh = None
        fh_path = None
        try:
            for off in range(from_offset, end):
                seg, pos = self.positions[off]
                if fh is None or fh_path != seg:
                    if fh is not None:
                        fh.close()
                    fh = open(seg, "rb")
                    fh_path = seg
                fh.seek(pos)
                header = fh.read(_FRAME_HEADER.size)
                length, crc = _FRAME_HEADER.unpack(header)
                body = fh.read(length)
                if zlib.crc32(body) != crc:
                    raise IoFailure(f"crc mismatch at {seg}:{pos}")
                out.append((off, body))
        finally:
            if fh is not None:
                fh.close()
        return out

    def close(self) -> None:
        with self.lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def _decode_body(body: bytes) -> tuple[bytes, int, bytes]:
    (key_len,) = _KEY_LEN.unpack_from(body, 0)
    key = body[2 : 2 + key_len]
    (ts_ms,) = _INGEST_TS.unpack_from(body, 2 + key_len)
    value = body[2 + key_len + 8 :]
    return key, ts_ms, value


def _map_os_error(exc: OSError) -> IoFailure:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    return IoFailure(str(exc))


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class EventLog:
    """Single-node log: streams -> fixed partitions -> segment files."""

    def __init__(
        self,
        data_dir: str | Path,
        default_partitions: int = DEFAULT_PARTITIONS,
        segment_max_bytes: int = DEFAULT_SEGMENT_MAX_BYTES,
    ):
        self.data_dir = Path(data_dir)
        self.default_partitions = default_partitions
        self.segment_max_bytes = segment_max_bytes
        self._lock = threading.Lock()
        self._streams: dict[str, tuple[StreamConfig, list[_Partition]]] = {}
        self._groups: dict[str, dict[str, dict[str, int]]] = {}
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._groups_path = self.data_dir / "groups.json"
        if self._groups_path.exists():
            self._groups = json.loads(self._groups_path.read_text())
        for meta in sorted(self.data_dir.glob("*/meta.json")):
            cfg = StreamConfig(**json.loads(meta.read_text()))
            self._open_stream(cfg)

    # ---------------------------------------------------------------- streams

    def create_stream(
        self,
        name: str,
        partition_count: int | None = None,
        segment_max_bytes: int | None = None,
    ) -> StreamConfig:
        """Create (or reopen) a stream. Partition count is fixed for life."""
        with self._lock:
            if name in self._streams:
                cfg = self._streams[name][0]
                if partition_count is not None and partition_count != cfg.partition_count:
                    raise ValueError(f"stream {name!r} exists with {cfg.partition_count} partitions")
                return cfg
            cfg = StreamConfig(
                name=name,
                partition_count=partition_count or self.default_partitions,
                segment_max_bytes=segment_max_bytes or self.segment_max_bytes,
            )
            stream_dir = self.data_dir / name
            stream_dir.mkdir(parents=True, exist_ok=True)
            meta = stream_dir / "meta.json"
            if not meta.exists():
                tmp = meta.with_suffix(".tmp")
                tmp.write_text(json.dumps(cfg.__dict__))
                os.replace(tmp, meta)
                _fsync_dir(stream_dir)
            return self._open_stream(cfg)

    def _open_stream(self, cfg: StreamConfig) -> StreamConfig:
        parts = [
            _Partition(self.data_dir / cfg.name / str(p), cfg.segment_max_bytes)
            for p in range(cfg.partition_count)
        ]
        self._streams[cfg.name] = (cfg, parts)
        return cfg

    def streams(self) -> list[str]:
        return sorted(self._streams)

    def stream_config(self, stream: str) -> StreamConfig:
        return self._stream(stream)[0]

    def _stream(self, name: str) -> tuple[StreamConfig, list[_Partition]]:
        try:
            return self._streams[name]
        except KeyError:
            raise UnknownStream(name) from None

    # ---------------------------------------------------------------- append / read

    def append(self, stream: str, key: bytes, value: bytes, ingest_ts_ms: int | None = None) -> tuple[int, int]:
        """Durably append one record; returns (partition, offset)."""
        return self.append_batch(stream, [(key, value)], ingest_ts_ms)[0]

    def append_batch(
        self, stream: str, entries: list[tuple[bytes, bytes]], ingest_ts_ms: int | None = None
    ) -> list[tuple[int, int]]:
        """Group-commit: one fsync per touched partition for the whole batch.
        Returns (partition, offset) per entry, in input order."""
        cfg, parts = self._stream(stream)
        ts_ms = int(time.time() * 1000) if ingest_ts_ms is None else ingest_ts_ms
        by_partition: dict[int, list[int]] = {}
        for i, (key, _value) in enumerate(entries):
            by_partition.setdefault(partition_for_key(key, cfg.partition_count), []).append(i)
        results: list[tuple[int, int]] = [(-1, -1)] * len(entries)
        for p, indexes in by_partition.items():
            offsets = parts[p].append_many([(entries[i][0], ts_ms, entries[i][1]) for i in indexes])
            for i, off in zip(indexes, offsets):
                results[i] = (p, off)
        return results

    def read(self, stream: str, partition: int, from_offset: int, max_records: int = 1024) -> list[LogRecord]:
        cfg, parts = self._stream(stream)
        if not 0 <= partition < cfg.partition_count:
            raise BadPartition(f"partition {partition} out of range for {stream!r}")
        out = []
        for off, body in parts[partition].read(from_offset, max_records):
            key, ts_ms, value = _decode_body(body)
            out.append(LogRecord(stream, partition, off, key, value, ts_ms))
        return out

    def high_watermark(self, stream: str, partition: int) -> int:
        cfg, parts = self._stream(stream)
        if not 0 <= partition < cfg.partition_count:
            raise BadPartition(f"partition {partition} out of range for {stream!r}")
        return parts[partition].high_watermark

    def recovery_stats(self) -> dict[str, tuple[int, int]]:
        """Per 'stream/partition': (torn records dropped, torn bytes)."""
        out = {}
        for name, (_cfg, parts) in self._streams.items():
            for i, p in enumerate(parts):
                out[f"{name}/{i}"] = (p.torn_records, p.torn_bytes)
        return out

    # ---------------------------------------------------------------- consumer groups

    def commit(self, group: str, stream: str, partition: int, next_offset: int) -> None:
        if next_offset > self.high_watermark(stream, partition):
            raise OffsetBeyondEnd(f"{next_offset} beyond high-watermark")
        with self._lock:
            self._groups.setdefault(group, {}).setdefault(stream, {})[str(partition)] = next_offset
            self._save_groups()

    def committed_offset(self, group: str, stream: str, partition: int) -> int:
        with self._lock:
            return self._groups.get(group, {}).get(stream, {}).get(str(partition), 0)

    def reset(self, group: str, stream: str) -> None:
        """Rewind the group to offset 0 on every partition (replay)."""
        with self._lock:
            self._groups.get(group, {}).pop(stream, None)
            self._save_groups()

    def _save_groups(self) -> None:
        tmp = self._groups_path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(self._groups, fh, sort_keys=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._groups_path)

    def close(self) -> None:
        for _cfg, parts in self._streams.values():
            for p in parts:
                p.close()
