"""The materialized store: idempotent keyed ingest over log records, the
aggregation queries behind the dashboard, and snapshot persistence.

The log is the source of truth; the store is an in-memory index that can
always be rebuilt from offset 0. Re-ingesting a record for an existing
logical key is a no-op, which turns at-least-once delivery into
exactly-once materialized state.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path

from testbed.eventlog.log import EventLog, LogRecord
from testbed.model import (
    DistributionType,
    LightingEvent,
    LightingEventKind,
    TrafficReading,
    decode_lighting,
    decode_traffic,
    encode_lighting,
    encode_traffic,
)
from testbed.store.query import (
    EnergyTotals,
    GroupBy,
    InvalidSpec,
    OnInterval,
    QuerySpec,
    SeriesGroup,
    SeriesResult,
    UnknownSensor,
    bucket_ts,
    buckets_for_date,
    dates_in,
    in_window,
    minutes_in_bucket,
    normalize_to_epoch_day,
    window_buckets,
)

log = logging.getLogger("testbed.store")

SNAPSHOT_VERSION = 1
CONSUMER_GROUP = "store"
DEFAULT_STREAMS = ("traffic", "lighting")
DEFAULT_POWER_W = 40.0

UTC = timezone.utc


@dataclass(frozen=True)
class TrafficRow:
    reading: TrafficReading
    partition: int
    offset: int


@dataclass(frozen=True)
class LightingRow:
    event: LightingEvent
    partition: int
    offset: int


class Store:
    """Single ingest writer, many query readers (guarded by one lock;
    queries see a state no older than the last completed ingest batch)."""

    def __init__(self, power_w: float = DEFAULT_POWER_W):
        self.power_w = power_w
        self._lock = threading.RLock()
        # sensor -> ts -> row
        self._traffic: dict[str, dict[datetime, TrafficRow]] = {}
        # sensor -> (ts, kind) -> row
        self._lighting: dict[str, dict[tuple[datetime, str], LightingRow]] = {}
        self.offsets: dict[tuple[str, int], int] = {}  # (stream, partition) -> next
        self.dead_letters: dict[str, int] = {}
        # per sensor, recomputed at each pairing so repeated queries don't inflate it
        self._alt_violations: dict[str, int] = {}

    @property
    def alternation_violations(self) -> int:
        return sum(self._alt_violations.values())

    # ---------------------------------------------------------------- ingest

    def ingest(self, record: LogRecord) -> str:
        """Returns "inserted", "duplicate" or "dead_letter"."""
        with self._lock:
            if record.stream == "traffic":
                try:
                    reading = decode_traffic(record.value)
                except ValueError:
                    self.dead_letters[record.stream] = self.dead_letters.get(record.stream, 0) + 1
                    return "dead_letter"
                rows = self._traffic.setdefault(reading.sensor_id, {})
                if reading.ts in rows:
                    return "duplicate"
                rows[reading.ts] = TrafficRow(reading, record.partition, record.offset)
                return "inserted"
            if record.stream == "lighting":
                try:
                    event = decode_lighting(record.value)
                except ValueError:
                    self.dead_letters[record.stream] = self.dead_letters.get(record.stream, 0) + 1
                    return "dead_letter"
                rows = self._lighting.setdefault(event.sensor_id, {})
                key = (event.ts, event.event.value)
                if key in rows:
                    return "duplicate"
                rows[key] = LightingRow(event, record.partition, record.offset)
                return "inserted"
            raise ValueError(f"store does not consume stream {record.stream!r}")

    def consume(
        self,
        eventlog: EventLog,
        streams: tuple[str, ...] = DEFAULT_STREAMS,
        group: str = CONSUMER_GROUP,
        batch_size: int = 4096,
    ) -> int:
        """Catch up to the log's high-watermarks; commits per batch.
        Returns the number of records processed."""
        processed = 0
        for stream in streams:
            if stream not in eventlog.streams():
                continue
            cfg = eventlog.stream_config(stream)
            for partition in range(cfg.partition_count):
                while True:
                    start = self.offsets.get((stream, partition), 0)
                    records = eventlog.read(stream, partition, start, batch_size)
                    if not records:
                        break
                    for record in records:
                        self.ingest(record)
                    processed += len(records)
                    next_offset = records[-1].offset + 1
                    self.offsets[(stream, partition)] = next_offset
                    eventlog.commit(group, stream, partition, next_offset)
        return processed

    def rebuild_from_log(
        self,
        eventlog: EventLog,
        streams: tuple[str, ...] = DEFAULT_STREAMS,
        group: str = CONSUMER_GROUP,
    ) -> int:
        """Drop all rows, rewind the consumer group, re-consume to the
        high-watermark. The result is query-identical to incremental
        ingest of the same log."""
        with self._lock:
            self._traffic.clear()
            self._lighting.clear()
            self.offsets.clear()
            self.dead_letters.clear()
            self._alt_violations.clear()
            for stream in streams:
                if stream in eventlog.streams():
                    eventlog.reset(group, stream)
        return self.consume(eventlog, streams, group)

    # ---------------------------------------------------------------- metadata

    def known_sensors(self, use_case: str) -> list[str]:
        with self._lock:
            table = self._traffic if use_case == "traffic" else self._lighting
            return sorted(table.keys())

    def date_bounds(self, use_case: str) -> tuple[date, date] | None:
        with self._lock:
            if use_case == "traffic":
                stamps = [ts for rows in self._traffic.values() for ts in rows]
            else:
                stamps = [key[0] for rows in self._lighting.values() for key in rows]
            if not stamps:
                return None
            return min(stamps).date(), max(stamps).date()

    def row_counts(self) -> dict[str, int]:
        with self._lock:
            return {
                "traffic": sum(len(r) for r in self._traffic.values()),
                "lighting": sum(len(r) for r in self._lighting.values()),
            }

    # ---------------------------------------------------------------- traffic query

    def query_traffic(self, spec: QuerySpec) -> SeriesResult:
        if spec.use_case != "traffic":
            raise InvalidSpec("use_case", "query_traffic requires use_case=traffic")
        spec.validate()
        with self._lock:
            spec = spec.resolved(self.known_sensors("traffic"))
            acc: dict[str, dict[datetime, int]] = {}
            for sensor in spec.sensors:
                for ts, row in self._traffic.get(sensor, {}).items():
                    if not in_window(spec, ts):
                        continue
                    b = bucket_ts(spec, ts)
                    if spec.group_by == GroupBy.time_bucket:
                        for cls in spec.classes:
                            acc.setdefault(cls.value, {}).setdefault(b, 0)
                            acc[cls.value][b] += row.reading.count(cls)
                    elif spec.group_by == GroupBy.sensor:
                        value = sum(row.reading.count(c) for c in spec.classes)
                        acc.setdefault(sensor, {}).setdefault(b, 0)
                        acc[sensor][b] += value
                    else:  # one series per date, buckets on a common day
                        label = ts.date().isoformat()
                        nb = normalize_to_epoch_day(b)
                        value = sum(row.reading.count(c) for c in spec.classes)
                        acc.setdefault(label, {}).setdefault(nb, 0)
                        acc[label][nb] += value
        return self._fill_series(spec, acc)

    def _fill_series(self, spec: QuerySpec, acc: dict[str, dict[datetime, float]]) -> SeriesResult:
        labels_buckets: list[tuple[str, list[datetime]]] = []
        if spec.group_by == GroupBy.date:
            template = [normalize_to_epoch_day(b) for b in buckets_for_date(spec, spec.date_from)]
            for d in dates_in(spec):
                labels_buckets.append((d.isoformat(), template))
        else:
            buckets = window_buckets(spec)
            if spec.group_by == GroupBy.time_bucket:
                if spec.use_case == "traffic":
                    labels = [c.value for c in spec.classes]
                else:
                    labels = ["total"]
            else:
                labels = list(spec.sensors)
            labels_buckets = [(label, buckets) for label in labels]

        divisor = minutes_in_bucket(spec) if spec.distribution == DistributionType.average_per_minute else None
        groups = []
        for label, buckets in labels_buckets:
            series = acc.get(label, {})
            points = []
            for b in buckets:
                raw = series.get(b, 0)
                if spec.use_case == "traffic" and divisor is not None:
                    value = raw / divisor
                else:
                    value = float(raw)
                points.append((b, value))
            groups.append(SeriesGroup(label=label, points=tuple(points)))
        return SeriesResult(groups=tuple(groups))

    # ---------------------------------------------------------------- lighting

    def on_intervals(self, sensor: str, window_start: datetime, window_end: datetime) -> list[OnInterval]:
        """Pair alternating light_on/light_off rows; an unmatched trailing
        light_on is treated as still-on and clipped at the window end.
        Alternation violations are counted and the offending row skipped."""
        with self._lock:
            rows = self._lighting.get(sensor, {})
            switches = sorted(
                (ts, kind) for (ts, kind) in rows
                if kind in (LightingEventKind.light_on.value, LightingEventKind.light_off.value)
            )
            violations = 0
            raw: list[tuple[datetime, datetime]] = []
            open_ts: datetime | None = None
            for ts, kind in switches:
                if kind == LightingEventKind.light_on.value:
                    if open_ts is None:
                        open_ts = ts
                    else:
                        violations += 1
                else:
                    if open_ts is None:
                        violations += 1
                    elif ts > open_ts:
                        raw.append((open_ts, ts))
                        open_ts = None
                    else:
                        violations += 1
                        open_ts = None
            if open_ts is not None:
                raw.append((open_ts, window_end))
            self._alt_violations[sensor] = violations
        out = []
        for start, end in raw:
            start = max(start, window_start)
            end = min(end, window_end)
            if end > start:
                out.append(OnInterval(sensor_id=sensor, start_ts=start, end_ts=end))
        return out

    def query_energy(self, spec: QuerySpec) -> SeriesResult:
        """Per bucket: power_w x (on-interval overlap seconds)/3600, with
        grouping semantics identical to query_traffic."""
        if spec.use_case != "lighting":
            raise InvalidSpec("use_case", "query_energy requires use_case=lighting")
        spec.validate()
        with self._lock:
            spec = spec.resolved(self.known_sensors("lighting"))
            window_start = datetime.combine(spec.date_from, time(0), tzinfo=UTC)
            window_end = datetime.combine(spec.date_to + timedelta(days=1), time(0), tzinfo=UTC)
            seconds_acc: dict[str, dict[datetime, int]] = {}
            for sensor in spec.sensors:
                intervals = self.on_intervals(sensor, window_start, window_end)
                for seg_start, _seg_end, seconds in _per_minute_atoms(intervals):
                    if not in_window(spec, seg_start):
                        continue
                    b = bucket_ts(spec, seg_start)
                    if spec.group_by == GroupBy.date:
                        label = seg_start.date().isoformat()
                        b = normalize_to_epoch_day(b)
                    elif spec.group_by == GroupBy.sensor:
                        label = sensor
                    else:
                        label = "total"
                    seconds_acc.setdefault(label, {}).setdefault(b, 0)
                    seconds_acc[label][b] += seconds
            # integer seconds first, one float conversion per bucket
            acc = {
                label: {b: self.power_w * s / 3600.0 for b, s in buckets.items()}
                for label, buckets in seconds_acc.items()
            }
        return self._fill_series(spec, acc)

    def query_energy_total(self, sensor: str, on_date: date, hour_from: int = 0, hour_to: int = 23) -> EnergyTotals:
        if not 0 <= hour_from <= 23:
            raise InvalidSpec("hour_from", "hour_from must be 0..23")
        if not 0 <= hour_to <= 23:
            raise InvalidSpec("hour_to", "hour_to must be 0..23")
        if hour_from > hour_to:
            raise InvalidSpec("hour_from", "hour_from must not exceed hour_to")
        with self._lock:
            if sensor not in self._lighting:
                raise UnknownSensor(sensor)
            day_start = datetime.combine(on_date, time(0), tzinfo=UTC)
            day_end = day_start + timedelta(days=1)
            intervals = self.on_intervals(sensor, day_start, day_end)
        hourly_seconds = [0] * 24
        for hour in range(hour_from, hour_to + 1):
            span_start = day_start + timedelta(hours=hour)
            span_end = span_start + timedelta(hours=1)
            hourly_seconds[hour] = _overlap_seconds(intervals, span_start, span_end)
        on_seconds = sum(hourly_seconds)
        window_seconds = 3600 * (hour_to - hour_from + 1)
        return EnergyTotals(
            sensor_id=sensor,
            date=on_date,
            hour_from=hour_from,
            hour_to=hour_to,
            window_seconds=window_seconds,
            on_seconds=on_seconds,
            off_seconds=window_seconds - on_seconds,
            energy_wh=self.power_w * on_seconds / 3600.0,
            hourly_wh=tuple(self.power_w * s / 3600.0 for s in hourly_seconds),
        )

    # ---------------------------------------------------------------- snapshot

    def save_snapshot(self, path: str | Path) -> None:
        """Offset-stamped snapshot, written atomically (temp + rename)."""
        path = Path(path)
        with self._lock:
            doc = {
                "version": SNAPSHOT_VERSION,
                "power_w": self.power_w,
                "offsets": {f"{s}/{p}": n for (s, p), n in self.offsets.items()},
                "dead_letters": dict(self.dead_letters),
                "alternation_violations": self.alternation_violations,
                "traffic": [
                    {
                        "payload": encode_traffic(row.reading).decode(),
                        "partition": row.partition,
                        "offset": row.offset,
                    }
                    for rows in self._traffic.values()
                    for row in rows.values()
                ],
                "lighting": [
                    {
                        "payload": encode_lighting(row.event).decode(),
                        "partition": row.partition,
                        "offset": row.offset,
                    }
                    for rows in self._lighting.values()
                    for row in rows.values()
                ],
            }
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def load_snapshot(self, path: str | Path) -> bool:
        """Restore rows and offsets; returns False when no snapshot exists."""
        path = Path(path)
        if not path.exists():
            return False
        doc = json.loads(path.read_text())
        if doc.get("version") != SNAPSHOT_VERSION:
            log.warning("ignoring snapshot with version %s", doc.get("version"))
            return False
        with self._lock:
            self._traffic.clear()
            self._lighting.clear()
            self.offsets = {}
            for key, n in doc["offsets"].items():
                stream, _, part = key.rpartition("/")
                self.offsets[(stream, int(part))] = n
            self.dead_letters = dict(doc["dead_letters"])
            self._alt_violations.clear()  # derived from rows, recomputed on pairing
            for entry in doc["traffic"]:
                reading = decode_traffic(entry["payload"].encode())
                self._traffic.setdefault(reading.sensor_id, {})[reading.ts] = TrafficRow(
                    reading, entry["partition"], entry["offset"]
                )
            for entry in doc["lighting"]:
                event = decode_lighting(entry["payload"].encode())
                self._lighting.setdefault(event.sensor_id, {})[(event.ts, event.event.value)] = LightingRow(
                    event, entry["partition"], entry["offset"]
                )
        return True


def _overlap_seconds(intervals: list[OnInterval], span_start: datetime, span_end: datetime) -> int:
    total = 0
    for iv in intervals:
        lo = max(iv.start_ts, span_start)
        hi = min(iv.end_ts, span_end)
        if hi > lo:
            total += int((hi - lo).total_seconds())
    return total


def _per_minute_atoms(intervals: list[OnInterval]):
    """Break intervals into per-minute (start, end, seconds) atoms so bucket
    assignment is a single floor per atom."""
    for iv in intervals:
        cursor = iv.start_ts
        while cursor < iv.end_ts:
            minute_end = cursor.replace(second=0, microsecond=0) + timedelta(minutes=1)
            seg_end = min(minute_end, iv.end_ts)
            yield cursor, seg_end, int((seg_end - cursor).total_seconds())
            cursor = seg_end
