"""Brute-force reference implementations of the store queries.

Everything here recomputes results straight from raw readings/events with
deliberately plain code and its own bucketing arithmetic. The query engine
never imports this module; verify and the test suite compare the two.
"""

from __future__ import annotations

from datetime import date, datetime, time, timedelta, timezone

from testbed.model import DistributionType, LightingEvent, LightingEventKind, TrafficReading
from testbed.store.query import Bucket, GroupBy, QuerySpec

UTC = timezone.utc


def _bucket_key(spec: QuerySpec, ts: datetime) -> datetime:
    text = ts.strftime("%Y-%m-%d %H:%M")
    if spec.bucket == Bucket.hour:
        text = text[:13] + ":00"
    elif spec.bucket == Bucket.day:
        text = text[:10] + " 00:00"
    return datetime.strptime(text, "%Y-%m-%d %H:%M").replace(tzinfo=UTC)


def _row_selected(spec: QuerySpec, ts: datetime) -> bool:
    if not (spec.date_from <= ts.date() <= spec.date_to):
        return False
    return spec.hour_from <= ts.hour <= spec.hour_to


def _all_buckets_of_day(spec: QuerySpec, d: date) -> list[datetime]:
    hours = range(spec.hour_from, spec.hour_to + 1)
    base = datetime(d.year, d.month, d.day, tzinfo=UTC)
    if spec.bucket == Bucket.day:
        return [base]
    if spec.bucket == Bucket.hour:
        return [base.replace(hour=h) for h in hours]
    return [base.replace(hour=h, minute=m) for h in hours for m in range(60)]


def _window_dates(spec: QuerySpec) -> list[date]:
    out = []
    d = spec.date_from
    while d <= spec.date_to:
        out.append(d)
        d += timedelta(days=1)
    return out


def _avg_divisor(spec: QuerySpec) -> int:
    if spec.bucket == Bucket.minute:
        return 1
    if spec.bucket == Bucket.hour:
        return 60
    return (spec.hour_to - spec.hour_from + 1) * 60


def oracle_query_traffic(readings: list[TrafficReading], spec: QuerySpec) -> list[tuple[str, list[tuple[datetime, float]]]]:
    """Expected SeriesResult content as (label, [(bucket_ts, value)]) lists.
    ``spec`` must already be resolved (sensors and classes filled)."""
    sums: dict[tuple[str, datetime], int] = {}
    for r in readings:
        if r.sensor_id not in spec.sensors or not _row_selected(spec, r.ts):
            continue
        b = _bucket_key(spec, r.ts)
        if spec.group_by == GroupBy.time_bucket:
            for cls in spec.classes:
                k = (cls.value, b)
                sums[k] = sums.get(k, 0) + getattr(r, cls.value)
        elif spec.group_by == GroupBy.sensor:
            k = (r.sensor_id, b)
            sums[k] = sums.get(k, 0) + sum(getattr(r, c.value) for c in spec.classes)
        else:
            moved = b.replace(year=1970, month=1, day=1)
            k = (r.ts.strftime("%Y-%m-%d"), moved)
            sums[k] = sums.get(k, 0) + sum(getattr(r, c.value) for c in spec.classes)

    if spec.group_by == GroupBy.time_bucket:
        labels = [c.value for c in spec.classes]
        buckets = [b for d in _window_dates(spec) for b in _all_buckets_of_day(spec, d)]
        label_buckets = [(lab, buckets) for lab in labels]
    elif spec.group_by == GroupBy.sensor:
        buckets = [b for d in _window_dates(spec) for b in _all_buckets_of_day(spec, d)]
        label_buckets = [(s, buckets) for s in spec.sensors]
    else:
        norm = [b.replace(year=1970, month=1, day=1) for b in _all_buckets_of_day(spec, spec.date_from)]
        label_buckets = [(d.strftime("%Y-%m-%d"), norm) for d in _window_dates(spec)]

    divide = spec.distribution == DistributionType.average_per_minute
    out = []
    for label, buckets in label_buckets:
        points = []
        for b in buckets:
            v = sums.get((label, b), 0)
            points.append((b, v / _avg_divisor(spec) if divide else float(v)))
        out.append((label, points))
    return out


def oracle_on_intervals(
    events: list[LightingEvent], sensor: str, window_start: datetime, window_end: datetime
) -> list[tuple[datetime, datetime]]:
    """Pair on/off independently of the store's walk."""
    switches = sorted(
        (e.ts, e.event) for e in events
        if e.sensor_id == sensor and e.event != LightingEventKind.motion
    )
    pairs: list[tuple[datetime, datetime]] = []
    current_on: datetime | None = None
    for ts, kind in switches:
        if kind == LightingEventKind.light_on and current_on is None:
            current_on = ts
        elif kind == LightingEventKind.light_off and current_on is not None:
            if ts > current_on:
                pairs.append((current_on, ts))
            current_on = None
    if current_on is not None:
        pairs.append((current_on, window_end))
    clipped = []
    for a, b in pairs:
        a2, b2 = max(a, window_start), min(b, window_end)
        if b2 > a2:
            clipped.append((a2, b2))
    return clipped


def _minute_on_seconds(intervals: list[tuple[datetime, datetime]], minute: datetime) -> int:
    lo = minute
    hi = minute + timedelta(minutes=1)
    total = 0
    for a, b in intervals:
        s = max(a, lo)
        e = min(b, hi)
        if e > s:
            total += int((e - s).total_seconds())
    return total


def oracle_query_energy(
    events: list[LightingEvent], spec: QuerySpec, power_w: float
) -> list[tuple[str, list[tuple[datetime, float]]]]:
    """Per-bucket Wh recomputed by scanning every minute of the window."""
    window_start = datetime.combine(spec.date_from, time(0), tzinfo=UTC)
    window_end = datetime.combine(spec.date_to, time(0), tzinfo=UTC) + timedelta(days=1)
    per_sensor = {s: oracle_on_intervals(events, s, window_start, window_end) for s in spec.sensors}

    def bucket_energy(sensors: tuple[str, ...], bucket_start: datetime, d: date | None = None) -> float:
        if spec.bucket == Bucket.minute:
            minutes = [bucket_start]
        elif spec.bucket == Bucket.hour:
            minutes = [bucket_start + timedelta(minutes=m) for m in range(60)]
        else:
            minutes = [
                bucket_start.replace(hour=h, minute=m)
                for h in range(spec.hour_from, spec.hour_to + 1)
                for m in range(60)
            ]
        seconds = 0
        for minute in minutes:
            if d is not None:
                minute = minute.replace(year=d.year, month=d.month, day=d.day)
            for s in sensors:
                seconds += _minute_on_seconds(per_sensor[s], minute)
        return power_w * seconds / 3600.0

    out = []
    if spec.group_by == GroupBy.time_bucket:
        buckets = [b for d in _window_dates(spec) for b in _all_buckets_of_day(spec, d)]
        out.append(("total", [(b, bucket_energy(spec.sensors, b)) for b in buckets]))
    elif spec.group_by == GroupBy.sensor:
        buckets = [b for d in _window_dates(spec) for b in _all_buckets_of_day(spec, d)]
        for s in spec.sensors:
            out.append((s, [(b, bucket_energy((s,), b)) for b in buckets]))
    else:
        norm = [b.replace(year=1970, month=1, day=1) for b in _all_buckets_of_day(spec, spec.date_from)]
        for d in _window_dates(spec):
            out.append(
                (d.strftime("%Y-%m-%d"), [(nb, bucket_energy(spec.sensors, nb, d=d)) for nb in norm])
            )
    return out


def oracle_energy_total(
    events: list[LightingEvent],
    sensor: str,
    on_date: date,
    hour_from: int,
    hour_to: int,
    power_w: float,
) -> dict:
    day_start = datetime.combine(on_date, time(0), tzinfo=UTC)
    day_end = day_start + timedelta(days=1)
    intervals = oracle_on_intervals(events, sensor, day_start, day_end)
    hourly_seconds = [0] * 24
    for h in range(hour_from, hour_to + 1):
        for m in range(60):
            hourly_seconds[h] += _minute_on_seconds(intervals, day_start + timedelta(hours=h, minutes=m))
    on_seconds = sum(hourly_seconds)
    window = (hour_to - hour_from + 1) * 3600
    return {
        "on_seconds": on_seconds,
        "off_seconds": window - on_seconds,
        "window_seconds": window,
        "energy_wh": power_w * on_seconds / 3600.0,
        "hourly_wh": [power_w * s / 3600.0 for s in hourly_seconds],
    }
