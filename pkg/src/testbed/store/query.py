"""Query types and bucketing rules shared by the store, gateway and tests.

Conventions (all UTC):
  - the filter window is a date range times an inclusive hour-of-day range
    (hour_from=8, hour_to=10 covers 08:00:00-10:59:59 on every date);
  - average_per_minute divides by the minutes the bucket contributes to
    the window, so absent minutes count as zero traffic;
  - group_by=time_bucket yields one series per vehicle class for traffic
    (a single "total" series for lighting), group_by=sensor one per
    sensor, group_by=date one per date with bucket timestamps normalized
    to a common day.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum

from testbed.model import DistributionType, VehicleClass

EPOCH_DAY = date(1970, 1, 1)


class InvalidSpec(ValueError):
    """Query parameters violate the filter rules; `param` names the culprit."""

    def __init__(self, param: str, message: str):
        super().__init__(message)
        self.param = param


class UnknownSensor(KeyError):
    def __init__(self, sensor: str):
        super().__init__(sensor)
        self.sensor = sensor


class GroupBy(str, Enum):
    time_bucket = "time_bucket"
    sensor = "sensor"
    date = "date"


class Bucket(str, Enum):
    minute = "minute"
    hour = "hour"
    day = "day"


@dataclass(frozen=True)
class QuerySpec:
    use_case: str  # "traffic" or "lighting"
    date_from: date
    date_to: date
    hour_from: int = 0
    hour_to: int = 23
    sensors: tuple[str, ...] = ()  # empty = every known sensor
    classes: tuple[VehicleClass, ...] = ()  # traffic only; empty = all ten
    distribution: DistributionType = DistributionType.total
    group_by: GroupBy = GroupBy.time_bucket
    bucket: Bucket = Bucket.hour

    def validate(self) -> None:
        if self.use_case not in ("traffic", "lighting"):
            raise InvalidSpec("use_case", f"unknown use_case {self.use_case!r}")
        if self.date_from > self.date_to:
            raise InvalidSpec("date_from", "date_from must not exceed date_to")
        if not 0 <= self.hour_from <= 23:
            raise InvalidSpec("hour_from", "hour_from must be 0..23")
        if not 0 <= self.hour_to <= 23:
            raise InvalidSpec("hour_to", "hour_to must be 0..23")
        if self.hour_from > self.hour_to:
            raise InvalidSpec("hour_from", "hour_from must not exceed hour_to")
        if self.group_by == GroupBy.date and len(self.sensors) != 1:
            raise InvalidSpec("sensors", "group_by=date requires exactly one sensor")
        if (
            self.group_by == GroupBy.sensor
            and self.date_from != self.date_to
            and self.bucket == Bucket.minute
        ):
            raise InvalidSpec("bucket", "group_by=sensor across dates requires bucket hour or day")
        if self.use_case == "lighting" and self.classes:
            raise InvalidSpec("classes", "classes apply to the traffic use case only")

    def resolved(self, known_sensors: list[str]) -> "QuerySpec":
        """Fill defaulted sensors/classes; unknown sensors raise."""
        sensors = self.sensors or tuple(sorted(known_sensors))
        for s in self.sensors:
            if s not in known_sensors:
                raise UnknownSensor(s)
        classes = self.classes
        if self.use_case == "traffic" and not classes:
            classes = tuple(VehicleClass)
        spec = replace(self, sensors=sensors, classes=classes)
        spec.validate()
        return spec


@dataclass(frozen=True)
class SeriesGroup:
    label: str
    points: tuple[tuple[datetime, float], ...]  # (bucket_ts, value), ascending


@dataclass(frozen=True)
class SeriesResult:
    groups: tuple[SeriesGroup, ...]


@dataclass(frozen=True)
class OnInterval:
    sensor_id: str
    start_ts: datetime
    end_ts: datetime


@dataclass(frozen=True)
class EnergyTotals:
    sensor_id: str
    date: date
    hour_from: int
    hour_to: int
    window_seconds: int
    on_seconds: int
    off_seconds: int
    energy_wh: float
    hourly_wh: tuple[float, ...]  # 24 slots, zeros outside the hour window


# ---------------------------------------------------------------- window helpers


def dates_in(spec: QuerySpec) -> list[date]:
    out = []
    d = spec.date_from
    while d <= spec.date_to:
        out.append(d)
        d += timedelta(days=1)
    return out


def in_window(spec: QuerySpec, ts: datetime) -> bool:
    return (
        spec.date_from <= ts.date() <= spec.date_to
        and spec.hour_from <= ts.hour <= spec.hour_to
    )


def bucket_ts(spec: QuerySpec, ts: datetime) -> datetime:
    if spec.bucket == Bucket.minute:
        return ts.replace(second=0, microsecond=0)
    if spec.bucket == Bucket.hour:
        return ts.replace(minute=0, second=0, microsecond=0)
    return ts.replace(hour=0, minute=0, second=0, microsecond=0)


def normalize_to_epoch_day(ts: datetime) -> datetime:
    """Shift a bucket timestamp onto 1970-01-01, keeping the time of day."""
    return datetime.combine(EPOCH_DAY, ts.timetz())


def buckets_for_date(spec: QuerySpec, d: date) -> list[datetime]:
    """Every bucket of one date that intersects the hour window, ascending."""
    day_start = datetime.combine(d, time(0, 0), tzinfo=timezone.utc)
    if spec.bucket == Bucket.day:
        return [day_start]
    if spec.bucket == Bucket.hour:
        return [day_start + timedelta(hours=h) for h in range(spec.hour_from, spec.hour_to + 1)]
    return [
        day_start + timedelta(hours=h, minutes=m)
        for h in range(spec.hour_from, spec.hour_to + 1)
        for m in range(60)
    ]


def window_buckets(spec: QuerySpec) -> list[datetime]:
    return [b for d in dates_in(spec) for b in buckets_for_date(spec, d)]


def minutes_in_bucket(spec: QuerySpec) -> int:
    """Minutes a bucket contributes to the filter window (average divisor)."""
    if spec.bucket == Bucket.minute:
        return 1
    if spec.bucket == Bucket.hour:
        return 60
    return 60 * (spec.hour_to - spec.hour_from + 1)


def bucket_hour_ranges(spec: QuerySpec, bucket_start: datetime) -> list[tuple[datetime, datetime]]:
    """The [start, end) time spans a bucket contributes to the window
    (a day bucket contributes one span per selected hour)."""
    if spec.bucket == Bucket.minute:
        return [(bucket_start, bucket_start + timedelta(minutes=1))]
    if spec.bucket == Bucket.hour:
        return [(bucket_start, bucket_start + timedelta(hours=1))]
    return [
        (
            bucket_start + timedelta(hours=h),
            bucket_start + timedelta(hours=h + 1),
        )
        for h in range(spec.hour_from, spec.hour_to + 1)
    ]
