"""Domain types shared by all layers, plus the bit-exact payload codec.

The JSON produced here is the canonical wire and log format: fixed key
order, no whitespace, UTC RFC-3339 timestamps. Encoders are deterministic
byte-for-byte so that log replay is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from enum import Enum


class MalformedPayload(ValueError):
    """Payload is not JSON, or is missing keys / has wrong types."""


class InvariantViolation(ValueError):
    """Payload parsed but violates a domain invariant."""


class VehicleClass(str, Enum):
    """The ten vehicle-count columns of a traffic reading."""

    twmv = "twmv"
    carv = "carv"
    busv = "busv"
    lgv = "lgv"
    hgv = "hgv"
    hgvr2 = "hgvr2"
    hgvr3 = "hgvr3"
    hgvr4 = "hgvr4"
    hgva3 = "hgva3"
    hgva5 = "hgva5"


# hgv is the sum of these five subcategories; enforced at decode time so
# aggregates over hgv vs its parts can never disagree.
HGV_SUBCLASSES = (
    VehicleClass.hgvr2,
    VehicleClass.hgvr3,
    VehicleClass.hgvr4,
    VehicleClass.hgva3,
    VehicleClass.hgva5,
)

TOP_LEVEL_CLASSES = (
    VehicleClass.twmv,
    VehicleClass.carv,
    VehicleClass.busv,
    VehicleClass.lgv,
    VehicleClass.hgv,
)


class DistributionType(str, Enum):
    total = "total"
    average_per_minute = "average_per_minute"


class LightingEventKind(str, Enum):
    motion = "motion"
    light_on = "light_on"
    light_off = "light_off"


def parse_ts(text: str) -> datetime:
    """Parse an RFC-3339 UTC timestamp with 'Z' suffix, second resolution."""
    if not isinstance(text, str) or not text.endswith("Z"):
        raise MalformedPayload(f"timestamp must be RFC-3339 UTC with Z suffix: {text!r}")
    try:
        dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    except ValueError as exc:
        raise MalformedPayload(f"bad timestamp {text!r}: {exc}") from None
    return dt.replace(tzinfo=timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TrafficReading:
    """One minute of vehicle-class counts observed by one sensor."""

    sensor_id: str
    ts: datetime  # UTC, minute resolution (seconds == 0)
    twmv: int = 0
    carv: int = 0
    busv: int = 0
    lgv: int = 0
    hgv: int = 0
    hgvr2: int = 0
    hgvr3: int = 0
    hgvr4: int = 0
    hgva3: int = 0
    hgva5: int = 0

    def count(self, cls: VehicleClass) -> int:
        return getattr(self, cls.value)

    def validate(self) -> None:
        if not self.sensor_id:
            raise InvariantViolation("sensor_id must be non-empty")
        if self.ts.tzinfo is None:
            raise InvariantViolation("ts must be timezone-aware UTC")
        if self.ts.second != 0 or self.ts.microsecond != 0:
            raise InvariantViolation(f"ts must have zero seconds (per-minute observations): {self.ts}")
        for cls in VehicleClass:
            if self.count(cls) < 0:
                raise InvariantViolation(f"{cls.value} count is negative")
        sub = sum(self.count(c) for c in HGV_SUBCLASSES)
        if self.hgv != sub:
            raise InvariantViolation(f"hgv={self.hgv} != sum of subcategories {sub}")


@dataclass(frozen=True)
class LightingEvent:
    """A motion / light_on / light_off event at a location."""

    sensor_id: str
    ts: datetime  # UTC, second resolution
    event: LightingEventKind

    def validate(self) -> None:
        if not self.sensor_id:
            raise InvariantViolation("sensor_id must be non-empty")
        if self.ts.tzinfo is None:
            raise InvariantViolation("ts must be timezone-aware UTC")
        if self.ts.microsecond != 0:
            raise InvariantViolation("ts has second resolution")


# Key order is the contract: encoders emit exactly these keys in exactly
# this order with no whitespace.
_TRAFFIC_KEYS = ("sensor_id", "ts") + tuple(c.value for c in VehicleClass)
_LIGHTING_KEYS = ("sensor_id", "ts", "event")


def encode_traffic(reading: TrafficReading) -> bytes:
    """Encode a valid reading as single-line JSON, deterministic bytes."""
    reading.validate()
    obj = {"sensor_id": reading.sensor_id, "ts": format_ts(reading.ts)}
    for cls in VehicleClass:
        obj[cls.value] = reading.count(cls)
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_traffic(data: bytes) -> TrafficReading:
    obj = _parse_object(data, _TRAFFIC_KEYS)
    if not isinstance(obj["sensor_id"], str):
        raise MalformedPayload("sensor_id must be a string")
    counts = {}
    for cls in VehicleClass:
        v = obj[cls.value]
        if not isinstance(v, int) or isinstance(v, bool):
            raise MalformedPayload(f"{cls.value} must be an integer")
        counts[cls.value] = v
    reading = TrafficReading(sensor_id=obj["sensor_id"], ts=parse_ts(obj["ts"]), **counts)
    reading.validate()
    return reading


def encode_lighting(event: LightingEvent) -> bytes:
    event.validate()
    obj = {
        "sensor_id": event.sensor_id,
        "ts": format_ts(event.ts),
        "event": event.event.value,
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_lighting(data: bytes) -> LightingEvent:
    obj = _parse_object(data, _LIGHTING_KEYS)
    if not isinstance(obj["sensor_id"], str):
        raise MalformedPayload("sensor_id must be a string")
    if not isinstance(obj["event"], str):
        raise MalformedPayload("event must be a string")
    try:
        kind = LightingEventKind(obj["event"])
    except ValueError:
        raise InvariantViolation(f"unknown event name {obj['event']!r}") from None
    event = LightingEvent(sensor_id=obj["sensor_id"], ts=parse_ts(obj["ts"]), event=kind)
    event.validate()
    return event


def _parse_object(data: bytes, required_keys: tuple[str, ...]) -> dict:
    try:
        obj = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedPayload(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedPayload("payload must be a JSON object")
    for key in required_keys:
        if key not in obj:
            raise MalformedPayload(f"missing key {key!r}")
    return obj


# Sanity check at import time: dataclass field order must track the enum,
# since encode_traffic relies on it for the canonical key order.
assert tuple(f.name for f in fields(TrafficReading))[2:] == tuple(c.value for c in VehicleClass)
