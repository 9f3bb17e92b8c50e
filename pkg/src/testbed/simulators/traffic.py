"""Traffic counter simulator: per-minute Poisson vehicle counts shaped by a
24-hour diurnal profile and a vehicle-class mix."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

from testbed.model import HGV_SUBCLASSES, TrafficReading, VehicleClass
from testbed.simulators.rng import poisson_sample, substream

TOP_LEVEL_ORDER = (VehicleClass.twmv, VehicleClass.carv, VehicleClass.busv, VehicleClass.lgv)

# Invented defaults, config-overridable: rush-hour-shaped double peak
# (maxima at hours 9 and 18, trough 0.05 at 03:00).
DEFAULT_DIURNAL_PROFILE = [
    0.08, 0.06, 0.06, 0.05, 0.06, 0.12, 0.25, 0.55, 0.85, 1.00, 0.70, 0.60,
    0.65, 0.60, 0.55, 0.60, 0.70, 0.90, 1.00, 0.80, 0.50, 0.35, 0.20, 0.12,
]

# Top-level mix sums to 1; the five hgv subcategory weights define how the
# hgv share splits and sum to 1 among themselves.
DEFAULT_CLASS_MIX = {
    "carv": 0.55,
    "twmv": 0.25,
    "lgv": 0.09,
    "busv": 0.05,
    "hgv": 0.06,
    "hgvr2": 0.40,
    "hgvr3": 0.25,
    "hgvr4": 0.15,
    "hgva3": 0.12,
    "hgva5": 0.08,
}


@dataclass(frozen=True)
class SensorSpec:
    id: str
    label: str = ""


@dataclass
class TrafficSimConfig:
    seed: int = 42
    sensors: list[SensorSpec] = field(default_factory=lambda: [SensorSpec("S01"), SensorSpec("S02")])
    start_ts: datetime | None = None  # None = live mode
    end_ts: datetime | None = None
    base_rate: float = 30.0  # vehicles/min at profile peak
    class_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    diurnal_profile: list[float] = field(default_factory=lambda: list(DEFAULT_DIURNAL_PROFILE))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.sensors:
            raise ValueError("traffic config needs at least one sensor")
        if self.base_rate < 0:
            raise ValueError("base_rate must be >= 0")
        if len(self.diurnal_profile) != 24:
            raise ValueError("diurnal_profile must have 24 entries")
        if any(not 0 <= v <= 1 for v in self.diurnal_profile):
            raise ValueError("diurnal_profile values must lie in [0, 1]")
        for cls in VehicleClass:
            w = self.class_mix.get(cls.value)
            if w is None:
                raise ValueError(f"class_mix missing {cls.value}")
            if w < 0:
                raise ValueError(f"class_mix[{cls.value}] must be >= 0")
        top = sum(self.class_mix[c.value] for c in TOP_LEVEL_ORDER) + self.class_mix["hgv"]
        if abs(top - 1.0) > 1e-9:
            raise ValueError(f"top-level class_mix weights must sum to 1, got {top}")
        split = sum(self.class_mix[c.value] for c in HGV_SUBCLASSES)
        if abs(split - 1.0) > 1e-9:
            raise ValueError(f"hgv subcategory weights must sum to 1, got {split}")


def traffic_tick(config: TrafficSimConfig, sensor_id: str, minute_ts: datetime) -> TrafficReading:
    """One reading, fully determined by (seed, sensor, minute).

    Count order is fixed: twmv, carv, busv, lgv, then the five hgv
    subcategories; hgv is their sum.
    """
    if minute_ts.second != 0 or minute_ts.microsecond != 0:
        raise ValueError("minute_ts must be aligned to a minute")
    minute_epoch = int(minute_ts.astimezone(timezone.utc).timestamp()) // 60
    rng = substream(config.seed, sensor_id, minute_epoch)
    hour = minute_ts.astimezone(timezone.utc).hour
    lam_total = config.base_rate * config.diurnal_profile[hour]
    counts: dict[str, int] = {}
    for cls in TOP_LEVEL_ORDER:
        counts[cls.value] = poisson_sample(rng, lam_total * config.class_mix[cls.value])
    hgv_share = lam_total * config.class_mix["hgv"]
    for cls in HGV_SUBCLASSES:
        counts[cls.value] = poisson_sample(rng, hgv_share * config.class_mix[cls.value])
    counts["hgv"] = sum(counts[c.value] for c in HGV_SUBCLASSES)
    return TrafficReading(sensor_id=sensor_id, ts=minute_ts, **counts)
