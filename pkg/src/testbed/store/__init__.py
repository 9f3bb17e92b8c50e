"""Materialized time-series view over the event log: idempotent ingest,
traffic/energy aggregation queries, on-interval reconstruction."""

from testbed.store.query import (
    EnergyTotals,
    InvalidSpec,
    OnInterval,
    QuerySpec,
    SeriesGroup,
    SeriesResult,
    UnknownSensor,
)
from testbed.store.store import Store

__all__ = [
    "EnergyTotals",
    "InvalidSpec",
    "OnInterval",
    "QuerySpec",
    "SeriesGroup",
    "SeriesResult",
    "Store",
    "UnknownSensor",
]
