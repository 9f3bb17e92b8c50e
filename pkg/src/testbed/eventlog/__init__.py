"""Partitioned, replayable, durable append-only log with consumer groups,
plus the bridge that drains the broker into it."""

from testbed.eventlog.log import (
    BadPartition,
    EventLog,
    IoFailure,
    LogRecord,
    OffsetBeyondEnd,
    StorageFull,
    StreamConfig,
    UnknownStream,
    fnv1a64,
    partition_for_key,
)

__all__ = [
    "BadPartition",
    "EventLog",
    "IoFailure",
    "LogRecord",
    "OffsetBeyondEnd",
    "StorageFull",
    "StreamConfig",
    "UnknownStream",
    "fnv1a64",
    "partition_for_key",
]
