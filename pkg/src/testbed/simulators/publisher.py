"""Publisher loops connecting the simulators to the broker at QoS 1.

Backfill replays a historical window (optionally paced at a speedup); live
mode follows the wall clock. Publishes that were never acked are simply
regenerated after a reconnect; determinism makes the retry exact.
"""

from __future__ import annotations

import logging
import threading
import time
from datetime import datetime, timedelta, timezone
from typing import Callable

from testbed.broker.client import MqttClient, MqttError
from testbed.model import LightingEvent, TrafficReading, encode_lighting, encode_traffic
from testbed.simulators.lighting import LightingSimConfig, lighting_step, new_state
from testbed.simulators.traffic import TrafficSimConfig, traffic_tick

log = logging.getLogger("testbed.sim")

TRAFFIC_TOPIC_PREFIX = "city/traffic"
LIGHTING_TOPIC_PREFIX = "building/lighting"

RECONNECT_INITIAL_S = 1.0
RECONNECT_CAP_S = 30.0


def traffic_topic(sensor_id: str) -> str:
    return f"{TRAFFIC_TOPIC_PREFIX}/{sensor_id}"


def lighting_topic(sensor_id: str) -> str:
    return f"{LIGHTING_TOPIC_PREFIX}/{sensor_id}"


def minutes_between(start: datetime, end: datetime) -> list[datetime]:
    """Minute-aligned timestamps in [start, end)."""
    if start.second or start.microsecond:
        raise ValueError("start must be minute-aligned")
    out = []
    ts = start
    while ts < end:
        out.append(ts)
        ts += timedelta(minutes=1)
    return out


def traffic_window_readings(config: TrafficSimConfig, start: datetime, end: datetime) -> list[TrafficReading]:
    """Every reading of the window, minute-major then sensor order."""
    return [
        traffic_tick(config, sensor.id, minute)
        for minute in minutes_between(start, end)
        for sensor in config.sensors
    ]


def lighting_window_events(config: LightingSimConfig, start: datetime, end: datetime) -> list[LightingEvent]:
    """Every lighting event of the window across locations, in time order.

    The controller is stepped through the whole window; a still-held light
    at the window end emits no trailing light_off (the store clips)."""
    events: list[LightingEvent] = []
    for location in config.locations:
        state = new_state(start)
        _state, evs = lighting_step(config, location.id, end - timedelta(seconds=1), state)
        events.extend(ev for ev in evs if start <= ev.ts < end)
    events.sort(key=lambda e: (e.ts, e.sensor_id))
    return events


class QosOnePublisher:
    """At-least-once publisher: payload generation is the caller's, retry
    bookkeeping is ours. Messages are (topic, payload) pairs; unacked ones
    are re-published after reconnecting."""

    def __init__(self, host: str, port: int, client_id: str, stop: threading.Event | None = None):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.stop = stop or threading.Event()
        self.published_acked = 0

    def publish_all(
        self,
        messages: list[tuple[str, bytes]],
        pace_s: float = 0.0,
        progress: Callable[[int], None] | None = None,
    ) -> int:
        """Publish every message at QoS 1, surviving broker restarts.
        Returns the number acked (== len(messages) unless stopped early)."""
        remaining = list(enumerate(messages))
        backoff = RECONNECT_INITIAL_S
        while remaining and not self.stop.is_set():
            client = MqttClient(self.host, self.port, self.client_id)
            token_to_index: dict[int, int] = {}
            try:
                client.connect()
                backoff = RECONNECT_INITIAL_S
                for n, (i, (topic, payload)) in enumerate(remaining):
                    if self.stop.is_set():
                        break
                    # flush every few messages so the stream stays on the
                    # wire instead of pooling in the send buffer
                    token = client.publish_qos1(topic, payload, flush=pace_s > 0 or n % 32 == 31)
                    token_to_index[token] = i
                    if progress is not None:
                        progress(i)
                    if pace_s > 0:
                        time.sleep(pace_s)
                client.wait_for_acks(timeout=60.0)
                acked = {token_to_index[t] for t in client.acked_tokens() if t in token_to_index}
                self.published_acked += len(acked)
                remaining = [(i, m) for i, m in remaining if i not in acked]
            except (MqttError, OSError) as exc:
                acked = {token_to_index[t] for t in client.acked_tokens() if t in token_to_index}
                self.published_acked += len(acked)
                remaining = [(i, m) for i, m in remaining if i not in acked]
                if self.stop.is_set():
                    break
                log.warning("publisher %s lost broker (%s); %d left, retry in %.0fs",
                            self.client_id, exc, len(remaining), backoff)
                if self.stop.wait(backoff):
                    break
                backoff = min(backoff * 2, RECONNECT_CAP_S)
            finally:
                client.close()
        return self.published_acked


def run_traffic_backfill(
    config: TrafficSimConfig,
    host: str,
    port: int,
    start: datetime,
    end: datetime,
    speedup: float = 0.0,
    client_id: str = "sim-traffic",
    stop: threading.Event | None = None,
) -> int:
    """Replay [start, end) at speedup x real time (0 = as fast as possible).
    Exactly len(sensors) * minutes QoS-1 publishes when undisturbed."""
    readings = traffic_window_readings(config, start, end)
    messages = [(traffic_topic(r.sensor_id), encode_traffic(r)) for r in readings]
    pace = (60.0 / speedup / max(len(config.sensors), 1)) if speedup > 0 else 0.0
    publisher = QosOnePublisher(host, port, client_id, stop)
    return publisher.publish_all(messages, pace_s=pace)


def run_lighting_backfill(
    config: LightingSimConfig,
    host: str,
    port: int,
    start: datetime,
    end: datetime,
    speedup: float = 0.0,
    client_id: str = "sim-lighting",
    stop: threading.Event | None = None,
) -> int:
    events = lighting_window_events(config, start, end)
    messages = [(lighting_topic(e.sensor_id), encode_lighting(e)) for e in events]
    window_s = (end - start).total_seconds()
    pace = (window_s / speedup / max(len(messages), 1)) if speedup > 0 and messages else 0.0
    publisher = QosOnePublisher(host, port, client_id, stop)
    return publisher.publish_all(messages, pace_s=pace)


def run_traffic_live(
    config: TrafficSimConfig,
    host: str,
    port: int,
    stop: threading.Event,
    client_id: str = "sim-traffic",
) -> None:
    """One reading per sensor per wall-clock minute, published as each
    minute closes."""
    publisher = QosOnePublisher(host, port, client_id, stop)
    while not stop.is_set():
        now = datetime.now(timezone.utc)
        minute = now.replace(second=0, microsecond=0)
        readings = [traffic_tick(config, s.id, minute) for s in config.sensors]
        publisher.publish_all([(traffic_topic(r.sensor_id), encode_traffic(r)) for r in readings])
        next_minute = minute + timedelta(minutes=1)
        stop.wait((next_minute - datetime.now(timezone.utc)).total_seconds() + 0.05)


def run_lighting_live(
    config: LightingSimConfig,
    host: str,
    port: int,
    stop: threading.Event,
    client_id: str = "sim-lighting",
    step_s: float = 1.0,
) -> None:
    publisher = QosOnePublisher(host, port, client_id, stop)
    states = {loc.id: new_state(datetime.now(timezone.utc)) for loc in config.locations}
    while not stop.is_set():
        now = datetime.now(timezone.utc).replace(microsecond=0)
        batch: list[tuple[str, bytes]] = []
        for loc in config.locations:
            states[loc.id], events = lighting_step(config, loc.id, now, states[loc.id])
            batch.extend((lighting_topic(e.sensor_id), encode_lighting(e)) for e in events)
        if batch:
            publisher.publish_all(batch)
        stop.wait(step_s)
