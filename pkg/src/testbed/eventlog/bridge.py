"""MQTT -> log bridge: subscribes at QoS 1, validates payloads, appends to
the mapped stream keyed by sensor_id, then acks. Undecodable payloads land
in "<stream>.dlq" and are still acked so the pipeline never stalls.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Callable

from testbed.broker.client import MqttClient, MqttError
from testbed.broker.packets import Publish
from testbed.broker.topics import topic_matches
from testbed.eventlog.log import EventLog
from testbed.model import decode_lighting, decode_traffic

log = logging.getLogger("testbed.bridge")

RECONNECT_INITIAL_S = 1.0
RECONNECT_CAP_S = 30.0

# stream name -> payload validator returning the record key (sensor_id)
DEFAULT_VALIDATORS: dict[str, Callable[[bytes], str]] = {
    "traffic": lambda payload: decode_traffic(payload).sensor_id,
    "lighting": lambda payload: decode_lighting(payload).sensor_id,
}

DEFAULT_SUBSCRIPTIONS = [
    ("city/traffic/#", "traffic"),
    ("building/lighting/#", "lighting"),
]


class Bridge:
    """Long-running consumer tying the broker to the event log."""

    def __init__(
        self,
        broker_host: str,
        broker_port: int,
        eventlog: EventLog,
        subscriptions: list[tuple[str, str]] | None = None,
        client_id: str = "bridge",
        validators: dict[str, Callable[[bytes], str]] | None = None,
    ):
        self.broker_host = broker_host
        self.broker_port = broker_port
        self.log = eventlog
        self.subscriptions = subscriptions or list(DEFAULT_SUBSCRIPTIONS)
        self.client_id = client_id
        self.validators = validators or dict(DEFAULT_VALIDATORS)
        self.appended = 0
        self.dead_lettered = 0
        self._stop = threading.Event()
        self._client: MqttClient | None = None
        for _filt, stream in self.subscriptions:
            self.log.create_stream(stream)

    @property
    def connected(self) -> bool:
        client = self._client
        return client is not None and client.alive

    def stop(self) -> None:
        self._stop.set()
        if self._client is not None:
            self._client.close()

    def run(self) -> None:
        """Connect / resubscribe / consume until stopped; reconnects with
        1 s backoff doubling to 30 s. Duplicates are possible by design."""
        backoff = RECONNECT_INITIAL_S
        while not self._stop.is_set():
            try:
                client = MqttClient(
                    self.broker_host,
                    self.broker_port,
                    self.client_id,
                    on_batch=self._on_batch,
                )
                client.connect()
                client.subscribe([(filt, 1) for filt, _ in self.subscriptions])
                self._client = client
                log.info("bridge connected to %s:%d", self.broker_host, self.broker_port)
                backoff = RECONNECT_INITIAL_S
                while client.alive and not self._stop.is_set():
                    time.sleep(0.05)
                client.close()
                if self._stop.is_set():
                    return
                log.warning("bridge connection lost; retrying in %.0fs", backoff)
            except (MqttError, OSError) as exc:
                if self._stop.is_set():
                    return
                log.warning("bridge connect failed (%s); retrying in %.0fs", exc, backoff)
            if self._stop.wait(backoff):
                return
            backoff = min(backoff * 2, RECONNECT_CAP_S)

    def _on_batch(self, batch: list[Publish]) -> None:
        """Validate and group-append one decode batch, then return so the
        client acks it. Raising here leaves the batch unacked."""
        by_stream: dict[str, list[tuple[bytes, bytes]]] = {}
        for p in batch:
            stream = self._stream_for(p.topic)
            if stream is None:
                log.warning("no stream mapped for topic %s; dropping", p.topic)
                continue
            validator = self.validators.get(stream)
            try:
                if validator is None:
                    raise ValueError(f"no validator for stream {stream!r}")
                key = validator(p.payload).encode("utf-8")
                by_stream.setdefault(stream, []).append((key, p.payload))
            except ValueError:
                by_stream.setdefault(f"{stream}.dlq", []).append((b"", p.payload))
        for stream, entries in by_stream.items():
            if stream.endswith(".dlq"):
                self.log.create_stream(stream)
                self.dead_lettered += len(entries)
            else:
                self.appended += len(entries)
            self.log.append_batch(stream, entries)

    def _stream_for(self, topic: str) -> str | None:
        for filt, stream in self.subscriptions:
            if topic_matches(filt, topic):
                return stream
        return None
