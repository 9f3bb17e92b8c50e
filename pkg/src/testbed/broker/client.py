"""Minimal MQTT 3.1.1 subset client for in-testbed publishers/subscribers.

Publishing is pipelined: QoS-1 publishes get a token, acks resolve tokens,
and callers that need exactly-once effects regenerate unacked messages
after a reconnect (payloads are deterministic). Subscribers receive
messages per decode batch so a consumer can group-commit before the
batch is acked.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Callable, Sequence

from testbed.broker.packets import (
    Connack,
    Connect,
    Disconnect,
    Malformed,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    Truncated,
    UnsupportedFeature,
    decode_packet,
    encode_packet,
)

log = logging.getLogger("testbed.client")

SEND_BUFFER_FLUSH = 64 * 1024


class MqttError(Exception):
    pass


class MqttClient:
    """Blocking client: connect, subscribe, publish, close.

    on_batch: called from the reader thread with a list of Publish packets
    decoded in one read cycle; QoS-1 messages in the batch are acked only
    after it returns.
    """

    def __init__(
        self,
        host: str,
        port: int,
        client_id: str,
        keep_alive_s: int = 30,
        on_batch: Callable[[list[Publish]], None] | None = None,
    ):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.keep_alive_s = keep_alive_s
        self.on_batch = on_batch
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._pinger: threading.Thread | None = None
        self._lock = threading.Lock()  # guards socket writes + send buffer
        self._sendbuf = bytearray()
        self._cond = threading.Condition()
        self._connack: Connack | None = None
        self._suback: dict[int, Suback] = {}
        self._inflight: dict[int, int] = {}  # packet_id -> token
        self._acked: set[int] = set()  # tokens
        self._next_token = 0
        self._next_pid = 1
        self._dead: str | None = None
        self._closing = False

    # ---------------------------------------------------------------- lifecycle

    def connect(self, timeout: float = 5.0) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        self._sock = sock
        self._dead = None
        self._reader = threading.Thread(target=self._read_loop, name=f"mqtt-r-{self.client_id}", daemon=True)
        self._reader.start()
        self._write(encode_packet(Connect(client_id=self.client_id, keep_alive_s=self.keep_alive_s)), flush=True)
        with self._cond:
            if not self._cond.wait_for(lambda: self._connack is not None or self._dead, timeout):
                raise MqttError("timed out waiting for CONNACK")
            if self._dead:
                raise MqttError(f"connection failed: {self._dead}")
            assert self._connack is not None
            if self._connack.return_code != 0:
                raise MqttError(f"connection refused, return code {self._connack.return_code}")
        if self.keep_alive_s > 0:
            self._pinger = threading.Thread(target=self._ping_loop, name=f"mqtt-p-{self.client_id}", daemon=True)
            self._pinger.start()

    def close(self) -> None:
        self._closing = True
        if self._sock is not None:
            try:
                self._write(encode_packet(Disconnect()), flush=True)
            except MqttError:
                pass
            self._teardown("client closed")

    @property
    def alive(self) -> bool:
        return self._sock is not None and self._dead is None

    def _teardown(self, reason: str) -> None:
        with self._cond:
            if self._dead is None:
                self._dead = reason
            sock, self._sock = self._sock, None
            self._cond.notify_all()
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

    # ---------------------------------------------------------------- subscribe

    def subscribe(self, filters: Sequence[tuple[str, int]], timeout: float = 5.0) -> tuple[int, ...]:
        pid = self._take_pid()
        self._write(encode_packet(Subscribe(packet_id=pid, filters=tuple(filters))), flush=True)
        with self._cond:
            if not self._cond.wait_for(lambda: pid in self._suback or self._dead, timeout):
                raise MqttError("timed out waiting for SUBACK")
            if self._dead:
                raise MqttError(f"connection lost: {self._dead}")
            return self._suback.pop(pid).granted

    # ---------------------------------------------------------------- publish

    def publish(self, topic: str, payload: bytes) -> None:
        """QoS-0 fire-and-forget."""
        self._write(encode_packet(Publish(topic=topic, payload=payload, qos=0)), flush=True)

    def publish_qos1(self, topic: str, payload: bytes, flush: bool = True) -> int:
        """Send a QoS-1 publish, returning an ack token (see wait_for_acks).

        With flush=False the packet is buffered for pipelining; call
        flush() or let the buffer high-water mark send it.
        """
        with self._cond:
            token = self._next_token
            self._next_token += 1
            pid = self._take_pid()
            self._inflight[pid] = token
        self._write(
            encode_packet(Publish(topic=topic, payload=payload, qos=1, packet_id=pid)),
            flush=flush,
        )
        return token

    def flush(self) -> None:
        self._write(b"", flush=True)

    def wait_for_acks(self, timeout: float = 30.0) -> None:
        """Block until every outstanding QoS-1 publish is acked."""
        self.flush()
        deadline = time.monotonic() + timeout
        with self._cond:
            while self._inflight:
                if self._dead:
                    raise MqttError(f"connection lost: {self._dead}")
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(timeout=remaining):
                    raise MqttError(f"timed out with {len(self._inflight)} publishes unacked")

    def acked_tokens(self) -> set[int]:
        with self._cond:
            return set(self._acked)

    def _take_pid(self) -> int:
        for _ in range(65535):
            pid = self._next_pid
            self._next_pid = pid % 65535 + 1
            if pid not in self._inflight:
                return pid
        raise MqttError("65535 publishes in flight")

    # ---------------------------------------------------------------- wire

    def _write(self, data: bytes, flush: bool) -> None:
        with self._lock:
            sock = self._sock
            if sock is None or self._dead:
                raise MqttError(f"not connected: {self._dead or 'closed'}")
            self._sendbuf += data
            if not flush and len(self._sendbuf) < SEND_BUFFER_FLUSH:
                return
            out, self._sendbuf = self._sendbuf, bytearray()
            try:
                sock.sendall(out)
            except OSError as exc:
                self._teardown(f"send failed: {exc}")
                raise MqttError(f"send failed: {exc}") from None

    def _read_loop(self) -> None:
        sock = self._sock
        buf = b""
        try:
            while sock is not None:
                chunk = sock.recv(65536)
                if not chunk:
                    self._teardown("connection closed by broker")
                    return
                buf += chunk
                consumed = 0
                batch: list[Publish] = []
                while True:
                    try:
                        packet, n = decode_packet(memoryview(buf)[consumed:])
                    except Truncated:
                        break
                    consumed += n
                    if isinstance(packet, Publish):
                        batch.append(packet)
                    else:
                        self._dispatch(packet)
                if consumed:
                    buf = buf[consumed:]
                if batch:
                    self._deliver(batch)
        except (OSError, Malformed, UnsupportedFeature) as exc:
            self._teardown(f"reader failed: {exc}")

    def _deliver(self, batch: list[Publish]) -> None:
        if self.on_batch is not None:
            try:
                self.on_batch(batch)
            except Exception:
                log.exception("on_batch handler failed; leaving batch unacked")
                return
        acks = b"".join(
            encode_packet(Puback(packet_id=p.packet_id)) for p in batch if p.qos == 1
        )
        if acks:
            try:
                self._write(acks, flush=True)
            except MqttError:
                pass

    def _dispatch(self, packet) -> None:
        with self._cond:
            if isinstance(packet, Connack):
                self._connack = packet
            elif isinstance(packet, Puback):
                token = self._inflight.pop(packet.packet_id, None)
                if token is not None:
                    self._acked.add(token)
            elif isinstance(packet, Suback):
                self._suback[packet.packet_id] = packet
            elif isinstance(packet, Pingresp):
                pass
            self._cond.notify_all()

    def _ping_loop(self) -> None:
        interval = max(self.keep_alive_s / 2.0, 1.0)
        while not self._closing and self._dead is None:
            time.sleep(interval)
            if self._closing or self._dead is not None:
                return
            try:
                self._write(encode_packet(Pingreq()), flush=True)
            except MqttError:
                return
