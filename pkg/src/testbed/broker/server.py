"""Broker core: session state machine, topic routing, TCP front end.

The state machine (`Broker.handle_packet`) is separable from the TCP layer
so routing, ack and retransmit behavior are all unit-testable without
sockets. The TCP layer owns one reader and one writer thread per
connection; all shared state (sessions, subscriptions, pending QoS-1
deliveries) is guarded by one broker lock, so a publish either sees a
subscription or not, never a torn view.
"""

from __future__ import annotations

import errno
import logging
import queue
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from testbed.broker.packets import (
    Connack,
    Connect,
    Disconnect,
    Malformed,
    Packet,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    Truncated,
    Unsuback,
    Unsubscribe,
    UnsupportedFeature,
    decode_packet,
    encode_packet,
)
from testbed.broker.topics import topic_matches

log = logging.getLogger("testbed.broker")

KEEPALIVE_GRACE = 1.5
RETRANSMIT_INITIAL_S = 5.0
RETRANSMIT_CAP_S = 60.0
DEFAULT_MAX_PAYLOAD = 256 * 1024
OUTBOUND_QUEUE_LIMIT = 1024
RECENT_INBOUND_CAP = 4096


class ProtocolViolation(Exception):
    """Client broke the session rules (e.g. Publish before Connect)."""


@dataclass
class PendingDelivery:
    publish: Publish
    next_retry: float
    interval: float


class Session:
    """Per-connection broker state. Clean sessions: dropped on disconnect."""

    def __init__(self):
        self.client_id: str = ""
        self.connected = False
        self.keep_alive_s = 0
        self.last_inbound = 0.0
        self.subscriptions: dict[str, int] = {}  # filter -> granted qos
        self.pending_out: dict[int, PendingDelivery] = {}  # awaiting Puback
        self.recent_inbound: OrderedDict[int, None] = OrderedDict()
        self._next_pid = 1
        self.transport: "_Connection | None" = None  # set by the TCP layer

    def next_packet_id(self) -> int:
        # 1..65535, skipping ids still awaiting acknowledgement
        for _ in range(65535):
            pid = self._next_pid
            self._next_pid = pid % 65535 + 1
            if pid not in self.pending_out:
                return pid
        raise RuntimeError("no free packet ids (65535 in flight)")


@dataclass(frozen=True)
class Send:
    session: Session
    packet: Packet


@dataclass(frozen=True)
class CloseConn:
    session: Session
    reason: str


Action = Send | CloseConn


class Broker:
    """Session registry + routing. Thread-safe; the TCP layer is optional."""

    def __init__(self, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.max_payload = max_payload
        self.lock = threading.RLock()
        self.sessions: dict[str, Session] = {}
        self._anon_counter = 0

    def new_session(self) -> Session:
        return Session()

    def drop_session(self, session: Session) -> None:
        with self.lock:
            session.connected = False
            if self.sessions.get(session.client_id) is session:
                del self.sessions[session.client_id]

    # ---------------------------------------------------------------- state machine

    def handle_packet(self, session: Session, p: Packet, now: float | None = None) -> list[Action]:
        """Apply one inbound packet; returns ordered actions (sends to this
        or other sessions, closes). Raises ProtocolViolation when the
        connection must be torn down."""
        if now is None:
            now = time.monotonic()
        with self.lock:
            session.last_inbound = now
            if isinstance(p, Connect):
                return self._on_connect(session, p)
            if not session.connected:
                raise ProtocolViolation(f"{type(p).__name__} before Connect")
            if isinstance(p, Publish):
                return self._on_publish(session, p, now)
            if isinstance(p, Puback):
                session.pending_out.pop(p.packet_id, None)
                return []
            if isinstance(p, Subscribe):
                granted = []
                for filt, req_qos in p.filters:
                    q = min(req_qos, 1)
                    session.subscriptions[filt] = q
                    granted.append(q)
                return [Send(session, Suback(packet_id=p.packet_id, granted=tuple(granted)))]
            if isinstance(p, Unsubscribe):
                for filt in p.filters:
                    session.subscriptions.pop(filt, None)
                return [Send(session, Unsuback(packet_id=p.packet_id))]
            if isinstance(p, Pingreq):
                return [Send(session, Pingresp())]
            if isinstance(p, Disconnect):
                return [CloseConn(session, "client disconnect")]
            # Connack / Suback / Unsuback / Pingresp from a client
            raise ProtocolViolation(f"unexpected {type(p).__name__} from client")

    def _on_connect(self, session: Session, p: Connect) -> list[Action]:
        if session.connected:
            raise ProtocolViolation("second Connect on one connection")
        client_id = p.client_id
        if not client_id:
            self._anon_counter += 1
            client_id = f"anon-{self._anon_counter}"
        actions: list[Action] = []
        existing = self.sessions.get(client_id)
        if existing is not None:
            # MQTT 3.1.1: a new connection with the same id evicts the old one
            actions.append(CloseConn(existing, "session taken over"))
            self.drop_session(existing)
        session.client_id = client_id
        session.keep_alive_s = p.keep_alive_s
        session.connected = True
        self.sessions[client_id] = session
        actions.append(Send(session, Connack(return_code=0)))
        return actions

    def _on_publish(self, session: Session, p: Publish, now: float) -> list[Action]:
        if len(p.payload) > self.max_payload:
            raise ProtocolViolation(f"payload {len(p.payload)} exceeds max {self.max_payload}")
        actions: list[Action] = []
        if p.qos == 1:
            if p.dup and p.packet_id in session.recent_inbound:
                # duplicate retry of an already-routed publish: re-ack only
                return [Send(session, Puback(packet_id=p.packet_id))]
            actions.extend(self.route_publish(p, now))
            session.recent_inbound[p.packet_id] = None
            session.recent_inbound.move_to_end(p.packet_id)
            while len(session.recent_inbound) > RECENT_INBOUND_CAP:
                session.recent_inbound.popitem(last=False)
            # ack strictly after the message is handed to every subscriber queue
            actions.append(Send(session, Puback(packet_id=p.packet_id)))
        else:
            actions.extend(self.route_publish(p, now))
        return actions

    # ---------------------------------------------------------------- routing

    def route_publish(self, msg: Publish, now: float | None = None) -> list[Send]:
        """One delivery per session with a matching filter, at
        min(msg.qos, max granted qos among its matching filters)."""
        if now is None:
            now = time.monotonic()
        deliveries: list[Send] = []
        with self.lock:
            for session in self.sessions.values():
                best: int | None = None
                for filt, granted in session.subscriptions.items():
                    if topic_matches(filt, msg.topic):
                        best = granted if best is None else max(best, granted)
                if best is None:
                    continue
                qos = min(msg.qos, best)
                if qos == 0:
                    out = Publish(topic=msg.topic, payload=msg.payload, qos=0)
                else:
                    pid = session.next_packet_id()
                    out = Publish(topic=msg.topic, payload=msg.payload, qos=1, packet_id=pid)
                    session.pending_out[pid] = PendingDelivery(
                        publish=out,
                        next_retry=now + RETRANSMIT_INITIAL_S,
                        interval=RETRANSMIT_INITIAL_S,
                    )
                deliveries.append(Send(session, out))
        return deliveries

    # ---------------------------------------------------------------- timers

    def tick(self, now: float | None = None) -> list[Action]:
        """Periodic housekeeping: QoS-1 retransmits (dup=1, interval
        doubling to a cap) and keep-alive expiry at 1.5x."""
        if now is None:
            now = time.monotonic()
        actions: list[Action] = []
        with self.lock:
            for session in list(self.sessions.values()):
                if session.keep_alive_s > 0 and now - session.last_inbound > KEEPALIVE_GRACE * session.keep_alive_s:
                    actions.append(CloseConn(session, "keep-alive expired"))
                    continue
                for pending in session.pending_out.values():
                    if pending.next_retry <= now:
                        dup = Publish(
                            topic=pending.publish.topic,
                            payload=pending.publish.payload,
                            qos=1,
                            packet_id=pending.publish.packet_id,
                            dup=True,
                        )
                        pending.interval = min(pending.interval * 2, RETRANSMIT_CAP_S)
                        pending.next_retry = now + pending.interval
                        actions.append(Send(session, dup))
        return actions


# -------------------------------------------------------------------- TCP layer


class _Connection:
    def __init__(self, server: "BrokerServer", sock: socket.socket, peer):
        self.server = server
        self.sock = sock
        self.peer = peer
        self.session = server.broker.new_session()
        self.session.transport = self
        self.outbox: queue.Queue[bytes | None] = queue.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        self.closed = threading.Event()

    def run_reader(self) -> None:
        buf = b""
        try:
            while not self.closed.is_set():
                try:
                    chunk = self.sock.recv(65536)
                except OSError:
                    break
                if not chunk:
                    break
                buf += chunk
                consumed = 0
                while True:
                    try:
                        packet, n = decode_packet(memoryview(buf)[consumed:])
                    except Truncated:
                        break
                    except (Malformed, UnsupportedFeature) as exc:
                        raise ProtocolViolation(str(exc)) from None
                    consumed += n
                    actions = self.server.broker.handle_packet(self.session, packet)
                    self.server.execute(actions)
                if consumed:
                    buf = buf[consumed:]
        except ProtocolViolation as exc:
            log.warning("protocol violation from %s: %s", self.peer, exc)
        except Exception:
            if not self.closed.is_set():
                log.exception("reader error for %s", self.peer)
        finally:
            self.close("reader exit")

    def run_writer(self) -> None:
        while True:
            item = self.outbox.get()
            if item is None:
                break
            # coalesce whatever else is queued into one send
            parts = [item]
            try:
                while len(parts) < 512:
                    nxt = self.outbox.get_nowait()
                    if nxt is None:
                        self._send_parts(parts)
                        return
                    parts.append(nxt)
            except queue.Empty:
                pass
            if not self._send_parts(parts):
                break

    def _send_parts(self, parts: list[bytes]) -> bool:
        try:
            self.sock.sendall(b"".join(parts))
            return True
        except OSError:
            self.close("send failed")
            return False

    def enqueue(self, data: bytes) -> None:
        try:
            self.outbox.put_nowait(data)
        except queue.Full:
            # overload policy: a slow subscriber is disconnected
            log.warning("outbound queue full for %s, closing", self.session.client_id or self.peer)
            self.close("slow consumer")

    def close(self, reason: str) -> None:
        if self.closed.is_set():
            return
        self.closed.set()
        self.server.broker.drop_session(self.session)
        try:
            self.outbox.put_nowait(None)
        except queue.Full:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self.server.forget(self)


class BrokerServer:
    """TCP listener speaking the MQTT 3.1.1 subset, default port 1883."""

    def __init__(self, host: str = "0.0.0.0", port: int = 1883, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.host = host
        self.port = port
        self.broker = Broker(max_payload=max_payload)
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: set[_Connection] = set()
        self._conns_lock = threading.Lock()
        self._stopping = threading.Event()

    def start(self, bind_retry_s: float = 3.0) -> None:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        # a restarted broker may race lingering FIN_WAIT sockets on its port
        deadline = time.monotonic() + bind_retry_s
        while True:
            try:
                self._listener.bind((self.host, self.port))
                break
            except OSError as exc:
                if exc.errno != errno.EADDRINUSE or time.monotonic() >= deadline:
                    raise
                time.sleep(0.05)
        self.port = self._listener.getsockname()[1]
        self._listener.listen(128)
        accept = threading.Thread(target=self._accept_loop, name="broker-accept", daemon=True)
        housekeeping = threading.Thread(target=self._tick_loop, name="broker-tick", daemon=True)
        self._threads = [accept, housekeeping]
        accept.start()
        housekeeping.start()
        log.info("broker listening on %s:%d", self.host, self.port)

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        # join the accept thread first so no connection can appear after the sweep
        for t in self._threads:
            t.join(timeout=2)
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close("broker stopping")

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stopping.is_set():
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            if self._stopping.is_set():
                sock.close()
                return
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(self, sock, peer)
            with self._conns_lock:
                self._conns.add(conn)
            threading.Thread(target=conn.run_reader, name=f"broker-r-{peer}", daemon=True).start()
            threading.Thread(target=conn.run_writer, name=f"broker-w-{peer}", daemon=True).start()

    def _tick_loop(self) -> None:
        while not self._stopping.wait(0.5):
            self.execute(self.broker.tick())

    def execute(self, actions: list[Action]) -> None:
        for action in actions:
            transport = action.session.transport
            if isinstance(action, Send):
                if transport is not None:
                    transport.enqueue(encode_packet(action.packet))
            elif isinstance(action, CloseConn):
                if transport is not None:
                    transport.close(action.reason)
                else:
                    self.broker.drop_session(action.session)

    def forget(self, conn: _Connection) -> None:
        with self._conns_lock:
            self._conns.discard(conn)
