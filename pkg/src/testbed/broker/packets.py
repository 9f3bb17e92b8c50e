"""MQTT 3.1.1 subset packet codec: bit-exact fixed header (type nibble,
flags nibble, remaining length) plus per-type variable header and payload.

decode_packet is resumable: Truncated means "need more bytes", everything
else is a hard protocol error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from testbed.broker.topics import InvalidTopic, validate_topic_filter, validate_topic_name


class Malformed(ValueError):
    """Bytes violate the MQTT 3.1.1 framing or field rules."""


class Truncated(Exception):
    """Buffer ends mid-packet; retry once more bytes arrive."""


class UnsupportedFeature(ValueError):
    """Valid MQTT 3.1.1, but outside the QoS 0/1 clean-session subset."""


class OutOfRange(ValueError):
    pass


# Packet type nibbles.
CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
PUBREC, PUBREL, PUBCOMP = 5, 6, 7
SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK = 8, 9, 10, 11
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14

MAX_REMAINING_LENGTH = 268_435_455
SUBACK_FAILURE = 0x80


@dataclass(frozen=True)
class Connect:
    client_id: str
    keep_alive_s: int = 60


@dataclass(frozen=True)
class Connack:
    return_code: int = 0
    session_present: bool = False


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False

    def check(self) -> None:
        if self.qos not in (0, 1):
            raise UnsupportedFeature(f"qos {self.qos} outside subset")
        if self.qos == 1 and not self.packet_id:
            raise Malformed("qos 1 publish requires nonzero packet_id")
        if self.qos == 0 and self.packet_id is not None:
            raise Malformed("qos 0 publish must not carry a packet_id")


@dataclass(frozen=True)
class Puback:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    filters: tuple[tuple[str, int], ...]  # (topic filter, requested qos 0..2)


@dataclass(frozen=True)
class Suback:
    packet_id: int
    granted: tuple[int, ...]  # 0, 1 or 0x80 per filter


@dataclass(frozen=True)
class Unsubscribe:
    packet_id: int
    filters: tuple[str, ...]


@dataclass(frozen=True)
class Unsuback:
    packet_id: int


@dataclass(frozen=True)
class Pingreq:
    pass


@dataclass(frozen=True)
class Pingresp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


Packet = (
    Connect | Connack | Publish | Puback | Subscribe | Suback
    | Unsubscribe | Unsuback | Pingreq | Pingresp | Disconnect
)


def encode_remaining_length(n: int) -> bytes:
    """Little-endian base-128 varint, continuation bit 0x80, minimal length."""
    if n < 0 or n > MAX_REMAINING_LENGTH:
        raise OutOfRange(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        digit = n % 128
        n //= 128
        if n:
            digit |= 0x80
        out.append(digit)
        if not n:
            return bytes(out)


def decode_remaining_length(data) -> tuple[int, int]:
    """Return (value, bytes consumed). Raises Truncated if the varint is
    incomplete, Malformed on a 5th continuation byte."""
    value = 0
    multiplier = 1
    for i in range(4):
        if i >= len(data):
            raise Truncated()
        byte = data[i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        multiplier *= 128
    raise Malformed("remaining length exceeds 4 bytes")


def _utf8(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 65535:
        raise Malformed("utf-8 string exceeds 65535 bytes")
    return struct.pack(">H", len(raw)) + raw


class _Reader:
    """Cursor over a packet body; all reads raise Malformed on underrun
    (the body length is already known, so short fields are protocol errors)."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def u16(self) -> int:
        if self.pos + 2 > len(self.data):
            raise Malformed("field truncated")
        (v,) = struct.unpack_from(">H", self.data, self.pos)
        self.pos += 2
        return v

    def u8(self) -> int:
        if self.pos + 1 > len(self.data):
            raise Malformed("field truncated")
        v = self.data[self.pos]
        self.pos += 1
        return v

    def utf8(self) -> str:
        n = self.u16()
        if self.pos + n > len(self.data):
            raise Malformed("string truncated")
        raw = self.data[self.pos : self.pos + n]
        self.pos += n
        try:
            return bytes(raw).decode("utf-8")
        except UnicodeDecodeError:
            raise Malformed("invalid utf-8 in string") from None

    def rest(self) -> bytes:
        raw = bytes(self.data[self.pos :])
        self.pos = len(self.data)
        return raw

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def expect_end(self) -> None:
        if self.remaining:
            raise Malformed(f"{self.remaining} trailing bytes in packet")


def encode_packet(p: Packet) -> bytes:
    if isinstance(p, Connect):
        if not 0 <= p.keep_alive_s <= 65535:
            raise Malformed("keep_alive out of range")
        flags = 0x02  # clean session; no will / credentials in subset
        body = _utf8("MQTT") + bytes([4, flags]) + struct.pack(">H", p.keep_alive_s)
        body += _utf8(p.client_id)
        return _frame(CONNECT, 0, body)
    if isinstance(p, Connack):
        return _frame(CONNACK, 0, bytes([1 if p.session_present else 0, p.return_code]))
    if isinstance(p, Publish):
        p.check()
        validate_topic_name(p.topic)
        flags = (0x08 if p.dup else 0) | (p.qos << 1)
        body = _utf8(p.topic)
        if p.qos == 1:
            body += struct.pack(">H", p.packet_id)
        body += p.payload
        return _frame(PUBLISH, flags, body)
    if isinstance(p, Puback):
        return _frame(PUBACK, 0, _packet_id_bytes(p.packet_id))
    if isinstance(p, Subscribe):
        if not p.filters:
            raise Malformed("subscribe requires at least one filter")
        body = _packet_id_bytes(p.packet_id)
        for filt, qos in p.filters:
            validate_topic_filter(filt)
            if qos not in (0, 1, 2):
                raise Malformed(f"requested qos {qos} invalid")
            body += _utf8(filt) + bytes([qos])
        return _frame(SUBSCRIBE, 0x02, body)
    if isinstance(p, Suback):
        for g in p.granted:
            if g not in (0, 1, SUBACK_FAILURE):
                raise Malformed(f"granted qos {g} invalid")
        return _frame(SUBACK, 0, _packet_id_bytes(p.packet_id) + bytes(p.granted))
    if isinstance(p, Unsubscribe):
        if not p.filters:
            raise Malformed("unsubscribe requires at least one filter")
        body = _packet_id_bytes(p.packet_id)
        for filt in p.filters:
            validate_topic_filter(filt)
            body += _utf8(filt)
        return _frame(UNSUBSCRIBE, 0x02, body)
    if isinstance(p, Unsuback):
        return _frame(UNSUBACK, 0, _packet_id_bytes(p.packet_id))
    if isinstance(p, Pingreq):
        return _frame(PINGREQ, 0, b"")
    if isinstance(p, Pingresp):
        return _frame(PINGRESP, 0, b"")
    if isinstance(p, Disconnect):
        return _frame(DISCONNECT, 0, b"")
    raise TypeError(f"not a packet: {p!r}")


def _frame(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def _packet_id_bytes(packet_id: int) -> bytes:
    if not 1 <= packet_id <= 65535:
        raise Malformed(f"packet_id {packet_id} out of range")
    return struct.pack(">H", packet_id)


def decode_packet(data) -> tuple[Packet, int]:
    """Decode one packet from the head of ``data`` (bytes-like).

    Returns (packet, bytes consumed). Raises Truncated when more bytes are
    needed, Malformed / UnsupportedFeature on protocol errors.
    """
    view = memoryview(data)
    if len(view) < 2:
        raise Truncated()
    ptype = view[0] >> 4
    flags = view[0] & 0x0F
    length, rl_len = decode_remaining_length(view[1:])
    total = 1 + rl_len + length
    if len(view) < total:
        raise Truncated()
    body = _Reader(view[1 + rl_len : total])

    if ptype == PUBLISH:
        packet = _decode_publish(flags, body)
    else:
        if ptype in (PUBREC, PUBREL, PUBCOMP):
            raise UnsupportedFeature("qos 2 flow not in subset")
        if ptype == CONNECT:
            _expect_flags(flags, 0)
            packet = _decode_connect(body)
        elif ptype == CONNACK:
            _expect_flags(flags, 0)
            session_present = body.u8()
            if session_present > 1:
                raise Malformed("connack acknowledge flags invalid")
            packet = Connack(return_code=body.u8(), session_present=bool(session_present))
        elif ptype == PUBACK:
            _expect_flags(flags, 0)
            packet = Puback(packet_id=_nonzero(body.u16()))
        elif ptype == SUBSCRIBE:
            _expect_flags(flags, 0x02)
            packet = _decode_subscribe(body)
        elif ptype == SUBACK:
            _expect_flags(flags, 0)
            pid = _nonzero(body.u16())
            granted = tuple(body.rest())
            if not granted or any(g not in (0, 1, 2, SUBACK_FAILURE) for g in granted):
                raise Malformed("suback return codes invalid")
            packet = Suback(packet_id=pid, granted=granted)
        elif ptype == UNSUBSCRIBE:
            _expect_flags(flags, 0x02)
            pid = _nonzero(body.u16())
            filters = []
            while body.remaining:
                filt = body.utf8()
                _validate_filter(filt)
                filters.append(filt)
            if not filters:
                raise Malformed("unsubscribe carries no filters")
            packet = Unsubscribe(packet_id=pid, filters=tuple(filters))
        elif ptype == UNSUBACK:
            _expect_flags(flags, 0)
            packet = Unsuback(packet_id=_nonzero(body.u16()))
        elif ptype == PINGREQ:
            _expect_flags(flags, 0)
            packet = Pingreq()
        elif ptype == PINGRESP:
            _expect_flags(flags, 0)
            packet = Pingresp()
        elif ptype == DISCONNECT:
            _expect_flags(flags, 0)
            packet = Disconnect()
        else:
            raise Malformed(f"reserved packet type {ptype}")
        body.expect_end()
    return packet, total


def _expect_flags(flags: int, expected: int) -> None:
    if flags != expected:
        raise Malformed(f"fixed header flags {flags:#x} != {expected:#x}")


def _nonzero(packet_id: int) -> int:
    if packet_id == 0:
        raise Malformed("packet_id must be nonzero")
    return packet_id


def _decode_connect(body: _Reader) -> Connect:
    if body.utf8() != "MQTT":
        raise Malformed("bad protocol name")
    if body.u8() != 4:
        raise UnsupportedFeature("protocol level != 4")
    flags = body.u8()
    if flags & 0x01:
        raise Malformed("connect reserved flag set")
    if flags & 0xFC:
        raise UnsupportedFeature("will/credentials flags not in subset")
    if not flags & 0x02:
        raise UnsupportedFeature("persistent sessions not in subset")
    keep_alive = body.u16()
    client_id = body.utf8()
    body.expect_end()
    return Connect(client_id=client_id, keep_alive_s=keep_alive)


def _decode_publish(flags: int, body: _Reader) -> Publish:
    dup = bool(flags & 0x08)
    qos = (flags >> 1) & 0x03
    retain = bool(flags & 0x01)
    if qos == 3:
        raise Malformed("publish qos bits 0b11")
    if qos == 2:
        raise UnsupportedFeature("qos 2 not in subset")
    if retain:
        raise UnsupportedFeature("retained messages not in subset")
    if dup and qos == 0:
        raise Malformed("dup flag on qos 0 publish")
    topic = body.utf8()
    try:
        validate_topic_name(topic)
    except InvalidTopic as exc:
        raise Malformed(str(exc)) from None
    packet_id = _nonzero(body.u16()) if qos == 1 else None
    return Publish(topic=topic, payload=body.rest(), qos=qos, packet_id=packet_id, dup=dup)


def _decode_subscribe(body: _Reader) -> Subscribe:
    pid = _nonzero(body.u16())
    filters = []
    while body.remaining:
        filt = body.utf8()
        _validate_filter(filt)
        qos = body.u8()
        if qos not in (0, 1, 2):
            raise Malformed(f"requested qos byte {qos:#x} invalid")
        filters.append((filt, qos))
    if not filters:
        raise Malformed("subscribe carries no filters")
    return Subscribe(packet_id=pid, filters=tuple(filters))


def _validate_filter(filt: str) -> None:
    try:
        validate_topic_filter(filt)
    except InvalidTopic as exc:
        raise Malformed(str(exc)) from None
