"""Embedded publish/subscribe broker speaking an MQTT 3.1.1 subset over TCP.

Subset scope: QoS 0/1, clean sessions, no retained messages, no wills,
no auth, no TLS. Unsupported features are rejected loudly at decode time
rather than silently ignored.
"""

from testbed.broker.packets import (
    Connack,
    Connect,
    Disconnect,
    Malformed,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Subscribe,
    Suback,
    Truncated,
    Unsuback,
    Unsubscribe,
    UnsupportedFeature,
    decode_packet,
    encode_packet,
)
from testbed.broker.server import Broker, ProtocolViolation
from testbed.broker.topics import InvalidTopic, topic_matches

__all__ = [
    "Broker",
    "Connack",
    "Connect",
    "Disconnect",
    "InvalidTopic",
    "Malformed",
    "Pingreq",
    "Pingresp",
    "ProtocolViolation",
    "Puback",
    "Publish",
    "Suback",
    "Subscribe",
    "Truncated",
    "Unsuback",
    "Unsubscribe",
    "UnsupportedFeature",
    "decode_packet",
    "encode_packet",
    "topic_matches",
]
