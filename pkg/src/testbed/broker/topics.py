"""Topic name/filter validation and wildcard matching (MQTT 3.1.1 rules)."""

from __future__ import annotations


class InvalidTopic(ValueError):
    pass


MAX_TOPIC_BYTES = 65535


def validate_topic_name(name: str) -> None:
    """Topic names carry no wildcards: non-empty, no '+', '#' or NUL."""
    _validate_common(name)
    if "+" in name or "#" in name:
        raise InvalidTopic(f"wildcards not allowed in topic name: {name!r}")


def validate_topic_filter(filt: str) -> None:
    """'+' must occupy an entire level; '#' an entire level, and only the last."""
    _validate_common(filt)
    levels = filt.split("/")
    for i, level in enumerate(levels):
        if "#" in level:
            if level != "#":
                raise InvalidTopic(f"'#' must occupy an entire level: {filt!r}")
            if i != len(levels) - 1:
                raise InvalidTopic(f"'#' only allowed as the last level: {filt!r}")
        if "+" in level and level != "+":
            raise InvalidTopic(f"'+' must occupy an entire level: {filt!r}")


def _validate_common(topic: str) -> None:
    if not topic:
        raise InvalidTopic("topic must be non-empty")
    if "\x00" in topic:
        raise InvalidTopic("topic must not contain NUL")
    if len(topic.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise InvalidTopic("topic exceeds 65535 bytes")


def topic_matches(filt: str, name: str) -> bool:
    """Level-wise match: '+' matches exactly one level, '#' the remaining
    zero or more levels (so "a/#" matches "a")."""
    flevels = filt.split("/")
    nlevels = name.split("/")
    for i, f in enumerate(flevels):
        if f == "#":
            return True
        if i >= len(nlevels):
            return False
        if f != "+" and f != nlevels[i]:
            return False
    return len(nlevels) == len(flevels)
