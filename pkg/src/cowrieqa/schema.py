"""Cowrie JSON event model.

Cowrie writes one JSON object per line.  Only a handful of attributes are
modelled explicitly; everything else is carried verbatim in ``extra`` so the
pipeline never silently drops data.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Dict, Optional, Union


class EventKind(str, Enum):
    SESSION_CONNECT = "cowrie.session.connect"
    LOGIN_SUCCESS = "cowrie.login.success"
    LOGIN_FAILED = "cowrie.login.failed"
    COMMAND_INPUT = "cowrie.command.input"
    COMMAND_FAILED = "cowrie.command.failed"
    SESSION_CLOSED = "cowrie.session.closed"
    OTHER = "other"

    @classmethod
    def of(cls, eventid: str) -> "EventKind":
        try:
            return cls(eventid)
        except ValueError:
            return cls.OTHER


class EventError(ValueError):
    """Base class for event parsing failures."""


class MalformedJson(EventError):
    pass


class MissingField(EventError):
    def __init__(self, name: str):
        super().__init__(f"missing required field: {name}")
        self.field = name


class BadTimestamp(EventError):
    pass


class NotCommandEvent(EventError):
    pass


class EmptyCommand(EventError):
    pass


# serialization order; extra fields follow
FIELD_ORDER = ("eventid", "timestamp", "session", "src_ip", "sensor", "message", "input", "username", "password")
_OPTIONAL = ("input", "username", "password")
CMD_PREFIX = "CMD: "

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[T ](\d{2}):(\d{2}):(\d{2})"
    r"(?:[.,](\d{1,9}))?"
    r"(Z|z|[+-]\d{2}(?::?\d{2})?)?$"
)


def parse_timestamp(text: str) -> datetime:
    """Parse ISO8601 text into an aware datetime.

    Fractional seconds beyond microseconds are truncated; a missing offset is
    read as UTC.
    """
    if not isinstance(text, str):
        raise BadTimestamp(f"timestamp must be a string, got {type(text).__name__}")
    m = _TS_RE.match(text.strip())
    if m is None:
        raise BadTimestamp(f"unparseable timestamp: {text!r}")
    year, month, day, hour, minute, second, frac, tz = m.groups()
    micro = int((frac or "0")[:6].ljust(6, "0"))
    if tz is None or tz in ("Z", "z"):
        tzinfo = timezone.utc
    else:
        sign = -1 if tz[0] == "-" else 1
        digits = tz[1:].replace(":", "")
        hours, minutes = int(digits[:2]), int(digits[2:] or 0)
        try:
            tzinfo = timezone(sign * timedelta(hours=hours, minutes=minutes))
        except ValueError as exc:
            raise BadTimestamp(f"bad utc offset in {text!r}") from exc
    try:
        ts = datetime(int(year), int(month), int(day), int(hour), int(minute), int(second), micro, tzinfo)
        ts.astimezone(timezone.utc)
    except (ValueError, OverflowError) as exc:
        raise BadTimestamp(f"invalid date in {text!r}: {exc}") from exc
    return ts


def format_timestamp(ts: datetime) -> str:
    """Canonical form: UTC, 6 fractional digits, ``Z`` suffix."""
    u = ts.astimezone(timezone.utc)
    return (
        f"{u.year:04d}-{u.month:02d}-{u.day:02d}T"
        f"{u.hour:02d}:{u.minute:02d}:{u.second:02d}.{u.microsecond:06d}Z"
    )


@dataclass(frozen=True)
class CowrieEvent:
    eventid: str
    timestamp: datetime
    session: str = ""
    src_ip: str = ""
    sensor: str = ""
    message: str = ""
    input: Optional[str] = None
    username: Optional[str] = None
    password: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> EventKind:
        return EventKind.of(self.eventid)

    @property
    def is_command(self) -> bool:
        return self.eventid.startswith("cowrie.command.")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name in FIELD_ORDER:
            value = getattr(self, name)
            if name == "timestamp":
                value = format_timestamp(value)
            elif name in _OPTIONAL and value is None:
                continue
            out[name] = value
        out.update(self.extra)
        return out


def event_from_dict(obj: Dict[str, Any]) -> CowrieEvent:
    if not isinstance(obj, dict):
        raise MalformedJson(f"expected a JSON object, got {type(obj).__name__}")
    for required in ("eventid", "timestamp"):
        if obj.get(required) in (None, ""):
            raise MissingField(required)
    if not isinstance(obj["eventid"], str):
        raise MalformedJson("eventid must be a string")
    known: Dict[str, Any] = {}
    for name in FIELD_ORDER[2:]:
        value = obj.get(name)
        if value is None:
            continue
        if not isinstance(value, str):
            raise MalformedJson(f"field {name!r} must be a string")
        known[name] = value
    extra = {k: v for k, v in obj.items() if k not in FIELD_ORDER}
    return CowrieEvent(
        eventid=obj["eventid"],
        timestamp=parse_timestamp(obj["timestamp"]),
        extra=extra,
        **known,
    )


def parse_event(line: Union[str, bytes]) -> CowrieEvent:
    """Parse one Cowrie JSON log line.

    Raises a subclass of :class:`EventError` for any bad input, including
    undecodable bytes.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(line)
    except (ValueError, RecursionError) as exc:
        raise MalformedJson(str(exc)) from exc
    return event_from_dict(obj)


def serialize_event(event: CowrieEvent) -> str:
    return json.dumps(event.to_dict(), ensure_ascii=False, separators=(",", ":"))


def extract_command(event: CowrieEvent) -> str:
    """Recover the attacker's command line from a command event.

    ``input`` wins when present; otherwise a ``"CMD: "`` message prefix is
    stripped.  No other recovery is attempted.
    """
    if not event.is_command:
        raise NotCommandEvent(event.eventid)
    if event.input is not None and event.input.strip():
        return event.input
    if event.input is None and event.message.startswith(CMD_PREFIX):
        command = event.message[len(CMD_PREFIX):]
        if command.strip():
            return command
    raise EmptyCommand(f"no command text in {event.eventid} event")
