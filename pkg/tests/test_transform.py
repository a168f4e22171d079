import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowrieqa import loggen
from cowrieqa.model import Prediction, RuleExtractor
from cowrieqa.schema import parse_event, serialize_event
from cowrieqa.transform import (
    Direct, Document, Drop, HttpInference, InferenceFailed, LocalInference, ToInference, TransformStats,
    document_id, enrich, mark_failed, normalize, process_line, route,
)

CMD = ('{"eventid":"cowrie.command.input","timestamp":"2019-05-01T10:00:00+02:00","session":"s1",'
       '"input":"wget x","message":"CMD: wget x","log.file.path":"/var/log/cowrie.json","ttylog":"t"}')


def test_normalize_drops_and_converts():
    doc = normalize(parse_event(CMD))
    d = doc.to_dict()
    assert "log.file.path" not in d and d["ttylog"] == "t"
    assert doc.timestamp == datetime(2019, 5, 1, 8, tzinfo=timezone.utc)
    assert d["timestamp"] == "2019-05-01T08:00:00.000000Z"
    assert normalize(parse_event(CMD)).doc_id == doc.doc_id


def test_doc_id_ignores_timezone_spelling():
    a = parse_event(CMD)
    b = parse_event(CMD.replace("10:00:00+02:00", "08:00:00Z"))
    assert document_id(a) == document_id(b)
    assert document_id(a) != document_id(parse_event(CMD.replace('"s1"', '"s2"')))


def _doc(line):
    return normalize(parse_event(line))


def test_route():
    assert route(_doc(CMD)) == ToInference("wget x")
    assert route(_doc('{"eventid":"cowrie.login.failed","timestamp":"2019-05-01T10:00:00Z"}')) == Direct()
    empty = _doc('{"eventid":"cowrie.command.input","timestamp":"2019-05-01T10:00:00Z","input":"  "}')
    assert route(empty) == Direct(unparseable_command=True)


def test_enrich_and_clamp():
    doc = _doc(CMD)
    out = enrich(doc, Prediction("wget", 0.97), 12.5)
    assert (out.predicted_tool, out.prediction_score, out.inference_latency_ms) == ("wget", 0.97, 12.5)
    assert not out.score_clamped
    clamped = enrich(doc, Prediction("wget", 1.7), 1.0)
    assert clamped.prediction_score == 1.0 and clamped.score_clamped
    assert clamped.to_dict()["score_clamped"] is True
    failed = mark_failed(doc, "down")
    assert failed.inference_error == "down" and failed.predicted_tool is None


def test_document_dict_round_trip():
    doc = enrich(_doc(CMD), Prediction("wget", 0.5), 3.0, 0.1, "v1")
    assert Document.from_dict(json.loads(json.dumps(doc.to_dict()))) == doc


class Broken:
    version = "broken"

    def predict(self, context):
        raise RuntimeError("boom")


def test_process_line_paths():
    local = LocalInference(RuleExtractor())
    stats = TransformStats()
    doc, dec = process_line(CMD, local, stats=stats)
    assert isinstance(dec, ToInference) and doc.predicted_tool == "wget"
    doc, dec = process_line("garbage", local, stats=stats)
    assert doc is None and isinstance(dec, Drop)
    doc, _ = process_line(CMD, LocalInference(Broken()), stats=stats)
    assert doc.inference_error and doc.predicted_tool is None
    assert (stats.inputs, stats.to_inference, stats.dropped, stats.enriched, stats.inference_errors) == (3, 2, 1, 1, 1)


def test_http_inference_unreachable():
    client = HttpInference("http://127.0.0.1:9", timeout_ms=200, retries=1, backoff_ms=10)
    with pytest.raises(InferenceFailed):
        client.infer("ls")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 999), st.lists(st.text(max_size=30), max_size=3))
def test_conservation(index, junk):
    events = loggen.generate_session(loggen.GeneratorConfig(seed=5), index)
    lines = [serialize_event(e) for e in events] + junk
    stats = TransformStats()
    local = LocalInference(RuleExtractor())
    docs = [process_line(line, local, stats=stats)[0] for line in lines]
    assert stats.inputs == stats.direct + stats.to_inference + stats.dropped == len(lines)
    assert stats.to_inference == stats.enriched + stats.inference_errors
    for d in docs:
        if d is not None and d.eventid == "cowrie.command.input" and not d.unparseable_command:
            assert d.predicted_tool is not None or d.inference_error is not None
    assert route(normalize(events[0])) == route(normalize(events[0]))
