import json
import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowrieqa.model import Prediction
from cowrieqa.schema import CowrieEvent
from cowrieqa.sinkmetrics import (
    BulkSink, EmptySamples, bucket_volume, bulk_payload, nearest_rank, percentiles, read_bulk, render_report,
    top_k, write_bulk, write_report,
)
from cowrieqa.transform import enrich, normalize

from oracles import sort_percentile

T0 = datetime(2019, 5, 1, tzinfo=timezone.utc)


def _doc(i, eventid="cowrie.command.input", **kw):
    ev = CowrieEvent(eventid, T0 + timedelta(minutes=i), session=f"s{i}", input="ls" if "command" in eventid else None,
                     **kw)
    return normalize(ev, now=T0)


def test_bulk_shape(tmp_path):
    docs = [_doc(0), _doc(1)]
    payload = bulk_payload(docs)
    assert payload.endswith("\n") and payload.count("\n") == 4
    assert json.loads(payload.splitlines()[0]) == {"index": {"_index": "cowrie", "_id": docs[0].doc_id}}
    assert write_bulk([], tmp_path / "b") == 0 and not (tmp_path / "b").exists()


def test_bulk_round_trip_and_dedupe(tmp_path):
    docs = [enrich(_doc(i), Prediction("ls", 0.9), 1.5) for i in range(5)]
    path = tmp_path / "bulk.ndjson"
    write_bulk(docs, path)
    write_bulk(docs, path)
    assert read_bulk(path) == docs
    assert len(read_bulk(path, dedupe=False)) == 10


def test_bulk_sink_batches(tmp_path):
    sink = BulkSink(tmp_path / "b", batch_size=3)
    for i in range(7):
        sink.add(_doc(i))
    assert sink.written == 6
    sink.flush()
    assert sink.written == 7 and len(read_bulk(tmp_path / "b")) == 7


def test_percentile_examples():
    s = percentiles([1, 2, 3, 4])
    assert s.p95_ms == 4.0
    s = percentiles([5])
    assert (s.mean_ms, s.p95_ms, s.p99_ms, s.max_ms) == (5.0, 5.0, 5.0, 5.0)
    samples = [10.0] * 99 + [4000.0]
    random.Random(0).shuffle(samples)
    assert percentiles(samples).p99_ms == 4000.0
    with pytest.raises(EmptySamples):
        percentiles([])
    with pytest.raises(ValueError):
        percentiles([1.0, float("nan")])


def test_percentiles_against_oracle():
    rng = random.Random(1)
    for _ in range(1000):
        xs = [rng.choice([rng.random() * 100, float(rng.randint(0, 5))]) for _ in range(rng.randint(1, 60))]
        s = percentiles(xs)
        assert s.p95_ms == sort_percentile(xs, 95) and s.p99_ms == sort_percentile(xs, 99)
        assert s.max_ms == max(xs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50), st.integers(0, 100))
def test_nearest_rank_is_a_sample_and_monotone(xs, pct):
    ordered = sorted(xs)
    v = nearest_rank(ordered, pct)
    assert v in ordered
    assert nearest_rank(ordered, min(100, pct + 1)) >= v


def test_top_k():
    assert top_k({"a": 3, "b": 1, "c": 3}, 2) == [("a", 3), ("c", 3)]
    assert top_k({}, 5) == [] and top_k({"a": 1}, 0) == []


def test_buckets():
    day = datetime(2019, 5, 1, tzinfo=timezone.utc)
    assert bucket_volume([day + timedelta(minutes=1), day + timedelta(hours=11, minutes=59)]) == [(day, 2)]
    assert bucket_volume([day + timedelta(hours=12)]) == [(day + timedelta(hours=12), 1)]
    assert bucket_volume([]) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2030, 1, 1),
                             timezones=st.just(timezone.utc)), max_size=40))
def test_bucket_sum_is_total(stamps):
    buckets = bucket_volume(stamps)
    assert sum(n for _, n in buckets) == len(stamps)
    assert all(b.hour in (0, 12) and b.minute == 0 for b, _ in buckets)


def test_report_counts(tmp_path):
    docs = [_doc(0, "cowrie.login.failed", username="root", password="1"),
            _doc(1, "cowrie.login.success", username="root", password="2"),
            _doc(2, "cowrie.login.failed", username="admin", password="1"),
            enrich(_doc(3), Prediction("wget", 1.0), 4.0),
            _doc(4, "cowrie.session.connect")]
    r = render_report(docs)
    assert r.top_usernames == [("root", 2), ("admin", 1)]
    assert r.top_passwords == [("1", 2), ("2", 1)]
    assert r.top_tools == [("wget", 1)]
    assert r.latency.count == 1 and r.n_documents == 5
    write_report(r, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["top_usernames"] == [["root", 2], ["admin", 1]]
    assert "Top 2 usernames" in r.to_text()


def test_report_no_logins():
    r = render_report([_doc(0, "cowrie.session.connect")])
    assert r.top_usernames == [] and r.latency is None
