from __future__ import annotations

import json
from pathlib import Path

import pytest

from cowrieqa import loggen, model, server

DATA = Path(__file__).parent / "data"


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@pytest.fixture(scope="session")
def golden():
    return read_jsonl(DATA / "golden_utilities.jsonl")


@pytest.fixture(scope="session")
def f1_cases():
    return read_jsonl(DATA / "f1_cases.jsonl")


@pytest.fixture(scope="session")
def small_labels():
    return loggen.collect_labels(loggen.GeneratorConfig(seed=11, n_sessions=600))


@pytest.fixture(scope="session")
def small_split(small_labels):
    unique = len({x.context for x in small_labels})
    return loggen.make_split(small_labels, loggen.proportional_sizes(unique), seed=0)


@pytest.fixture(scope="session")
def trained(small_split):
    return model.train(small_split.train, small_split.validation)


@pytest.fixture(scope="session")
def model_file(trained, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "model.json"
    model.save(trained[0], path)
    return path


@pytest.fixture
def rule_server():
    srv = server.start(("127.0.0.1", 0), backend="rule", workers=4)
    yield srv
    srv.stop()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
