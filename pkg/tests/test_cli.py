import json
import os
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
import requests

from cowrieqa import plots, sinkmetrics
from cowrieqa.cli import main

from oracles import recount_bulk


def cli(*args, cwd=None, timeout=120):
    return subprocess.run([sys.executable, "-m", "cowrieqa", *map(str, args)], cwd=cwd, capture_output=True,
                          text=True, timeout=timeout)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    r = cli("gen", "--seed", 7, "--sessions", 300, "--days", 4, "--out", d / "c")
    assert r.returncode == 0, r.stderr
    r = cli("train", "--train", d / "c/split/train.jsonl", "--val", d / "c/split/validation.jsonl",
            "--model-path", d / "m.json", "--report-path", d / "train_report.json")
    assert r.returncode == 0, r.stderr
    return d


def test_gen_outputs(workdir):
    man = json.loads((workdir / "c/manifest.json").read_text())
    assert man["events"] > 0 and len(man["log_files"]) == 4
    sizes = [man["split"][k]["count"] for k in ("train", "validation", "test")]
    assert sum(sizes) == man["unique_commands"]


def test_gen_deterministic(workdir, tmp_path):
    r = cli("gen", "--seed", 7, "--sessions", 300, "--days", 4, "--out", tmp_path / "c")
    assert r.returncode == 0
    for p in sorted((workdir / "c").rglob("*")):
        if p.is_file():
            assert (tmp_path / "c" / p.relative_to(workdir / "c")).read_bytes() == p.read_bytes(), p


def test_train_report(workdir):
    rep = json.loads((workdir / "train_report.json").read_text())
    assert rep["epochs_run"] == 2 and len(rep["val_f1"]) == 2


def test_eval_all_correct(workdir, tmp_path):
    gold = workdir / "c/split/test.jsonl"
    rows = [json.loads(x) for x in gold.read_text().splitlines()]
    pred = tmp_path / "p.jsonl"
    pred.write_text("".join(json.dumps({"context": r["context"], "prediction": r["answer"]}) + "\n" for r in rows))
    r = cli("eval", "--pred", pred, "--gold", gold, "--report-path", tmp_path / "e.json")
    assert r.returncode == 0 and "mean_f1=1.00000" in r.stdout
    assert json.loads((tmp_path / "e.json").read_text())["mean_f1"] == 1.0


def test_eval_with_backend(workdir, tmp_path):
    r = cli("eval", "--backend", "rule", "--gold", workdir / "c/split/test.jsonl", "--out-pred", tmp_path / "p.jsonl")
    assert r.returncode == 0 and "mean_f1=1.00000" in r.stdout
    r = cli("eval", "--model-path", workdir / "m.json", "--gold", workdir / "c/split/test.jsonl")
    assert r.returncode == 0 and "mean_f1=" in r.stdout


@pytest.mark.parametrize("args, needle", [
    (["eval", "--gold", "/nonexistent.jsonl", "--backend", "rule"], "cannot read"),
    (["eval", "--gold", "/dev/null", "--model-path", "/nonexistent.json"], "cannot load model"),
    (["run", "--inference-url", "ftp://x"], "inference_url"),
    (["run", "--config", "/nonexistent.json"], "cannot read config"),
    (["serve", "--bind", "127.0.0.1:1", "--model-path", "/nonexistent.json"], "cannot start server"),
])
def test_failures_are_one_line(args, needle):
    r = cli(*args)
    assert r.returncode != 0
    lines = r.stderr.strip().splitlines()
    assert len(lines) == 1 and needle in lines[0], r.stderr


def test_usage_error_exit_code():
    assert cli("gen", "--split-sizes", "1,2").returncode == 2
    assert cli().returncode == 2


def test_run_local_and_report(workdir, tmp_path):
    r = cli("run", "--log-glob", workdir / "c/logs/cowrie.json*", "--state-path", tmp_path / "st.json",
            "--local", "--backend", "rule", "--out-bulk", tmp_path / "b.ndjson",
            "--report-path", tmp_path / "out/report.json", "--once", "--top-k", 5)
    assert r.returncode == 0, r.stderr
    report = json.loads((tmp_path / "out/report.json").read_text())
    rc = recount_bulk(tmp_path / "b.ndjson", top=5)
    assert report["top_usernames"] == rc["top_usernames"] and report["top_tools"] == rc["top_tools"]
    assert sorted(p.name for p in (tmp_path / "out").glob("*.png")) == sorted(
        f"report_{n}.png" for n in plots.PANEL_NAMES)
    assert "Top 5 usernames" in r.stdout
    r = cli("report", "--bulk", tmp_path / "b.ndjson", "--report-path", tmp_path / "r2.json",
            "--figures-dir", tmp_path / "figs", "--top-k", 5)
    assert r.returncode == 0
    assert json.loads((tmp_path / "r2.json").read_text()) == report
    assert len(list((tmp_path / "figs").glob("*.png"))) == len(plots.PANEL_NAMES)


def test_run_config_file(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"log_glob": str(workdir / "c/logs/cowrie.json*"), "state_path": str(tmp_path / "s"),
                               "inference_url": "", "backend": "rule", "out_bulk": str(tmp_path / "b.ndjson"),
                               "report_path": None}))
    r = cli("run", "--config", cfg, "--once", "--no-figures")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "b.ndjson").exists() and not list(tmp_path.glob("*.png"))


def test_run_server_down_then_sigint(workdir, tmp_path):
    """No server listening: documents still land, flagged, and SIGINT exits cleanly."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "cowrieqa", "run", "--log-glob", str(workdir / "c/logs/cowrie.json*"),
         "--state-path", str(tmp_path / "st.json"), "--inference-url", f"http://127.0.0.1:{free_port()}",
         "--infer-retries", "0", "--infer-timeout-ms", "200", "--out-bulk", str(tmp_path / "b.ndjson"),
         "--report-path", str(tmp_path / "r.json"), "--no-figures", "--poll-ms", "50"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    man = json.loads((workdir / "c/manifest.json").read_text())
    deadline = time.time() + 60
    while time.time() < deadline:
        if (tmp_path / "st.json").exists():
            break
        time.sleep(0.1)
    proc.send_signal(signal.SIGINT)
    out, err = proc.communicate(timeout=60)
    assert proc.returncode == 0, err
    docs = sinkmetrics.read_bulk(tmp_path / "b.ndjson")
    assert len(docs) == man["events"]
    cmds = [d for d in docs if d.eventid == "cowrie.command.input"]
    assert len(cmds) == man["commands"] and all(d.inference_error for d in cmds)
    assert json.loads((tmp_path / "r.json").read_text())["n_inference_errors"] == len(cmds)


def test_serve_sigterm(workdir):
    port = free_port()
    proc = subprocess.Popen([sys.executable, "-m", "cowrieqa", "serve", "--bind", f"127.0.0.1:{port}",
                             "--model-path", str(workdir / "m.json")], stdout=subprocess.PIPE, text=True)
    try:
        assert "serving" in proc.stdout.readline()
        r = requests.post(f"http://127.0.0.1:{port}/infer", json={"command": "uname -a"}, timeout=5)
        assert r.json()["prediction"] == "uname"
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=20) == 0


def test_main_in_process(workdir, tmp_path, capsys):
    assert main(["eval", "--backend", "rule", "--gold", str(workdir / "c/split/test.jsonl")]) == 0
    assert "mean_f1=1.00000" in capsys.readouterr().out
