"""Staged run loop: tail -> transform/infer -> bulk sink.

Stages are connected by bounded queues, so a slow inference server applies
back-pressure all the way to the tailer.  Offsets are committed only after
every line read so far has reached the sink, which keeps delivery
at-least-once across crashes.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
from urllib.parse import urlparse

from .ingest import DEFAULT_POLL_MS, Harvester, StateStore
from .model import load_extractor
from .sinkmetrics import BulkSink, DashboardReport, read_bulk, render_report
from .transform import DEFAULT_DROP_FIELDS, Document, HttpInference, LocalInference, TransformStats, process_line

log = logging.getLogger(__name__)

_STOP = object()


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    log_glob: str = "cowrie.json*"
    state_path: str = ".cowrieqa-tail-state.json"
    inference_url: Optional[str] = "http://127.0.0.1:8000"
    infer_timeout_ms: float = 5000.0
    infer_retries: int = 2
    infer_backoff_ms: float = 250.0
    backend: str = "perceptron"
    model_path: Optional[str] = None
    out_bulk: str = "bulk.ndjson"
    index: str = "cowrie"
    report_path: Optional[str] = "report.json"
    figures_dir: Optional[str] = None
    drop_fields: List[str] = field(default_factory=lambda: list(DEFAULT_DROP_FIELDS))
    poll_ms: int = DEFAULT_POLL_MS
    workers: int = 4
    queue_size: int = 1000
    batch_size: int = 500
    commit_every: int = 5000
    bucket_hours: float = 12.0
    top_k: int = 20
    seed: int = 0

    @classmethod
    def load(cls, path: Optional[str | Path] = None, **overrides: Any) -> "PipelineConfig":
        """Config file values, then any non-``None`` overrides on top."""
        data: Dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in overrides.items() if v is not None and k in known})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.inference_url:
            parsed = urlparse(self.inference_url)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise ConfigError(f"inference_url is not a valid http(s) URL: {self.inference_url!r}")
        elif self.backend == "perceptron" and not self.model_path:
            raise ConfigError("without inference_url, a model_path (or backend 'rule') is required")
        if self.backend not in ("perceptron", "rule"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        for name in ("poll_ms", "workers", "queue_size", "batch_size", "commit_every", "top_k"):
            if getattr(self, name) <= 0 and not (name == "top_k" and self.top_k == 0):
                raise ConfigError(f"{name} must be positive")
        if self.bucket_hours <= 0:
            raise ConfigError("bucket_hours must be positive")
        for name in ("state_path", "out_bulk", "report_path", "figures_dir", "model_path"):
            value = getattr(self, name)
            if value:
                setattr(self, name, str(Path(value).expanduser()))
        self.log_glob = str(Path(self.log_glob).expanduser())

    def to_dict(self) -> dict:
        return asdict(self)


def make_inference(cfg: PipelineConfig):
    if cfg.inference_url:
        return HttpInference(cfg.inference_url, cfg.infer_timeout_ms, cfg.infer_retries, cfg.infer_backoff_ms)
    return LocalInference(load_extractor(cfg.backend, cfg.model_path))


@dataclass
class RunResult:
    stats: TransformStats
    lines_read: int
    documents_written: int
    report: Optional[DashboardReport]


class Pipeline:
    def __init__(self, cfg: PipelineConfig, inference=None):
        self.cfg = cfg
        self.inference = inference if inference is not None else make_inference(cfg)
        self.harvester = Harvester(cfg.log_glob, StateStore(cfg.state_path))
        if not str(cfg.out_bulk).startswith(("http://", "https://")):
            Path(cfg.out_bulk).parent.mkdir(parents=True, exist_ok=True)
        self.sink = BulkSink(cfg.out_bulk, cfg.index, cfg.batch_size)
        self.stats = TransformStats()
        self._stats_lock = threading.Lock()
        self._in: "queue.Queue[Any]" = queue.Queue(maxsize=cfg.queue_size)
        self._out: "queue.Queue[Any]" = queue.Queue(maxsize=cfg.queue_size)
        self._done = threading.Condition()
        self.submitted = 0
        self.completed = 0
        # only needed to report on documents that went to a remote bulk endpoint
        self._keep_docs = str(cfg.out_bulk).startswith(("http://", "https://"))
        self.docs: List[Document] = []

    def _worker(self) -> None:
        local = TransformStats()
        while True:
            item = self._in.get()
            if item is _STOP:
                break
            try:
                doc, _ = process_line(item, self.inference, self.cfg.drop_fields, local)
            except Exception:
                log.exception("transform failed; dropping line")
                local.dropped += 1
                local.drop_reasons["transform_error"] = local.drop_reasons.get("transform_error", 0) + 1
                doc = None
            self._out.put(doc)
        with self._stats_lock:
            self.stats.merge(local)

    def _flush(self) -> None:
        try:
            self.sink.flush()
        except OSError:
            log.exception("bulk flush failed")

    def _sink_loop(self) -> None:
        while True:
            try:
                item = self._out.get(timeout=0.2)
            except queue.Empty:
                self._flush()
                continue
            if item is _STOP:
                break
            if item is not None:
                try:
                    self.sink.add(item)
                except OSError:
                    log.exception("bulk write failed")
                if self._keep_docs:
                    self.docs.append(item)
            with self._done:
                self.completed += 1
                self._done.notify_all()
        self._flush()

    def _commit(self) -> None:
        # offsets only advance once everything read so far is on the sink
        if self.sink.pending:
            log.warning("%d documents not yet written; offsets not committed", self.sink.pending)
            return
        self.harvester.commit()

    def _drain_and_commit(self) -> None:
        with self._done:
            self._done.wait_for(lambda: self.completed == self.submitted)
        self._flush()
        self._commit()

    def run(self, stop: Optional[threading.Event] = None, once: bool = False) -> RunResult:
        """Run until ``stop`` is set, or, with ``once``, until the logs are exhausted."""
        stop = stop or threading.Event()
        workers = [threading.Thread(target=self._worker, name=f"transform-{i}", daemon=True)
                   for i in range(self.cfg.workers)]
        sink = threading.Thread(target=self._sink_loop, name="sink", daemon=True)
        for t in workers + [sink]:
            t.start()
        since_commit = 0
        try:
            while not stop.is_set():
                batches = self.harvester.poll()
                for _, lines in batches:
                    for line in lines:
                        self._in.put(line)
                        self.submitted += 1
                        since_commit += 1
                if not batches:
                    self._drain_and_commit()
                    since_commit = 0
                    if once:
                        break
                    stop.wait(self.cfg.poll_ms / 1000.0)
                elif since_commit >= self.cfg.commit_every:
                    self._drain_and_commit()
                    since_commit = 0
        finally:
            for _ in workers:
                self._in.put(_STOP)
            for t in workers:
                t.join()
            self._out.put(_STOP)
            sink.join()
            self._commit()

        report = None
        if self.cfg.report_path or self.cfg.figures_dir:
            report = self.build_report()
        return RunResult(self.stats, self.submitted, self.sink.written, report)

    def build_report(self) -> DashboardReport:
        dest = str(self.cfg.out_bulk)
        if not dest.startswith(("http://", "https://")) and Path(dest).exists():
            docs: Sequence[Document] = read_bulk(dest)
        else:
            docs = self.docs
        return render_report(docs, self.cfg.top_k, self.cfg.bucket_hours)
