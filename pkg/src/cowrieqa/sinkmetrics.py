"""Bulk NDJSON output and dashboard aggregates.

The bulk format is the Elasticsearch ``_bulk`` wire shape: an action line
``{"index": {"_index": ..., "_id": ...}}`` followed by the document line.
Using the deterministic ``doc_id`` as ``_id`` makes re-delivery idempotent.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import requests

from .schema import format_timestamp
from .transform import Document

log = logging.getLogger(__name__)

DEFAULT_INDEX = "cowrie"
BUCKET_HOURS = 12
TOP_K = 20


class EmptySamples(ValueError):
    pass


class HttpError(IOError):
    pass


# ---------------------------------------------------------------- bulk output

def bulk_lines(documents: Iterable[Document], index: str = DEFAULT_INDEX) -> List[str]:
    lines = []
    for doc in documents:
        lines.append(json.dumps({"index": {"_index": index, "_id": doc.doc_id}}, separators=(",", ":")))
        lines.append(json.dumps(doc.to_dict(), ensure_ascii=False, separators=(",", ":")))
    return lines


def bulk_payload(documents: Iterable[Document], index: str = DEFAULT_INDEX) -> str:
    lines = bulk_lines(documents, index)
    return "".join(line + "\n" for line in lines)


def write_bulk(documents: Sequence[Document], destination: str | Path, index: str = DEFAULT_INDEX,
               retries: int = 2, backoff_s: float = 0.5, dead_letter: str | Path | None = None,
               timeout_s: float = 30.0) -> int:
    """Append a bulk batch to a file, or POST it to an ``http(s)://.../_bulk`` URL.

    HTTP batches are retried; a batch that still fails goes to ``dead_letter``
    (when given) and :class:`HttpError` is raised.  Returns documents written.
    """
    if not documents:
        return 0
    payload = bulk_payload(documents, index)
    dest = str(destination)
    if not dest.startswith(("http://", "https://")):
        with open(dest, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
            fh.flush()
        return len(documents)

    last = ""
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff_s)
        try:
            resp = requests.post(dest, data=payload.encode("utf-8"), timeout=timeout_s,
                                 headers={"Content-Type": "application/x-ndjson"})
        except requests.RequestException as exc:
            last = str(exc)
            continue
        if resp.ok and not _bulk_has_errors(resp):
            return len(documents)
        last = f"HTTP {resp.status_code}"
    if dead_letter is not None:
        with open(dead_letter, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    raise HttpError(f"bulk write to {dest} failed: {last}")


def _bulk_has_errors(resp: requests.Response) -> bool:
    try:
        return bool(resp.json().get("errors"))
    except ValueError:
        return False


def read_bulk(path: str | Path, dedupe: bool = True) -> List[Document]:
    """Parse a bulk file back into documents; with ``dedupe`` the last copy of an ``_id`` wins."""
    docs: Dict[str, Document] = {}
    ordered: List[Document] = []
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if len(lines) % 2:
        raise ValueError(f"{path}: odd number of bulk lines")
    for action_line, doc_line in zip(lines[::2], lines[1::2]):
        action = json.loads(action_line)["index"]
        doc = Document.from_dict(json.loads(doc_line))
        if action["_id"] != doc.doc_id:
            raise ValueError(f"{path}: _id {action['_id']} does not match doc_id {doc.doc_id}")
        if dedupe:
            docs[doc.doc_id] = doc
        else:
            ordered.append(doc)
    return list(docs.values()) if dedupe else ordered


class BulkSink:
    """Batches documents for one destination; thread-safe single flusher."""

    def __init__(self, destination: str | Path, index: str = DEFAULT_INDEX, batch_size: int = 500,
                 dead_letter: str | Path | None = None):
        self.destination = destination
        self.index = index
        self.batch_size = batch_size
        self.dead_letter = dead_letter
        self.written = 0
        self._pending: List[Document] = []
        self._lock = threading.Lock()

    def add(self, doc: Document) -> None:
        with self._lock:
            self._pending.append(doc)
            if len(self._pending) >= self.batch_size:
                self._flush_locked()

    def flush(self) -> int:
        with self._lock:
            return self._flush_locked()

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._pending)

    def _flush_locked(self) -> int:
        batch, self._pending = self._pending, []
        try:
            n = write_bulk(batch, self.destination, self.index, dead_letter=self.dead_letter)
        except HttpError:
            if self.dead_letter is None:
                self._pending = batch + self._pending
            raise
        except OSError:
            # keep the batch so a later flush can retry it
            self._pending = batch + self._pending
            raise
        self.written += n
        return n


# ---------------------------------------------------------------- aggregates

@dataclass(frozen=True)
class LatencyStats:
    count: int
    mean_ms: float
    p95_ms: float
    p99_ms: float
    max_ms: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def nearest_rank(ordered: Sequence[float], pct: float) -> float:
    """``pct``-th percentile of an already sorted sequence.

    Rank is the smallest 1-based ``r`` with ``r / N > pct / 100``, i.e.
    ``floor(pct * N / 100) + 1`` clamped to ``N``.  This equals the classic
    ``ceil(pct * N / 100)`` except when ``pct * N / 100`` is a whole number,
    where it takes the next sample up: one 4000 ms outlier among 100
    requests is the p99.
    """
    n = len(ordered)
    # exact rational arithmetic; float 0.99 * 100 style products are not exact
    rank = math.floor(Fraction(str(pct)) * n / 100) + 1
    return float(ordered[min(rank, n) - 1])


def percentiles(samples: Sequence[float]) -> LatencyStats:
    if not samples:
        raise EmptySamples("no latency samples")
    if any(s < 0 or not math.isfinite(s) for s in samples):
        raise ValueError("latency samples must be finite and non-negative")
    ordered = sorted(float(s) for s in samples)
    return LatencyStats(
        count=len(ordered),
        mean_ms=math.fsum(ordered) / len(ordered),
        p95_ms=nearest_rank(ordered, 95),
        p99_ms=nearest_rank(ordered, 99),
        max_ms=ordered[-1],
    )


def top_k(counts: Mapping[str, int], k: int = TOP_K) -> List[Tuple[str, int]]:
    if k < 0:
        raise ValueError("k must be >= 0")
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def bucket_start(ts: datetime, width_s: int) -> int:
    """Start of the ``width_s`` bucket holding ``ts``, in epoch seconds (exact integer floor)."""
    return ((ts - _EPOCH) // timedelta(seconds=width_s)) * width_s


def bucket_volume(timestamps: Iterable[datetime], width_hours: float = BUCKET_HOURS) -> List[Tuple[datetime, int]]:
    width_s = int(round(width_hours * 3600))
    if width_s <= 0:
        raise ValueError("bucket width must be positive")
    counts = Counter(bucket_start(ts, width_s) for ts in timestamps)
    return [(datetime.fromtimestamp(start, timezone.utc), n) for start, n in sorted(counts.items())]


@dataclass
class DashboardReport:
    top_usernames: List[Tuple[str, int]]
    top_passwords: List[Tuple[str, int]]
    top_tools: List[Tuple[str, int]]
    volume_buckets: List[Tuple[datetime, int]]
    latency: Optional[LatencyStats]
    server_latency: Optional[LatencyStats] = None
    latency_buckets: List[Tuple[datetime, LatencyStats]] = field(default_factory=list)
    n_documents: int = 0
    n_enriched: int = 0
    n_inference_errors: int = 0
    bucket_hours: float = BUCKET_HOURS

    def to_dict(self) -> dict:
        return {
            "n_documents": self.n_documents,
            "n_enriched": self.n_enriched,
            "n_inference_errors": self.n_inference_errors,
            "bucket_hours": self.bucket_hours,
            "top_usernames": [list(x) for x in self.top_usernames],
            "top_passwords": [list(x) for x in self.top_passwords],
            "top_tools": [list(x) for x in self.top_tools],
            "volume_buckets": [[format_timestamp(ts), n] for ts, n in self.volume_buckets],
            "latency": self.latency.to_dict() if self.latency else None,
            "server_latency": self.server_latency.to_dict() if self.server_latency else None,
            "latency_buckets": [[format_timestamp(ts), s.to_dict()] for ts, s in self.latency_buckets],
        }

    def to_text(self) -> str:
        out: List[str] = []

        def table(title: str, rows: Sequence[Tuple[str, object]]) -> None:
            out.append(title)
            if not rows:
                out.append("  (none)")
            width = max((len(str(r[0])) for r in rows), default=0)
            for value, n in rows:
                out.append(f"  {str(value):<{width}}  {n}")
            out.append("")

        out.append(f"documents: {self.n_documents}  enriched: {self.n_enriched}  "
                   f"inference errors: {self.n_inference_errors}")
        out.append("")
        table(f"Top {len(self.top_usernames)} usernames", self.top_usernames)
        table(f"Top {len(self.top_passwords)} passwords", self.top_passwords)
        table(f"Top {len(self.top_tools)} predicted tools", self.top_tools)
        table(f"Log volume per {self.bucket_hours:g}h bucket",
              [(format_timestamp(ts), n) for ts, n in self.volume_buckets])
        for title, stats in (("Inference latency (client round trip)", self.latency),
                             ("Inference latency (server side)", self.server_latency)):
            if stats is None:
                out.append(f"{title}: no samples")
            else:
                out.append(f"{title}: n={stats.count} avg={stats.mean_ms:.2f}ms "
                           f"p95={stats.p95_ms:.2f}ms p99={stats.p99_ms:.2f}ms max={stats.max_ms:.2f}ms")
        return "\n".join(out) + "\n"


def render_report(documents: Iterable[Document], top: int = TOP_K,
                  bucket_hours: float = BUCKET_HOURS) -> DashboardReport:
    users: Counter = Counter()
    passwords: Counter = Counter()
    tools: Counter = Counter()
    stamps: List[datetime] = []
    client_lat: List[float] = []
    server_lat: List[float] = []
    lat_by_bucket: Dict[int, List[float]] = {}
    width_s = int(round(bucket_hours * 3600))
    n_enriched = n_err = 0
    for doc in documents:
        ev = doc.event
        stamps.append(ev.timestamp)
        if ev.eventid.startswith("cowrie.login."):
            if ev.username is not None:
                users[ev.username] += 1
            if ev.password is not None:
                passwords[ev.password] += 1
        if doc.predicted_tool is not None:
            n_enriched += 1
            tools[doc.predicted_tool] += 1
        if doc.inference_error is not None:
            n_err += 1
        if doc.inference_latency_ms is not None:
            client_lat.append(doc.inference_latency_ms)
            lat_by_bucket.setdefault(bucket_start(ev.timestamp, width_s), []).append(doc.inference_latency_ms)
        if doc.server_latency_ms is not None:
            server_lat.append(doc.server_latency_ms)
    return DashboardReport(
        top_usernames=top_k(users, top),
        top_passwords=top_k(passwords, top),
        top_tools=top_k(tools, top),
        volume_buckets=bucket_volume(stamps, bucket_hours),
        latency=percentiles(client_lat) if client_lat else None,
        server_latency=percentiles(server_lat) if server_lat else None,
        latency_buckets=[(datetime.fromtimestamp(b, timezone.utc), percentiles(v))
                         for b, v in sorted(lat_by_bucket.items())],
        n_documents=len(stamps),
        n_enriched=n_enriched,
        n_inference_errors=n_err,
        bucket_hours=bucket_hours,
    )


def write_report(report: DashboardReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
