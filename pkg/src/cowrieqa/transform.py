"""Per-event transformation: normalize, route to inference, enrich."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Sequence, Tuple

import requests

from .model import Extractor, Prediction
from .schema import (
    CowrieEvent,
    EventError,
    FIELD_ORDER,
    event_from_dict,
    extract_command,
    format_timestamp,
    parse_event,
    parse_timestamp,
)

log = logging.getLogger(__name__)

# keys Filebeat adds about where the line came from
DEFAULT_DROP_FIELDS = ("log.file.path", "log.offset", "log", "source", "offset", "input.type", "agent", "ecs", "host")

_DOC_FIELDS = (
    "doc_id", "pipeline_ts", "predicted_tool", "prediction_score", "inference_latency_ms",
    "server_latency_ms", "model_version", "inference_error", "unparseable_command", "score_clamped",
)


@dataclass(frozen=True)
class Document:
    event: CowrieEvent
    doc_id: str
    pipeline_ts: datetime
    predicted_tool: Optional[str] = None
    prediction_score: Optional[float] = None
    inference_latency_ms: Optional[float] = None
    server_latency_ms: Optional[float] = None
    model_version: Optional[str] = None
    inference_error: Optional[str] = None
    unparseable_command: bool = False
    score_clamped: bool = False

    @property
    def eventid(self) -> str:
        return self.event.eventid

    @property
    def timestamp(self) -> datetime:
        return self.event.timestamp

    @property
    def enriched(self) -> bool:
        return self.predicted_tool is not None

    def to_dict(self) -> Dict[str, Any]:
        out = self.event.to_dict()
        out["doc_id"] = self.doc_id
        out["pipeline_ts"] = format_timestamp(self.pipeline_ts)
        for name in _DOC_FIELDS[2:]:
            value = getattr(self, name)
            if value not in (None, False):
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "Document":
        event_part = {k: v for k, v in obj.items() if k not in _DOC_FIELDS}
        kwargs = {k: obj[k] for k in _DOC_FIELDS[2:] if k in obj}
        return cls(
            event=event_from_dict(event_part),
            doc_id=obj["doc_id"],
            pipeline_ts=parse_timestamp(obj["pipeline_ts"]),
            **kwargs,
        )


def document_id(event: CowrieEvent) -> str:
    """Stable id from session, canonical timestamp, eventid and input."""
    key = "\x1f".join((event.session, format_timestamp(event.timestamp), event.eventid, event.input or ""))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:32]


def normalize(event: CowrieEvent, drop_fields: Sequence[str] = DEFAULT_DROP_FIELDS,
              now: Optional[datetime] = None) -> Document:
    drop = set(drop_fields)
    event = dataclasses.replace(
        event,
        timestamp=event.timestamp.astimezone(timezone.utc),
        extra={k: v for k, v in event.extra.items() if k not in drop},
    )
    return Document(event=event, doc_id=document_id(event), pipeline_ts=now or datetime.now(timezone.utc))


@dataclass(frozen=True)
class ToInference:
    command: str


@dataclass(frozen=True)
class Direct:
    unparseable_command: bool = False


@dataclass(frozen=True)
class Drop:
    reason: str


RouteDecision = ToInference | Direct | Drop


def route(document: Document) -> RouteDecision:
    ev = document.event
    if not ev.eventid or ev.timestamp.tzinfo is None:
        return Drop("invalid event")
    if ev.eventid != "cowrie.command.input":
        return Direct()
    try:
        return ToInference(extract_command(ev))
    except EventError:
        return Direct(unparseable_command=True)


def enrich(document: Document, prediction: Prediction, latency_ms: float,
           server_latency_ms: Optional[float] = None, model_version: Optional[str] = None) -> Document:
    score = prediction.score
    clamped = not 0.0 <= score <= 1.0
    if clamped:
        log.warning("clamping out-of-range score %r for %s", score, document.doc_id)
        score = min(1.0, max(0.0, score))
    return dataclasses.replace(
        document,
        predicted_tool=prediction.answer,
        prediction_score=score,
        inference_latency_ms=max(0.0, float(latency_ms)),
        server_latency_ms=server_latency_ms,
        model_version=model_version,
        inference_error=None,
        score_clamped=clamped,
    )


def mark_failed(document: Document, error: str) -> Document:
    return dataclasses.replace(document, inference_error=error)


class InferenceFailed(Exception):
    pass


@dataclass
class InferenceResult:
    prediction: Prediction
    latency_ms: float
    server_latency_ms: Optional[float] = None
    model_version: Optional[str] = None


class LocalInference:
    """Calls an in-process extractor; used when no server is configured."""

    def __init__(self, extractor: Extractor):
        self.extractor = extractor

    def infer(self, command: str) -> InferenceResult:
        t0 = time.perf_counter()
        try:
            pred = self.extractor.predict(command)
        except Exception as exc:  # backend fault must not kill the worker
            raise InferenceFailed(f"local inference failed: {exc}") from exc
        return InferenceResult(pred, (time.perf_counter() - t0) * 1000.0, model_version=self.extractor.version)


class HttpInference:
    """Client for the inference server's ``POST /infer`` endpoint.

    Connection errors, timeouts and 5xx answers are retried ``retries`` times
    with a fixed backoff; 4xx answers are final.
    """

    def __init__(self, url: str, timeout_ms: float = 5000, retries: int = 2, backoff_ms: float = 250):
        self.url = url.rstrip("/") + "/infer" if not url.rstrip("/").endswith("/infer") else url
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self.backoff = backoff_ms / 1000.0
        self._local = threading.local()

    def _session(self) -> requests.Session:
        sess = getattr(self._local, "session", None)
        if sess is None:
            sess = self._local.session = requests.Session()
        return sess

    def infer(self, command: str) -> InferenceResult:
        last = "unknown error"
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff)
            t0 = time.perf_counter()
            try:
                resp = self._session().post(self.url, json={"command": command}, timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            latency = (time.perf_counter() - t0) * 1000.0
            if resp.status_code == 200:
                try:
                    body = resp.json()
                    pred = Prediction(str(body["prediction"]), float(body["score"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise InferenceFailed(f"bad response body: {exc}") from exc
                return InferenceResult(pred, latency, body.get("latency_ms"), body.get("model_version"))
            last = f"HTTP {resp.status_code}: {_error_text(resp)}"
            if resp.status_code < 500:
                break
        raise InferenceFailed(last)


def _error_text(resp: requests.Response) -> str:
    try:
        return str(resp.json().get("error", ""))
    except ValueError:
        return resp.text[:200]


@dataclass
class TransformStats:
    inputs: int = 0
    direct: int = 0
    to_inference: int = 0
    dropped: int = 0
    enriched: int = 0
    inference_errors: int = 0
    drop_reasons: Dict[str, int] = field(default_factory=dict)

    def merge(self, other: "TransformStats") -> None:
        for f in ("inputs", "direct", "to_inference", "dropped", "enriched", "inference_errors"):
            setattr(self, f, getattr(self, f) + getattr(other, f))
        for k, v in other.drop_reasons.items():
            self.drop_reasons[k] = self.drop_reasons.get(k, 0) + v


def process_line(line: str, inference, drop_fields: Sequence[str] = DEFAULT_DROP_FIELDS,
                 stats: Optional[TransformStats] = None) -> Tuple[Optional[Document], RouteDecision]:
    """Parse, normalize, route and (if routed) enrich one raw log line.

    Unparseable lines come back as ``(None, Drop(reason))``.
    """
    stats = stats if stats is not None else TransformStats()
    stats.inputs += 1
    try:
        event = parse_event(line)
    except EventError as exc:
        decision: RouteDecision = Drop(type(exc).__name__)
        stats.dropped += 1
        stats.drop_reasons[decision.reason] = stats.drop_reasons.get(decision.reason, 0) + 1
        return None, decision
    doc = normalize(event, drop_fields)
    decision = route(doc)
    if isinstance(decision, Drop):
        stats.dropped += 1
        stats.drop_reasons[decision.reason] = stats.drop_reasons.get(decision.reason, 0) + 1
        return None, decision
    if isinstance(decision, Direct):
        stats.direct += 1
        if decision.unparseable_command:
            doc = dataclasses.replace(doc, unparseable_command=True)
        return doc, decision
    stats.to_inference += 1
    try:
        result = inference.infer(decision.command)
    except InferenceFailed as exc:
        stats.inference_errors += 1
        return mark_failed(doc, str(exc)), decision
    stats.enriched += 1
    return enrich(doc, result.prediction, result.latency_ms, result.server_latency_ms, result.model_version), decision


__all__ = [
    "Document", "normalize", "route", "enrich", "mark_failed", "document_id", "ToInference", "Direct", "Drop",
    "RouteDecision", "HttpInference", "LocalInference", "InferenceFailed", "InferenceResult", "TransformStats",
    "process_line", "DEFAULT_DROP_FIELDS", "FIELD_ORDER",
]
