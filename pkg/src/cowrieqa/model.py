"""Utility extraction as extractive QA: the context is a command line, the
answer is the utility (or utilities) it invokes.

Two interchangeable backends implement :class:`Extractor`:

* :class:`RuleExtractor` wraps the lexer oracle.
* :class:`ExtractorModel` is an averaged perceptron that scores every token of
  a segment with eight binary features plus a per-token identity weight and
  picks the argmax.  When the chosen token is a wrapper prefix the decision is
  repeated over the tokens to its right, mirroring the oracle's convention.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterator, List, Optional, Protocol, Sequence, Tuple

from . import lexer
from .qaeval import evaluate

F_HEAD = "F_HEAD"
F_VOCAB = "F_VOCAB"
F_SLASH = "F_SLASH"
F_ASSIGN = "F_ASSIGN"
F_FLAG = "F_FLAG"
F_AFTER_WRAPPER = "F_AFTER_WRAPPER"
F_URL = "F_URL"
F_LINE_FIRST = "F_LINE_FIRST"
FEATURES = (F_HEAD, F_VOCAB, F_SLASH, F_ASSIGN, F_FLAG, F_AFTER_WRAPPER, F_URL, F_LINE_FIRST)

FORMAT_NAME = "cowrieqa-extractor"
FORMAT_VERSION = 1


class ModelError(Exception):
    pass


class EmptyTrainingSet(ModelError):
    pass


class UntrainedModel(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptModel(ModelError):
    pass


@dataclass(frozen=True)
class Prediction:
    answer: str
    score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer", " ".join(self.answer.split()))
        if not math.isfinite(self.score):
            raise ValueError("prediction score must be finite")


class Extractor(Protocol):
    version: str

    def predict(self, context: str) -> Prediction: ...


class RuleExtractor:
    """The lexer oracle behind the extractor interface (score is always 1)."""

    version = "rule-oracle-1"

    def predict(self, context: str) -> Prediction:
        answer = lexer.label(context)
        return Prediction(answer, 1.0 if answer else 0.0)


@dataclass(frozen=True)
class TokenFeatures:
    token: str
    name: str
    features: Tuple[str, ...]


def featurize(context: str, vocab: FrozenSet[str] = frozenset()) -> List[List[TokenFeatures]]:
    """Binary features for every token, grouped by segment."""
    out: List[List[TokenFeatures]] = []
    first_of_line = True
    for seg in lexer.segment(context):
        head_idx = next((i for i, t in enumerate(seg.tokens) if not lexer.is_assignment(t)), None)
        row = []
        for i, tok in enumerate(seg.tokens):
            name = lexer.utility_name(tok)
            feats = []
            if i == head_idx:
                feats.append(F_HEAD)
            if name in vocab:
                feats.append(F_VOCAB)
            if "/" in tok:
                feats.append(F_SLASH)
            if "=" in tok:
                feats.append(F_ASSIGN)
            if tok.startswith("-"):
                feats.append(F_FLAG)
            if i > 0 and lexer.utility_name(seg.tokens[i - 1]) in lexer.WRAPPER_PREFIXES:
                feats.append(F_AFTER_WRAPPER)
            if "://" in tok:
                feats.append(F_URL)
            if first_of_line:
                feats.append(F_LINE_FIRST)
                first_of_line = False
            row.append(TokenFeatures(tok, name, tuple(feats)))
        out.append(row)
    return out


ScoreFn = Callable[[TokenFeatures], float]


def _argmax(candidates: Sequence[TokenFeatures], score: ScoreFn) -> Tuple[int, float, Optional[float]]:
    """Best candidate index (earliest wins ties), its score, and the runner-up score."""
    best_i, best, second = -1, -math.inf, None
    for i, tf in enumerate(candidates):
        s = score(tf)
        if s > best:
            if best_i >= 0:
                second = best if second is None else max(second, best)
            best_i, best = i, s
        elif second is None or s > second:
            second = s
    return best_i, best, second


def _logistic(x: float) -> float:
    x = max(-60.0, min(60.0, x))
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class Hyper:
    epochs: int = 2
    averaging: bool = True
    seed: int = 0
    # recorded for report parity only; perceptron updates are per decision
    batch_size: int = 2


@dataclass
class ExtractorModel:
    feature_weights: Dict[str, float] = field(default_factory=dict)
    token_weights: Dict[str, float] = field(default_factory=dict)
    utility_vocab: FrozenSet[str] = frozenset()
    hyper: Hyper = field(default_factory=Hyper)

    @property
    def version(self) -> str:
        return f"perceptron-v{FORMAT_VERSION}-{_checksum(self._payload())[:12]}"

    def _score(self, tf: TokenFeatures) -> float:
        fw = self.feature_weights
        s = self.token_weights.get(tf.name, 0.0)
        for f in tf.features:
            s += fw.get(f, 0.0)
        return s

    def predict(self, context: str) -> Prediction:
        if not self.utility_vocab:
            raise UntrainedModel("model has not been trained or loaded")
        names: List[str] = []
        confidences: List[float] = []
        for seg in featurize(context, self.utility_vocab):
            start = 0
            while True:
                offsets = [j for j in range(start, len(seg)) if seg[j].name]
                if not offsets:
                    break
                k, top1, top2 = _argmax([seg[j] for j in offsets], self._score)
                chosen = seg[offsets[k]]
                names.append(chosen.name)
                confidences.append(_logistic(top1) if top2 is None else _logistic(top1 - top2))
                if chosen.name not in lexer.WRAPPER_PREFIXES:
                    break
                start = offsets[k] + 1
        if not names:
            return Prediction("", 0.0)
        return Prediction(" ".join(names), sum(confidences) / len(confidences))

    def _payload(self) -> dict:
        return {
            "feature_weights": dict(sorted(self.feature_weights.items())),
            "token_weights": dict(sorted(self.token_weights.items())),
            "utility_vocab": sorted(self.utility_vocab),
            "hyper": vars(self.hyper),
        }


@dataclass
class TrainReport:
    epochs_run: int
    train_examples: int
    val_examples: int
    val_f1: List[float]
    wall_time: float
    batch_size: int
    longest_context_tokens: int
    decisions: int
    updates: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def _decisions(tokens: List[List[TokenFeatures]], gold: List[str]) -> Iterator[Tuple[List[TokenFeatures], int]]:
    """Yield ``(candidates, target_index)`` aligned to the gold answer tokens."""
    gp = 0
    for seg in tokens:
        start = 0
        while gp < len(gold) and start < len(seg):
            want = gold[gp]
            cands = [j for j in range(start, len(seg)) if seg[j].name]
            target = next(
                (j for j in cands if seg[j].name == want
                 and F_ASSIGN not in seg[j].features and F_FLAG not in seg[j].features),
                None,
            )
            if target is None:
                break
            yield [seg[j] for j in cands], cands.index(target)
            gp += 1
            if want not in lexer.WRAPPER_PREFIXES:
                break
            start = target + 1


class _Averager:
    """Lazily averaged perceptron weights keyed ``"f:<feature>"`` / ``"t:<token>"``."""

    def __init__(self) -> None:
        self.w: Dict[str, float] = {}
        self.total: Dict[str, float] = {}
        self.stamp: Dict[str, int] = {}
        self.step = 0

    def score(self, tf: TokenFeatures) -> float:
        w = self.w
        s = w.get("t:" + tf.name, 0.0)
        for f in tf.features:
            s += w.get("f:" + f, 0.0)
        return s

    def update(self, key: str, delta: float) -> None:
        w = self.w.get(key, 0.0)
        self.total[key] = self.total.get(key, 0.0) + (self.step - self.stamp.get(key, 0)) * w
        self.stamp[key] = self.step
        self.w[key] = w + delta

    def snapshot(self, average: bool) -> Tuple[Dict[str, float], Dict[str, float]]:
        feats: Dict[str, float] = {}
        toks: Dict[str, float] = {}
        for key, w in self.w.items():
            if average and self.step:
                value = (self.total[key] + (self.step - self.stamp[key]) * w) / self.step
            else:
                value = w
            kind, name = key.split(":", 1)
            (feats if kind == "f" else toks)[name] = value
        return feats, toks


def train(train_set, val_set=(), hyper: Hyper = Hyper()) -> Tuple[ExtractorModel, TrainReport]:
    """Averaged-perceptron training over ``LabeledCommand``-like items.

    Items need ``context`` and ``gold_answer`` attributes.  Validation F1 is
    measured with the averaged weights after every epoch.
    """
    if not train_set:
        raise EmptyTrainingSet("training set is empty")
    t0 = time.perf_counter()
    vocab = frozenset(tok for item in train_set for tok in item.gold_answer.split())
    model = ExtractorModel(utility_vocab=vocab, hyper=hyper)
    featurized = [(featurize(item.context, vocab), item.gold_answer.split()) for item in train_set]
    longest = max(sum(len(s) for s in toks) for toks, _ in featurized)
    rng = random.Random(hyper.seed)
    order = list(range(len(featurized)))
    avg = _Averager()
    updates = 0
    val_f1: List[float] = []

    for _ in range(hyper.epochs):
        rng.shuffle(order)
        for idx in order:
            tokens, gold = featurized[idx]
            for cands, target in _decisions(tokens, gold):
                avg.step += 1
                good = cands[target]
                rivals = [c for c in cands if c.name != good.name]
                if not rivals:
                    continue
                # a tie counts as a mistake, so the margin is pushed above zero
                k, best, _ = _argmax(rivals, avg.score)
                if avg.score(good) > best:
                    continue
                bad = rivals[k]
                for f in good.features:
                    avg.update("f:" + f, 1.0)
                avg.update("t:" + good.name, 1.0)
                for f in bad.features:
                    avg.update("f:" + f, -1.0)
                avg.update("t:" + bad.name, -1.0)
                updates += 1
        model.feature_weights, model.token_weights = avg.snapshot(hyper.averaging)
        if val_set:
            preds = [model.predict(item.context).answer for item in val_set]
            val_f1.append(evaluate(preds, [item.gold_answer for item in val_set]).mean_f1)

    report = TrainReport(
        epochs_run=hyper.epochs,
        train_examples=len(train_set),
        val_examples=len(val_set),
        val_f1=val_f1,
        wall_time=time.perf_counter() - t0,
        batch_size=hyper.batch_size,
        longest_context_tokens=longest,
        decisions=avg.step,
        updates=updates,
    )
    return model, report


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()


def save(model: ExtractorModel, path: Path | str) -> None:
    payload = model._payload()
    container = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_canonical(container) + "\n")
    os.replace(tmp, path)


def load(path: Path | str) -> ExtractorModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        container = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptModel(f"{path}: unreadable model file ({exc})") from exc
    if not isinstance(container, dict) or container.get("format") != FORMAT_NAME:
        raise CorruptModel(f"{path}: not a {FORMAT_NAME} file")
    version = container.get("version")
    if not isinstance(version, int) or version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    payload = container.get("payload")
    if not isinstance(payload, dict) or _checksum(payload) != container.get("checksum"):
        raise CorruptModel(f"{path}: checksum mismatch")
    try:
        return ExtractorModel(
            feature_weights={k: float(v) for k, v in payload["feature_weights"].items()},
            token_weights={k: float(v) for k, v in payload["token_weights"].items()},
            utility_vocab=frozenset(payload["utility_vocab"]),
            hyper=Hyper(**payload["hyper"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptModel(f"{path}: bad payload ({exc})") from exc


def load_extractor(backend: str = "perceptron", model_path: Path | str | None = None) -> Extractor:
    if backend == "rule":
        return RuleExtractor()
    if backend == "perceptron":
        if model_path is None:
            raise ValueError("perceptron backend needs a model path")
        return load(model_path)
    raise ValueError(f"unknown backend {backend!r}")
