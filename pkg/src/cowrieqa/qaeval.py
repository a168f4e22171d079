"""Span QA scoring: SQuAD-style normalization, token-overlap F1 and exact match."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Sequence

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = frozenset({"a", "an", "the"})


class LengthMismatch(ValueError):
    pass


class EmptyEval(ValueError):
    pass


@dataclass(frozen=True)
class ExampleScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    exact_match: bool


@dataclass
class EvalReport:
    n_examples: int
    mean_f1: float
    mean_em: float
    per_example: List[ExampleScore] = field(default_factory=list)

    def to_dict(self, include_examples: bool = False) -> dict:
        out = {"n_examples": self.n_examples, "mean_f1": self.mean_f1, "mean_em": self.mean_em}
        if include_examples:
            out["per_example"] = [vars(s) for s in self.per_example]
        return out


def squad_normalize(text: str) -> str:
    """Lowercase, delete ASCII punctuation, drop articles, squeeze whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    return " ".join(tok for tok in text.split() if tok not in _ARTICLES)


def token_f1(pred: str, gold: str) -> ExampleScore:
    pred_toks = squad_normalize(pred).split()
    gold_toks = squad_normalize(gold).split()
    if not pred_toks and not gold_toks:
        # agreement on "no answer"
        return ExampleScore(0, 0, 0, 1.0, 1.0, 1.0, True)
    tp = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    fp = len(pred_toks) - tp
    fn = len(gold_toks) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = tp / (tp + 0.5 * (fp + fn)) if tp else 0.0
    return ExampleScore(tp, fp, fn, precision, recall, f1, pred_toks == gold_toks)


def exact_match(pred: str, gold: str) -> bool:
    return squad_normalize(pred) == squad_normalize(gold)


def evaluate(predictions: Sequence[str], golds: Sequence[str]) -> EvalReport:
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise EmptyEval("nothing to evaluate")
    scores = [token_f1(p, g) for p, g in zip(predictions, golds)]
    n = len(scores)
    return EvalReport(
        n_examples=n,
        mean_f1=sum(s.f1 for s in scores) / n,
        mean_em=sum(s.exact_match for s in scores) / n,
        per_example=scores,
    )
