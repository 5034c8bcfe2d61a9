"""Macro-averaged classification metrics and the TF-IDF / BM25 baselines."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .corpus import CaseDocument, Corpus, Triple
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts with class 1 as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predictions: Sequence[int], labels: Sequence[int]):
        tp = fp = tn = fn = 0
        for p, y in zip(predictions, labels):
            if p == 1 and y == 1:
                tp += 1
            elif p == 1:
                fp += 1
            elif y == 0:
                tn += 1
            else:
                fn += 1
        return cls(tp, fp, tn, fn)

    def flipped(self) -> "ConfusionCounts":
        """The same counts with class 0 treated as positive."""
        return ConfusionCounts(self.tn, self.fn, self.tp, self.fp)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    MaP: float
    MaR: float
    MaF: float
    count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def _exact_scores(c: ConfusionCounts) -> tuple[Fraction, Fraction, Fraction]:
    def ratio(a, b):
        return Fraction(a, b) if b else Fraction(0)

    p = ratio(c.tp, c.tp + c.fp)
    r = ratio(c.tp, c.tp + c.fn)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f


def class_scores(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall and F1 of the positive class of ``c``."""
    p, r, f = _exact_scores(c)
    return float(p), float(r), float(f)


def binary_f1(predictions: Sequence[int], labels: Sequence[int]) -> float:
    return class_scores(ConfusionCounts.from_predictions(predictions, labels))[2]


def macro_metrics(predictions: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    predictions, labels = list(predictions), list(labels)
    if not labels:
        raise ContractError("macro_metrics needs at least one instance")
    if len(predictions) != len(labels):
        raise ContractError(f"{len(predictions)} predictions for {len(labels)} labels")
    if any(v not in (0, 1) for v in predictions + labels):
        raise ContractError("predictions and labels must be 0 or 1")
    counts = ConfusionCounts.from_predictions(predictions, labels)
    # rational arithmetic, so each metric is the correctly rounded exact value
    per_class = [_exact_scores(counts.flipped()), _exact_scores(counts)]
    return MetricsReport(
        accuracy=float(Fraction(counts.tp + counts.tn, counts.total)),
        MaP=float(sum(s[0] for s in per_class) / 2),
        MaR=float(sum(s[1] for s in per_class) / 2),
        MaF=float(sum(s[2] for s in per_class) / 2),
        count=counts.total,
    )


# -- lexical baselines -------------------------------------------------------


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ConfigError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")


class CorpusStats:
    """Document frequencies, document count and average length over a document set."""

    def __init__(self, documents: Iterable[Sequence[str]]):
        self.df: Counter = Counter()
        self.n_docs = 0
        total = 0
        for doc in documents:
            self.n_docs += 1
            total += len(doc)
            self.df.update(set(doc))
        self.avg_len = total / self.n_docs if self.n_docs else 0.0

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "CorpusStats":
        return cls(c.tokens for c in corpus.cases.values())

    def tfidf_idf(self, term: str) -> float:
        return math.log((self.n_docs + 1) / (self.df.get(term, 0) + 1)) + 1.0

    def bm25_idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def tfidf_vector(tokens: Sequence[str], stats: CorpusStats) -> dict[str, float]:
    return {t: c * stats.tfidf_idf(t) for t, c in Counter(tokens).items()}


def tfidf_score(query: Sequence[str], doc: Sequence[str], stats: CorpusStats) -> float:
    """Cosine similarity of raw-count tf times ln((N+1)/(df+1)) + 1 vectors."""
    q, d = tfidf_vector(query, stats), tfidf_vector(doc, stats)
    dot = sum(w * d[t] for t, w in q.items() if t in d)
    nq = math.sqrt(sum(w * w for w in q.values()))
    nd = math.sqrt(sum(w * w for w in d.values()))
    return _safe_div(dot, nq * nd)


def bm25_score(query: Sequence[str], doc: Sequence[str], stats: CorpusStats,
               params: Bm25Params = Bm25Params()) -> float:
    """Okapi BM25 summed over query tokens (repeated query tokens count repeatedly)."""
    tf = Counter(doc)
    norm = params.k1 * (1.0 - params.b + params.b * len(doc) / stats.avg_len)
    score = 0.0
    for term in query:
        f = tf.get(term, 0)
        if f:
            score += stats.bm25_idf(term) * f * (params.k1 + 1.0) / (f + norm)
    return score


def baseline_classify(triple: Triple, cases: dict[str, CaseDocument], stats: CorpusStats,
                      method: str, params: Bm25Params = Bm25Params()) -> int:
    """1 when C scores strictly higher against the query than B, else 0 (ties go to B)."""
    a = cases[triple.query_id].tokens
    b = cases[triple.cand_b_id].tokens
    c = cases[triple.cand_c_id].tokens
    if method == "tfidf":
        sb, sc = tfidf_score(a, b, stats), tfidf_score(a, c, stats)
    elif method == "bm25":
        sb, sc = bm25_score(a, b, stats, params), bm25_score(a, c, stats, params)
    else:
        raise ConfigError(f"unknown baseline method {method!r}")
    return 0 if sb >= sc else 1


def evaluate_baseline(corpus: Corpus, triples: Sequence[Triple], method: str,
                      params: Bm25Params = Bm25Params()) -> MetricsReport:
    stats = CorpusStats.from_corpus(corpus)
    preds = [baseline_classify(t, corpus.cases, stats, method, params) for t in triples]
    return macro_metrics(preds, [t.label for t in triples])
