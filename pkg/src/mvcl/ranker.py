"""Turning pairwise preference probabilities into a ranked candidate list."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from .corpus import CaseDocument, Triple
from .errors import ContractError, SizeGuard

EXHAUSTIVE_LIMIT = 8


class PreferenceSet:
    """``p(i, j)``: probability that candidate i is preferred over j."""

    def __init__(self, candidates: Sequence[str], probs: dict[tuple[str, str], float]):
        cands = list(candidates)
        if len(cands) < 2:
            raise ContractError("a preference set needs at least 2 candidates")
        if len(set(cands)) != len(cands):
            raise ContractError("candidate ids must be distinct")
        table: dict[tuple[str, str], float] = {}
        for i, j in itertools.combinations(sorted(cands), 2):
            if (i, j) in probs:
                p = float(probs[(i, j)])
                if (j, i) in probs and abs(p + probs[(j, i)] - 1.0) > 1e-9:
                    raise ContractError(f"p({i},{j}) + p({j},{i}) != 1")
            elif (j, i) in probs:
                p = 1.0 - float(probs[(j, i)])
            else:
                raise ContractError(f"missing preference for pair ({i}, {j})")
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"p({i},{j}) = {p} outside [0, 1]")
            table[(i, j)] = p
            table[(j, i)] = 1.0 - p
        self.candidates = cands
        self._p = table

    def p(self, i: str, j: str) -> float:
        return self._p[(i, j)]

    def satisfied(self, order: Sequence[str]) -> int:
        """Pairs placed in an order the preferences back strictly (p > 0.5)."""
        return sum(
            1 for a, b in itertools.combinations(order, 2) if self._p[(a, b)] > 0.5
        )


@dataclass(frozen=True)
class RankedList:
    order: tuple[str, ...]
    method: str
    scores: dict[str, float]
    score: float  # pairs whose order the preferences back (p > 0.5)

    def to_dict(self) -> dict:
        return {"order": list(self.order), "scores": dict(self.scores), "method": self.method,
                "score": self.score}


def exhaustive_rank(prefs: PreferenceSet) -> RankedList:
    """The order satisfying the most pairwise preferences; ties go to the
    lexicographically smallest id sequence."""
    n = len(prefs.candidates)
    if n > EXHAUSTIVE_LIMIT:
        raise SizeGuard(
            f"exhaustive ranking is limited to {EXHAUSTIVE_LIMIT} candidates, got {n};"
            " use wincount_rank"
        )
    best, best_count = None, -1
    for order in itertools.permutations(sorted(prefs.candidates)):
        count = prefs.satisfied(order)
        if count > best_count:
            best, best_count = order, count
    return RankedList(best, "exhaustive", {c: float(n - 1 - k) for k, c in enumerate(best)},
                      best_count)


def _sorted_by(scores: dict[str, float]) -> tuple[str, ...]:
    return tuple(sorted(scores, key=lambda c: (-scores[c], c)))


def wincount_rank(prefs: PreferenceSet) -> RankedList:
    cands = prefs.candidates
    wins = {i: float(sum(1 for j in cands if j != i and prefs.p(i, j) > 0.5)) for i in cands}
    order = _sorted_by(wins)
    return RankedList(order, "wincount", wins, prefs.satisfied(order))


def probsum_rank(prefs: PreferenceSet) -> RankedList:
    cands = sorted(prefs.candidates)
    sums = {i: sum(prefs.p(i, j) for j in cands if j != i) for i in cands}
    order = _sorted_by(sums)
    return RankedList(order, "probsum", sums, prefs.satisfied(order))


METHODS = {"exhaustive": exhaustive_rank, "wincount": wincount_rank, "probsum": probsum_rank}


def rank(prefs: PreferenceSet, method: str) -> RankedList:
    try:
        return METHODS[method](prefs)
    except KeyError:
        raise ContractError(f"unknown ranking method {method!r}") from None


def prefs_from_model(model, cases: dict[str, CaseDocument], query: str,
                     candidates: Sequence[str]) -> PreferenceSet:
    """Run each unordered pair once in id order: p(i, j) = 1 - P(second candidate better)."""
    cands = list(dict.fromkeys(candidates))
    if len(cands) < 2:
        raise ContractError("ranking needs at least 2 distinct candidates")
    pairs = list(itertools.combinations(sorted(cands), 2))
    triples = [Triple(query, i, j, 0) for i, j in pairs]
    y_hat = model.predict_proba(triples, cases)
    return PreferenceSet(cands, {pair: 1.0 - float(p) for pair, p in zip(pairs, y_hat)})
