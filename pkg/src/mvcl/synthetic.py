"""Synthetic loan-dispute corpora with a planted legal element.

Every case holds one element sentence stating an interest rate. Rates fall in
a lawful band or a usurious band, and a candidate is relevant to the query
exactly when its rate is in the query's band. Filler sentences carry no
signal; with ``distractor_rate`` > 0 the irrelevant candidate copies the
query's filler, so pure term overlap points the wrong way.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    Corpus,
    ElementAnnotation,
    SentenceExample,
    Triple,
    annotation_to_record,
    build_case,
    case_to_record,
    triple_to_record,
    write_jsonl,
)

LAWFUL = ("r6", "r10", "r12", "r15", "r20")
USURIOUS = ("r36", "r40", "r45", "r50", "r60")
AMOUNTS = ("10k", "20k", "50k", "80k", "100k")
FILLER = tuple(f"w{i}" for i in range(40))
ELEMENT_MARK = "ELEM"


@dataclass
class SyntheticSpec:
    n_train: int = 32
    n_validation: int = 0
    n_test: int = 0
    filler_sentences: tuple[int, int] = (2, 4)
    filler_length: tuple[int, int] = (3, 6)
    distractor_rate: float = 0.5
    seed: int = 0


def _filler(rng, spec):
    n = int(rng.integers(spec.filler_length[0], spec.filler_length[1] + 1))
    return [str(w) for w in rng.choice(FILLER, size=n)] + ["."]


def _element(rng, usurious: bool):
    rate = str(rng.choice(USURIOUS if usurious else LAWFUL))
    amount = str(rng.choice(AMOUNTS))
    return ["PersonX", "borrowed", amount, "at", rate, "interest", "."]


def _case(case_id, rng, spec, usurious, filler=None):
    if filler is None:
        k = int(rng.integers(spec.filler_sentences[0], spec.filler_sentences[1] + 1))
        filler = [_filler(rng, spec) for _ in range(k)]
    slot = int(rng.integers(0, len(filler) + 1))
    sentences = filler[:slot] + [_element(rng, usurious)] + filler[slot:]
    tokens = [t for s in sentences for t in s]
    case = build_case(case_id, tokens=tokens)
    flags = tuple(k == slot for k in range(len(sentences)))
    return case, ElementAnnotation(case_id, flags), filler


def make_corpus(spec: SyntheticSpec | None = None) -> Corpus:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    cases, annotations, splits = {}, {}, {}
    for split, n in (("train", spec.n_train), ("validation", spec.n_validation),
                     ("test", spec.n_test)):
        triples = []
        for k in range(n):
            prefix = f"{split}{k}"
            band = bool(rng.integers(0, 2))
            query, qa, qfill = _case(f"{prefix}a", rng, spec, band)
            distract = rng.random() < spec.distractor_rate
            rel, ra, _ = _case(f"{prefix}r", rng, spec, band)
            irr, ia, _ = _case(f"{prefix}i", rng, spec, not band,
                               filler=[list(s) for s in qfill] if distract else None)
            label = int(rng.integers(0, 2))
            b, c = (rel, irr) if label == 0 else (irr, rel)
            for case, ann in ((query, qa), (rel, ra), (irr, ia)):
                cases[case.id] = case
                annotations[case.id] = ann
            triples.append(Triple(query.id, b.id, c.id, label))
        if n:
            splits[split] = triples
    corpus = Corpus(cases, splits, annotations)
    corpus.validate()
    return corpus


def write_corpus(corpus: Corpus, directory: str | Path) -> dict[str, Path]:
    """Write cases.jsonl, <split>.jsonl and elements.jsonl; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"cases": directory / "cases.jsonl"}
    write_jsonl(paths["cases"], (case_to_record(c) for c in corpus.cases.values()))
    for split, triples in corpus.splits.items():
        paths[split] = directory / f"{split}.jsonl"
        write_jsonl(paths[split], (triple_to_record(t) for t in triples))
    if corpus.annotations is not None:
        paths["elements"] = directory / "elements.jsonl"
        write_jsonl(paths["elements"],
                    (annotation_to_record(a) for a in corpus.annotations.values()))
    return paths


def make_sentence_examples(n: int = 200, seed: int = 0,
                           length: tuple[int, int] = (3, 8)) -> list[SentenceExample]:
    """Half the sentences contain the ``ELEM`` token (label 1), half do not."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        m = int(rng.integers(length[0], length[1] + 1))
        toks = [str(w) for w in rng.choice(FILLER, size=m)]
        label = k % 2
        if label:
            toks[int(rng.integers(0, m))] = ELEMENT_MARK
        out.append(SentenceExample(tuple(toks), label))
    return out
