"""Case documents, triples, element annotations and their JSONL ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import ConfigError, EmptyDocument, IntegrityError, ParseError

DEFAULT_TERMINATORS = frozenset({".", "。", "!", "?", "！", "？", ";", "；"})
DEFAULT_MAX_TOKENS = 512

Span = tuple[int, int]


@dataclass(frozen=True)
class CaseDocument:
    id: str
    tokens: tuple[str, ...]
    sentence_spans: tuple[Span, ...]

    def __post_init__(self):
        if not self.tokens:
            raise EmptyDocument(f"case {self.id!r} has no tokens")
        check_partition(self.sentence_spans, len(self.tokens), self.id)

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    @property
    def sentence_count(self) -> int:
        return len(self.sentence_spans)

    def sentence(self, k: int) -> tuple[str, ...]:
        start, end = self.sentence_spans[k]
        return self.tokens[start:end]


@dataclass(frozen=True)
class Triple:
    query_id: str
    cand_b_id: str
    cand_c_id: str
    label: int

    def swapped(self) -> "Triple":
        return Triple(self.query_id, self.cand_c_id, self.cand_b_id, 1 - self.label)


@dataclass(frozen=True)
class ElementAnnotation:
    case_id: str
    flags: tuple[bool, ...]


@dataclass(frozen=True)
class SentenceExample:
    tokens: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.tokens:
            raise EmptyDocument("sentence example has no tokens")
        if self.label not in (0, 1):
            raise IntegrityError(f"sentence label must be 0 or 1, got {self.label!r}")


@dataclass
class Corpus:
    cases: dict[str, CaseDocument]
    splits: dict[str, list[Triple]] = field(default_factory=dict)
    annotations: dict[str, ElementAnnotation] | None = None

    def triples(self, split: str) -> list[Triple]:
        return self.splits.get(split, [])

    def split_case_ids(self, split: str) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.triples(split):
            for cid in (t.query_id, t.cand_b_id, t.cand_c_id):
                seen.setdefault(cid, None)
        return list(seen)

    def validate(self) -> None:
        for split, triples in self.splits.items():
            for t in triples:
                validate_triple(t, self.cases, split)
        seen: dict[Triple, str] = {}
        for split, triples in self.splits.items():
            for t in set(triples):
                if t in seen and seen[t] != split:
                    raise IntegrityError(f"triple {t} appears in both {seen[t]} and {split}")
                seen[t] = split
        if self.annotations is not None:
            for ann in self.annotations.values():
                validate_annotation(ann, self.cases)


def check_partition(spans: Sequence[Span], count: int, case_id: str = "") -> None:
    pos = 0
    for start, end in spans:
        if start != pos or end <= start:
            raise IntegrityError(
                f"case {case_id!r}: sentence spans {list(spans)} do not partition [0, {count})"
            )
        pos = end
    if pos != count:
        raise IntegrityError(
            f"case {case_id!r}: sentence spans {list(spans)} do not partition [0, {count})"
        )


def validate_triple(t: Triple, cases: dict[str, CaseDocument], split: str = "") -> None:
    for cid in (t.query_id, t.cand_b_id, t.cand_c_id):
        if cid not in cases:
            raise IntegrityError(f"{split} triple references unknown case {cid!r}")
    if t.query_id in (t.cand_b_id, t.cand_c_id):
        raise IntegrityError(f"{split} triple uses query {t.query_id!r} as its own candidate")
    if t.label not in (0, 1):
        raise IntegrityError(f"{split} triple label must be 0 or 1, got {t.label!r}")


def validate_annotation(ann: ElementAnnotation, cases: dict[str, CaseDocument]) -> None:
    case = cases.get(ann.case_id)
    if case is None:
        raise IntegrityError(f"annotation for unknown case {ann.case_id!r}")
    if len(ann.flags) != case.sentence_count:
        raise IntegrityError(
            f"annotation for {ann.case_id!r} has {len(ann.flags)} flags"
            f" but the case has {case.sentence_count} sentences"
        )


# -- text processing -----------------------------------------------------------


def tokenize(text: str, mode: str = "character") -> list[str]:
    """Split ``text`` on whitespace, or into single non-space characters."""
    stripped = text.strip()
    if not stripped:
        raise EmptyDocument("text is empty after trimming")
    if mode == "whitespace":
        return stripped.split()
    if mode == "character":
        return [ch for ch in stripped if not ch.isspace()]
    raise ConfigError(f"unknown tokenization mode {mode!r}")


def segment_sentences(tokens: Sequence[str],
                      terminators: Iterable[str] = DEFAULT_TERMINATORS) -> list[Span]:
    """Sentence spans closing after each terminator token; the tail closes at the end."""
    if not tokens:
        raise EmptyDocument("cannot segment an empty token sequence")
    stops = set(terminators)
    spans: list[Span] = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in stops:
            spans.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    return spans


def truncate_front(tokens: Sequence[str], limit: int,
                   spans: Sequence[Span] | None = None):
    """Keep the last ``limit`` tokens.

    With ``spans`` given, returns ``(tokens, spans)`` where spans are clipped
    to the kept suffix, shifted to start at 0, and emptied ones dropped.
    """
    if limit < 1:
        raise ConfigError("truncation limit must be >= 1")
    drop = max(0, len(tokens) - limit)
    kept = tuple(tokens[drop:])
    if spans is None:
        return kept
    clipped = []
    for start, end in spans:
        s, e = max(start, drop) - drop, end - drop
        if e > s:
            clipped.append((s, e))
    return kept, tuple(clipped)


def truncate_case(case: CaseDocument, limit: int) -> CaseDocument:
    if case.token_count <= limit:
        return case
    tokens, spans = truncate_front(case.tokens, limit, case.sentence_spans)
    return replace(case, tokens=tokens, sentence_spans=spans)


def truncate_annotation(original: CaseDocument, ann: ElementAnnotation,
                        limit: int) -> ElementAnnotation:
    """Drop the flags of sentences that front truncation removes entirely."""
    drop = max(0, original.token_count - limit)
    flags = tuple(f for (s, e), f in zip(original.sentence_spans, ann.flags) if e > drop)
    return ElementAnnotation(ann.case_id, flags)


def augment_swap(triples: Iterable[Triple]) -> list[Triple]:
    """Each triple followed by its copy with the candidates exchanged and the label flipped."""
    out: list[Triple] = []
    for t in triples:
        out.append(t)
        out.append(t.swapped())
    return out


def build_case(case_id: str, text: str | None = None, tokens: Sequence[str] | None = None,
               spans: Sequence[Span] | None = None, mode: str = "character",
               terminators: Iterable[str] = DEFAULT_TERMINATORS) -> CaseDocument:
    if tokens is None:
        if text is None:
            raise ValueError("need text or tokens")
        tokens = tokenize(text, mode)
    tokens = tuple(tokens)
    if not tokens:
        raise EmptyDocument(f"case {case_id!r} has no tokens")
    if spans is None:
        spans = segment_sentences(tokens, terminators)
    return CaseDocument(case_id, tokens, tuple((int(s), int(e)) for s, e in spans))


# -- JSONL ingestion -----------------------------------------------------------


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", path, lineno)
            yield lineno, record


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _require(record, key, kind, path, lineno):
    if key not in record:
        raise ParseError(f"missing field {key!r}", path, lineno)
    value = record[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"field {key!r} has the wrong type", path, lineno)
    return value


def load_cases(path, mode: str = "character", max_tokens: int = DEFAULT_MAX_TOKENS,
               terminators: Iterable[str] = DEFAULT_TERMINATORS,
               keep_untruncated: bool = False):
    """Read cases.jsonl: raw ``text`` records or pre-tokenized ``tokens``/``sentences``.

    Sentences are segmented before front truncation to ``max_tokens``.
    """
    cases: dict[str, CaseDocument] = {}
    raw: dict[str, CaseDocument] = {}
    for lineno, rec in read_jsonl(path):
        cid = _require(rec, "id", str, path, lineno)
        if cid in cases:
            raise ParseError(f"duplicate case id {cid!r}", path, lineno)
        try:
            if "tokens" in rec:
                toks = _require(rec, "tokens", list, path, lineno)
                if not all(isinstance(t, str) for t in toks):
                    raise ParseError("tokens must be strings", path, lineno)
                spans = rec.get("sentences")
                if spans is not None:
                    if not all(isinstance(s, list) and len(s) == 2 for s in spans):
                        raise ParseError("sentences must be [start, end] pairs", path, lineno)
                case = build_case(cid, tokens=toks, spans=spans, terminators=terminators)
            else:
                text = _require(rec, "text", str, path, lineno)
                case = build_case(cid, text=text, mode=mode, terminators=terminators)
        except (EmptyDocument, IntegrityError) as exc:
            raise ParseError(str(exc), path, lineno) from None
        raw[cid] = case
        cases[cid] = truncate_case(case, max_tokens)
    return (cases, raw) if keep_untruncated else cases


def load_triples(path) -> list[Triple]:
    out = []
    for lineno, rec in read_jsonl(path):
        label = _require(rec, "label", int, path, lineno)
        if label not in (0, 1):
            raise ParseError(f"label must be 0 or 1, got {label}", path, lineno)
        out.append(Triple(
            _require(rec, "query", str, path, lineno),
            _require(rec, "cand_b", str, path, lineno),
            _require(rec, "cand_c", str, path, lineno),
            label,
        ))
    return out


def load_annotations(path) -> dict[str, ElementAnnotation]:
    out = {}
    for lineno, rec in read_jsonl(path):
        cid = _require(rec, "case_id", str, path, lineno)
        flags = _require(rec, "flags", list, path, lineno)
        if not all(f in (0, 1) and not isinstance(f, float) for f in flags):
            raise ParseError("flags must be 0 or 1", path, lineno)
        out[cid] = ElementAnnotation(cid, tuple(bool(f) for f in flags))
    return out


def load_sentence_examples(path, mode: str = "character") -> list[SentenceExample]:
    out = []
    for lineno, rec in read_jsonl(path):
        text = _require(rec, "text", str, path, lineno)
        label = _require(rec, "label", int, path, lineno)
        try:
            out.append(SentenceExample(tuple(tokenize(text, mode)), label))
        except (EmptyDocument, IntegrityError) as exc:
            raise ParseError(str(exc), path, lineno) from None
    return out


def load_corpus(cases_path, triples: dict[str, str | Path] | None = None,
                elements_path=None, mode: str = "character",
                max_tokens: int = DEFAULT_MAX_TOKENS,
                terminators: Iterable[str] = DEFAULT_TERMINATORS) -> Corpus:
    """Load and validate a corpus; ``triples`` maps split name to a triples.jsonl path.

    Element flags may be given per sentence of the untruncated case (they are
    re-aligned) or of the truncated one.
    """
    cases, raw = load_cases(cases_path, mode, max_tokens, terminators, keep_untruncated=True)
    splits = {name: load_triples(p) for name, p in (triples or {}).items()}
    annotations = None
    if elements_path is not None:
        annotations = {}
        for cid, ann in load_annotations(elements_path).items():
            if cid in raw and len(ann.flags) == raw[cid].sentence_count:
                ann = truncate_annotation(raw[cid], ann, max_tokens)
            validate_annotation(ann, cases)
            annotations[cid] = ann
    corpus = Corpus(cases, splits, annotations)
    corpus.validate()
    return corpus


def case_to_record(case: CaseDocument) -> dict:
    return {"id": case.id, "tokens": list(case.tokens),
            "sentences": [list(s) for s in case.sentence_spans]}


def triple_to_record(t: Triple) -> dict:
    return {"query": t.query_id, "cand_b": t.cand_b_id, "cand_c": t.cand_c_id, "label": t.label}


def annotation_to_record(ann: ElementAnnotation) -> dict:
    return {"case_id": ann.case_id, "flags": [int(f) for f in ann.flags]}
