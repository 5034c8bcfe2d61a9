import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvcl.corpus import (
    CaseDocument,
    ElementAnnotation,
    Triple,
    augment_swap,
    build_case,
    check_partition,
    load_corpus,
    segment_sentences,
    tokenize,
    truncate_case,
    truncate_front,
)
from mvcl.errors import ConfigError, EmptyDocument, IntegrityError, ParseError


def _write(path, records):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
                    encoding="utf-8")
    return path


def test_tokenize_modes():
    assert tokenize("PersonX borrowed 10k", "whitespace") == ["PersonX", "borrowed", "10k"]
    assert tokenize("abc", "character") == ["a", "b", "c"]
    assert tokenize("借 款。", "character") == ["借", "款", "。"]


def test_tokenize_rejects_blank_and_bad_mode():
    with pytest.raises(EmptyDocument):
        tokenize("   ")
    with pytest.raises(ConfigError):
        tokenize("abc", "subword")


@given(st.lists(st.text(alphabet="abcxyz.,", min_size=1, max_size=6), min_size=1, max_size=8))
def test_whitespace_roundtrip(words):
    text = "  " + "   ".join(words) + " "
    assert " ".join(tokenize(text, "whitespace")) == " ".join(text.split())


def test_segment_sentences_examples():
    assert segment_sentences(["a", ".", "b"]) == [(0, 2), (2, 3)]
    assert segment_sentences(["a", "b"]) == [(0, 2)]
    assert segment_sentences(["x", "。", "y", "？"]) == [(0, 2), (2, 4)]
    assert segment_sentences(["a", "|", "b"], terminators={"|"}) == [(0, 2), (2, 3)]


@given(st.lists(st.sampled_from(["a", "b", ".", "。", "?"]), min_size=1, max_size=30))
def test_segments_partition(tokens):
    spans = segment_sentences(tokens)
    check_partition(spans, len(tokens))
    assert spans[0][0] == 0 and spans[-1][1] == len(tokens)


def test_truncate_front_examples():
    toks = [f"t{i}" for i in range(600)]
    assert truncate_front(toks, 512) == tuple(toks[88:])
    assert truncate_front(toks[:100], 512) == tuple(toks[:100])
    assert truncate_front(["t1", "t2", "t3", "t4", "t5"], 2) == ("t4", "t5")
    with pytest.raises(ConfigError):
        truncate_front(toks, 0)


def test_truncate_reclips_spans():
    kept, spans = truncate_front(list("ab.cd.ef"), 4, [(0, 3), (3, 6), (6, 8)])
    assert kept == tuple("d.ef")
    assert spans == ((0, 2), (2, 4))


@given(st.lists(st.sampled_from(["a", "."]), min_size=1, max_size=40),
       st.integers(min_value=1, max_value=45))
def test_truncate_idempotent_and_partition(tokens, limit):
    case = build_case("x", tokens=tokens)
    once = truncate_case(case, limit)
    assert truncate_case(once, limit) == once
    check_partition(once.sentence_spans, once.token_count)
    assert truncate_front(truncate_front(tokens, limit), limit) == truncate_front(tokens, limit)


def test_augment_swap_examples():
    assert augment_swap([Triple("A", "B", "C", 0)]) == [Triple("A", "B", "C", 0),
                                                        Triple("A", "C", "B", 1)]
    assert Triple("A", "C", "B", 0) in augment_swap([Triple("A", "B", "C", 1)])
    assert augment_swap([]) == []


@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("def"),
                          st.sampled_from("ghi"), st.integers(0, 1)), max_size=10))
def test_augment_twice_contains_originals_twice(rows):
    triples = [Triple(*r) for r in rows]
    twice = augment_swap(augment_swap(triples))
    assert len(twice) == 4 * len(triples)
    for t in set(triples):
        assert twice.count(t) >= 2 * triples.count(t)


def test_case_document_rejects_empty():
    with pytest.raises(EmptyDocument):
        CaseDocument("x", (), ())


@pytest.fixture
def files(tmp_path):
    cases = _write(tmp_path / "cases.jsonl", [
        {"id": "A", "text": "借款。利率高。"},
        {"id": "B", "text": "借款。"},
        {"id": "C", "tokens": ["x", ".", "y"], "sentences": [[0, 2], [2, 3]]},
    ])
    triples = _write(tmp_path / "train.jsonl",
                     [{"query": "A", "cand_b": "B", "cand_c": "C", "label": 0}])
    return tmp_path, cases, triples


def test_load_corpus_roundtrip(files):
    tmp, cases, triples = files
    elements = _write(tmp / "el.jsonl", [{"case_id": "A", "flags": [0, 1]}])
    corpus = load_corpus(cases, {"train": triples}, elements)
    assert len(corpus.cases) == 3
    assert corpus.triples("train") == [Triple("A", "B", "C", 0)]
    assert corpus.annotations["A"] == ElementAnnotation("A", (False, True))
    for case in corpus.cases.values():
        check_partition(case.sentence_spans, case.token_count)


def test_load_corpus_dangling_id(files):
    tmp, cases, _ = files
    bad = _write(tmp / "bad.jsonl", [{"query": "A", "cand_b": "B", "cand_c": "Z", "label": 1}])
    with pytest.raises(IntegrityError):
        load_corpus(cases, {"train": bad})


def test_load_corpus_flag_length_mismatch(files):
    tmp, cases, triples = files
    elements = _write(tmp / "el.jsonl", [{"case_id": "A", "flags": [0, 1, 1]}])
    with pytest.raises(IntegrityError):
        load_corpus(cases, {"train": triples}, elements)


def test_parse_error_carries_line(files):
    tmp, cases, _ = files
    bad = tmp / "broken.jsonl"
    bad.write_text('{"query": "A", "cand_b": "B", "cand_c": "C", "label": 0}\n{oops\n')
    with pytest.raises(ParseError) as info:
        load_corpus(cases, {"train": bad})
    assert info.value.line == 2


def test_truncation_realigns_annotations(tmp_path):
    cases = _write(tmp_path / "c.jsonl", [{"id": "A", "text": "ab.cd.ef"}])
    elements = _write(tmp_path / "e.jsonl", [{"case_id": "A", "flags": [1, 0, 1]}])
    corpus = load_corpus(cases, {}, elements, max_tokens=4)
    assert corpus.cases["A"].tokens == tuple("d.ef")
    assert corpus.annotations["A"].flags == (False, True)


def test_duplicate_triple_across_splits(files):
    tmp, cases, triples = files
    with pytest.raises(IntegrityError):
        load_corpus(cases, {"train": triples, "test": triples})
