"""Token sequences to per-token vectors: lookup tables, a recurrent encoder,
or externally computed embeddings read from a fixture file."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .corpus import read_jsonl
from .errors import ConfigError, EmptyDocument, FixtureMiss, FormatError, ParseError
from .nn import Bidirectional, Linear, pad_ids

PAD, UNK, CLS, DEL = "[PAD]", "[UNK]", "[CLS]", "[DEL]"
RESERVED = (PAD, UNK, CLS, DEL)


class Vocabulary:
    """Token ids with four reserved entries and optional hash buckets for unseen tokens."""

    def __init__(self, tokens: Iterable[str] = (), buckets: int = 0):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)
        self.buckets = int(buckets)

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], buckets: int = 0) -> "Vocabulary":
        seen = sorted({t for toks in token_lists for t in toks} - set(RESERVED))
        return cls(seen, buckets)

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def cls_id(self) -> int:
        return self.stoi[CLS]

    @property
    def del_id(self) -> int:
        return self.stoi[DEL]

    def __len__(self) -> int:
        return len(self.itos) + self.buckets

    def id(self, token: str) -> int:
        i = self.stoi.get(token)
        if i is not None:
            return i
        if self.buckets:
            return len(self.itos) + zlib.crc32(token.encode("utf-8")) % self.buckets
        return self.stoi[UNK]

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def to_dict(self) -> dict:
        return {"tokens": self.itos[len(RESERVED):], "buckets": self.buckets}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        return cls(payload["tokens"], payload.get("buckets", 0))


@dataclass
class EncoderConfig:
    kind: str = "lookup_recurrent"
    d: int = 64
    hidden: int = 32
    buckets: int = 16
    fixture_path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("lookup", "lookup_recurrent", "fixture"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.d < 2:
            raise ConfigError("encoder dimension d must be >= 2")
        if self.hidden < 1 or self.buckets < 0:
            raise ConfigError("encoder hidden size must be >= 1 and buckets >= 0")
        if self.kind == "fixture" and not self.fixture_path:
            raise ConfigError("fixture encoder needs fixture_path")

    def to_dict(self) -> dict:
        return asdict(self)


def load_fixture(path: str | Path) -> dict[str, np.ndarray]:
    """Read embeddings.jsonl into case id -> (token_count, d) arrays."""
    out: dict[str, np.ndarray] = {}
    dim = None
    for lineno, rec in read_jsonl(path):
        cid = rec.get("id")
        vectors = rec.get("vectors")
        if not isinstance(cid, str) or not isinstance(vectors, list) or not vectors:
            raise ParseError("need string 'id' and non-empty 'vectors'", path, lineno)
        widths = {len(v) if isinstance(v, list) else -1 for v in vectors}
        if len(widths) != 1 or -1 in widths:
            raise FormatError(f"{path}:{lineno}: ragged vectors for case {cid!r}")
        width = widths.pop()
        if dim is None:
            dim = width
        elif width != dim:
            raise FormatError(f"{path}:{lineno}: dimension {width} differs from {dim}")
        try:
            arr = np.asarray(vectors, dtype=np.float64)
        except (TypeError, ValueError):
            raise FormatError(f"{path}:{lineno}: non-numeric vector entries") from None
        if not np.isfinite(arr).all():
            raise FormatError(f"{path}:{lineno}: non-finite vector entries")
        out[cid] = arr
    if not out:
        raise FormatError(f"{path}: no embeddings")
    return out


def fixture_dim(fixture: dict[str, np.ndarray]) -> int:
    return next(iter(fixture.values())).shape[1]


class Encoder:
    """Maps batches of token sequences to ``(batch, time, d)`` tensors plus a mask."""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, store: ParameterStore,
                 rng: np.random.Generator, prefix: str = "encoder",
                 fixture: dict[str, np.ndarray] | None = None):
        config.validate()
        self.config = config
        self.vocab = vocab
        d = config.d
        if config.kind == "fixture":
            if fixture is None:
                fixture = load_fixture(config.fixture_path)
            if fixture_dim(fixture) != d:
                raise FormatError(f"fixture dimension {fixture_dim(fixture)} != configured d={d}")
            self.fixture = fixture
            self.del_vec = store.add(f"{prefix}.del", (d,), rng, fan_in=d)
            self.cls_vec = store.add(f"{prefix}.cls", (d,), rng, fan_in=d)
        else:
            self.fixture = None
            self.table = store.add(f"{prefix}.embedding", (len(vocab), d), rng, fan_in=d)
            if config.kind == "lookup_recurrent":
                self.rnn = Bidirectional(store, f"{prefix}.rnn", "lstm", d, config.hidden, rng)
                self.proj = Linear(store, f"{prefix}.proj", self.rnn.out_dim, d, rng)

    @property
    def dim(self) -> int:
        return self.config.d

    def encode_batch(self, sequences: Sequence[Sequence[str]],
                     case_ids: Sequence[str | None] | None = None,
                     cls: bool = False) -> tuple[Tensor, np.ndarray]:
        if any(len(s) == 0 for s in sequences):
            raise EmptyDocument("cannot encode an empty token sequence")
        if self.fixture is not None:
            return self._encode_fixture(sequences, case_ids, cls)
        rows = [self.vocab.ids(s) for s in sequences]
        if cls:
            rows = [[self.vocab.cls_id] + r for r in rows]
        ids, mask = pad_ids(rows, self.vocab.pad_id)
        h = ad.take(self.table, ids, axis=0)
        if self.config.kind == "lookup_recurrent":
            h = self.proj(self.rnn(h, mask))
        return h, mask

    def encode(self, tokens: Sequence[str], case_id: str | None = None,
               cls: bool = False) -> Tensor:
        """Single sequence; returns ``(len(tokens) [+1 with cls], d)``."""
        h, _ = self.encode_batch([tokens], [case_id], cls)
        return h[0]

    def _encode_fixture(self, sequences, case_ids, cls):
        if case_ids is None or any(c is None for c in case_ids):
            raise FixtureMiss("fixture encoder needs a case id for every sequence")
        d = self.config.d
        lengths = [len(s) + int(cls) for s in sequences]
        width = max(lengths)
        base = np.zeros((len(sequences), width, d))
        is_del = np.zeros((len(sequences), width, 1), dtype=bool)
        is_cls = np.zeros((len(sequences), width, 1), dtype=bool)
        mask = np.zeros((len(sequences), width), dtype=bool)
        for row, (toks, cid) in enumerate(zip(sequences, case_ids)):
            vecs = self.fixture.get(cid)
            if vecs is None:
                raise FixtureMiss(f"no fixture embeddings for case {cid!r}")
            if vecs.shape[0] < len(toks):
                raise FixtureMiss(
                    f"fixture for {cid!r} has {vecs.shape[0]} rows, sequence has {len(toks)}"
                )
            off = int(cls)
            # rows align with the case's tokens; front truncation keeps the tail
            base[row, off:off + len(toks)] = vecs[vecs.shape[0] - len(toks):]
            is_del[row, off:off + len(toks), 0] = [t == DEL for t in toks]
            is_cls[row, 0, 0] = cls
            mask[row, : lengths[row]] = True
        h = ad.where(is_del, self.del_vec, Tensor(base))
        if cls:
            h = ad.where(is_cls, self.cls_vec, h)
        return h, mask
