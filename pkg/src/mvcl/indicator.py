"""Sentence-level legal-element detector and corpus annotation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape
from .contrastive import AttentionPoolHead, attention_pool
from .corpus import (
    DEFAULT_MAX_TOKENS,
    Corpus,
    ElementAnnotation,
    SentenceExample,
    annotation_to_record,
    truncate_front,
    write_jsonl,
)
from .encoder import Encoder, EncoderConfig, Vocabulary
from .errors import ConfigError, DegenerateDataset, EmptyDocument
from .evalkit import binary_f1
from .nn import Linear

log = logging.getLogger(__name__)

POOLINGS = ("cls_token", "last_token", "attention_pool")


@dataclass
class IndicatorConfig:
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(d=32, hidden=16))
    pooling: str = "attention_pool"
    max_len: int = DEFAULT_MAX_TOKENS
    learning_rate: float = 1e-2
    batch_size: int = 32
    steps: int = 300
    eval_every: int = 25
    holdout_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        self.encoder.validate()
        if self.encoder.kind == "fixture":
            raise ConfigError("the indicator encodes bare sentences; fixture encoders need case ids")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 1 or self.max_len < 1:
            raise ConfigError("indicator batch_size/eval_every/max_len must be >= 1, steps >= 0")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "IndicatorConfig":
        payload = dict(payload)
        enc = EncoderConfig(**payload.pop("encoder", {}))
        return cls(encoder=enc, **payload)


@dataclass(frozen=True)
class IndicatorPrediction:
    label: int
    probability: float


class IndicatorModel:
    """Own encoder parameters, a pooling convention and a two-way softmax head.

    The head starts at zero so an untrained model predicts 0.5 everywhere.
    """

    def __init__(self, config: IndicatorConfig, vocab: Vocabulary):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        self.encoder = Encoder(config.encoder, vocab, self.store, rng, "indicator.encoder")
        d = config.encoder.d
        self.pool_head = (
            AttentionPoolHead(self.store, "indicator.pool", d, rng)
            if config.pooling == "attention_pool" else None
        )
        self.head = Linear(self.store, "indicator.head", d, 2, rng, init="zeros")

    def probabilities(self, sentences: Sequence[Sequence[str]]):
        """Class probabilities ``(n, 2)`` as a tensor (recorded if a tape is active)."""
        if any(len(s) == 0 for s in sentences):
            raise EmptyDocument("cannot classify an empty sentence")
        limit = self.config.max_len
        sentences = [truncate_front(s, limit) for s in sentences]
        cls = self.config.pooling == "cls_token"
        h, mask = self.encoder.encode_batch(sentences, cls=cls)
        if self.config.pooling == "cls_token":
            pooled = h[:, 0, :]
        elif self.config.pooling == "last_token":
            last = mask.sum(axis=1) - 1
            pooled = h[np.arange(len(sentences)), last]
        else:
            pooled = attention_pool(h, self.pool_head, mask)
        return ad.softmax(self.head(pooled), axis=-1)

    def predict(self, sentences: Sequence[Sequence[str]], batch_size: int = 256):
        out: list[IndicatorPrediction] = []
        for start in range(0, len(sentences), batch_size):
            probs = self.probabilities(sentences[start:start + batch_size]).data
            for p0, p1 in probs:
                out.append(IndicatorPrediction(int(p1 > p0), float(p1)))
        return out

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2))
        (directory / "vocab.json").write_text(json.dumps(self.vocab.to_dict(), ensure_ascii=False))
        self.store.save(directory / "params.json", with_state=False)

    @classmethod
    def load(cls, directory: str | Path) -> "IndicatorModel":
        directory = Path(directory)
        if not (directory / "config.json").exists():
            raise ConfigError(f"{directory} is not an indicator checkpoint")
        config = IndicatorConfig.from_dict(json.loads((directory / "config.json").read_text()))
        vocab = Vocabulary.from_dict(json.loads((directory / "vocab.json").read_text()))
        model = cls(config, vocab)
        model.store.load(directory / "params.json")
        return model


def predict_sentence(tokens: Sequence[str], model: IndicatorModel) -> IndicatorPrediction:
    return model.predict([tokens])[0]


def _split_holdout(n: int, fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    k = int(round(n * fraction))
    if k == 0 or k == n:
        return order, order
    return order[k:], order[:k]


def train_indicator(examples: Sequence[SentenceExample],
                    config: IndicatorConfig | None = None) -> IndicatorModel:
    """Mini-batch Adam on cross-entropy; the parameters with the best held-out
    F1 (checked every ``eval_every`` steps) are kept."""
    config = config or IndicatorConfig()
    config.validate()
    labels = np.array([e.label for e in examples])
    if len(examples) == 0 or len(set(labels.tolist())) < 2:
        raise DegenerateDataset("indicator training needs examples of both classes")
    vocab = Vocabulary.build((e.tokens for e in examples), config.encoder.buckets)
    model = IndicatorModel(config, vocab)
    rng = np.random.default_rng(config.seed)
    train_idx, held_idx = _split_holdout(len(examples), config.holdout_fraction, rng)
    held_tokens = [examples[i].tokens for i in held_idx]
    held_labels = labels[held_idx].tolist()

    def held_f1() -> float:
        preds = [p.label for p in model.predict(held_tokens)]
        return binary_f1(preds, held_labels)

    best_f1, best = held_f1(), model.store.values()
    for step in range(config.steps):
        step_rng = np.random.default_rng([config.seed, step])
        size = min(config.batch_size, len(train_idx))
        batch = train_idx[step_rng.choice(len(train_idx), size=size, replace=False)]
        model.store.zero_grad()
        with Tape() as tape:
            probs = model.probabilities([examples[i].tokens for i in batch])
            y = labels[batch]
            picked = probs[np.arange(size), y]
            loss = -ad.mean(ad.log(ad.clamp(picked, 1e-12, 1.0)))
        ad.backward(loss, tape, model.store)
        ad.adam_step(model.store, config.learning_rate)
        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            f1 = held_f1()
            log.debug("indicator step %d loss %.5f held-out F1 %.4f", step + 1, loss.item(), f1)
            if f1 > best_f1:
                best_f1, best = f1, model.store.values()
    model.store.load_values(best)
    model.best_f1 = best_f1
    return model


def annotate_corpus(corpus: Corpus, model: IndicatorModel,
                    out_path: str | Path | None = None) -> dict[str, ElementAnnotation]:
    """One predicted flag per sentence of every case, optionally cached as elements.jsonl."""
    out: dict[str, ElementAnnotation] = {}
    for cid in sorted(corpus.cases):
        case = corpus.cases[cid]
        sentences = [case.sentence(k) for k in range(case.sentence_count)]
        flags = tuple(bool(p.label) for p in model.predict(sentences))
        out[cid] = ElementAnnotation(cid, flags)
    if out_path is not None:
        write_jsonl(out_path, (annotation_to_record(a) for a in out.values()))
    return out
