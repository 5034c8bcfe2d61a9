"""Gradient check of the complete training objective on a tiny seeded corpus."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import GradcheckReport, gradcheck
from .contrastive import build_element_positive
from .corpus import Corpus, ElementAnnotation, Triple, build_case
from .encoder import EncoderConfig
from .errors import ConfigError
from .matcher import MatchConfig
from .trainer import RetrievalModel, TrainConfig, build_vocabulary


@dataclass
class GradcheckConfig:
    d: int = 8
    h_rnn: int = 6
    mlp_hidden: int = 8
    encoder_hidden: int = 4
    encoder_kind: str = "lookup_recurrent"
    max_tokens: int = 10
    triples: int = 2
    lambda_case: float = 1.0
    lambda_ele: float = 1.0
    l1: int = 3
    eps: float = 1e-5
    tolerance: float = 1e-4
    max_coordinates: int = 10_000
    seed: int = 0

    def validate(self) -> None:
        if self.max_tokens < 3 or self.triples < 1:
            raise ConfigError("gradcheck needs max_tokens >= 3 and triples >= 1")
        if self.encoder_kind == "fixture":
            raise ConfigError("gradcheck builds its own corpus; use a lookup encoder kind")

    def to_dict(self) -> dict:
        return asdict(self)


def tiny_corpus(n_triples: int, max_tokens: int, seed: int) -> Corpus:
    """Random short cases (sentences end in '.') with random element flags."""
    rng = np.random.default_rng(seed)
    words = [f"t{i}" for i in range(12)]
    cases, annotations, triples = {}, {}, []
    for k in range(n_triples):
        ids = [f"q{k}", f"b{k}", f"c{k}"]
        for cid in ids:
            n = int(rng.integers(3, max_tokens + 1))
            toks = [str(w) for w in rng.choice(words, size=n)]
            cut = int(rng.integers(1, n - 1))
            toks[cut] = "."
            case = build_case(cid, tokens=toks)
            cases[cid] = case
            flags = [bool(f) for f in rng.integers(0, 2, size=case.sentence_count)]
            annotations[cid] = ElementAnnotation(cid, tuple(flags))
        triples.append(Triple(ids[0], ids[1], ids[2], int(rng.integers(0, 2))))
    return Corpus(cases, {"train": triples}, annotations)


def objective_gradcheck(config: GradcheckConfig | None = None) -> GradcheckReport:
    """Analytic vs central-difference gradients of the weighted total loss
    (matching loss plus both contrastive terms) over every parameter."""
    config = config or GradcheckConfig()
    config.validate()
    corpus = tiny_corpus(config.triples, config.max_tokens, config.seed)
    train_cfg = TrainConfig(
        encoder=EncoderConfig(kind=config.encoder_kind, d=config.d,
                              hidden=config.encoder_hidden, buckets=2),
        match=MatchConfig(h_rnn=config.h_rnn, mlp_hidden=config.mlp_hidden),
        lambda_case=config.lambda_case, lambda_ele=config.lambda_ele,
        l1=config.l1, batch_size=max(2, config.triples), seed=config.seed,
    )
    model = RetrievalModel(train_cfg, build_vocabulary(corpus, 2))
    triples = corpus.triples("train")
    rng = np.random.default_rng(config.seed)
    instances = [
        build_element_positive(corpus.cases[cid], corpus.annotations[cid], config.l1, rng)
        for cid in sorted(corpus.cases)
    ]

    def objective():
        return model.objective(triples, corpus.cases, instances)[0]

    return gradcheck(objective, model.store, eps=config.eps, tolerance=config.tolerance,
                     max_coordinates=config.max_coordinates, seed=config.seed)
