"""Joint training of the matching loss and both contrastive losses.

Each step draws a triple batch and an element-view batch from an RNG seeded
by ``(seed, step)``, so a run is reproducible bit for bit and can be resumed
from any checkpoint without replaying earlier steps.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Tensor
from .contrastive import (
    AttentionPoolHead,
    ElementViewInstance,
    attention_pool,
    build_case_view_batch,
    build_element_positive,
    case_view_loss,
    element_view_loss_pooled,
)
from .corpus import DEFAULT_MAX_TOKENS, CaseDocument, Corpus, ElementAnnotation, Triple, augment_swap
from .encoder import Encoder, EncoderConfig, Vocabulary, load_fixture
from .errors import ConfigError, FormatError
from .evalkit import MetricsReport, macro_metrics
from .matcher import MatchConfig, Matcher, main_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    use_case_view: bool = True
    use_element_view: bool = True
    lambda_case: float = 0.01
    lambda_ele: float = 0.01
    tau1: float = 0.1
    tau2: float = 0.1
    l1: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 16
    total_steps: int = 500
    warmup_fraction: float = 0.1
    eval_every: int = 50
    augment: bool = True
    max_len: int = DEFAULT_MAX_TOKENS
    tokenize: str = "character"
    seed: int = 0

    def __post_init__(self):
        self.match.d = self.encoder.d

    def validate(self) -> None:
        self.encoder.validate()
        self.match.d = self.encoder.d
        self.match.validate()
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.total_steps < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1, total_steps >= 0")
        if self.use_element_view and self.batch_size < 2:
            raise ConfigError("element-view training needs batch_size >= 2")
        if self.lambda_case < 0 or self.lambda_ele < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ConfigError("temperatures must be > 0")
        if self.l1 < 0 or self.max_len < 1 or self.learning_rate <= 0:
            raise ConfigError("l1 must be >= 0, max_len >= 1, learning_rate > 0")
        if self.tokenize not in ("character", "whitespace"):
            raise ConfigError(f"unknown tokenize mode {self.tokenize!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            enc = EncoderConfig(**payload.pop("encoder", {}))
            match = MatchConfig(**payload.pop("match", {}))
            return cls(encoder=enc, match=match, **payload)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None


def lr_at(step: int, total_steps: int, warmup_fraction: float, base_lr: float) -> float:
    """Linear ramp 0 -> base_lr over the warmup steps, then linear decay to 0."""
    warm = int(round(warmup_fraction * total_steps))
    if step < warm:
        return base_lr * step / warm
    return base_lr * max(0, total_steps - step) / max(1, total_steps - warm)


def total_loss(main, case, ele, lambda_case, lambda_ele):
    """Weighted sum of the three objectives; works on floats or tensors."""
    return main + lambda_case * case + lambda_ele * ele


class RetrievalModel:
    """Encoder, matcher and attention-pool head over one parameter store."""

    def __init__(self, config: TrainConfig, vocab: Vocabulary,
                 fixture: dict[str, np.ndarray] | None = None):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        self.encoder = Encoder(config.encoder, vocab, self.store, rng, "encoder", fixture)
        self.matcher = Matcher(config.match, self.store, rng, "matcher")
        self.pool_head = AttentionPoolHead(self.store, "pool", config.encoder.d, rng)

    def encode_cases(self, cases: Sequence[CaseDocument]):
        h, mask = self.encoder.encode_batch([c.tokens for c in cases], [c.id for c in cases])
        return h, mask, {c.id: i for i, c in enumerate(cases)}

    def forward(self, triples: Sequence[Triple], cases: dict[str, CaseDocument],
                keep_attention: bool = False) -> dict:
        """P(y=1) for each triple, plus the encoded cases for the contrastive terms."""
        ids = list(dict.fromkeys(
            cid for t in triples for cid in (t.query_id, t.cand_b_id, t.cand_c_id)
        ))
        h, mask, row_of = self.encode_cases([cases[i] for i in ids])
        n = len(triples)
        q = [row_of[t.query_id] for t in triples] * 2
        c = [row_of[t.cand_b_id] for t in triples] + [row_of[t.cand_c_id] for t in triples]
        rep = self.matcher.represent(
            ad.take(h, q), mask[q], ad.take(h, c), mask[c], keep_attention=keep_attention
        )
        record = None
        if keep_attention:
            rep, record = rep
        prob = self.matcher.classifier(rep[:n], rep[n:])
        return {"prob": prob, "h": h, "mask": mask, "row_of": row_of, "rep": rep,
                "attention": record}

    def objective(self, triples: Sequence[Triple], cases: dict[str, CaseDocument],
                  element_instances: Sequence[ElementViewInstance] | None = None,
                  lambda_case: float | None = None, lambda_ele: float | None = None):
        """Total training loss and its parts for one batch."""
        cfg = self.config
        lambda_case = cfg.lambda_case if lambda_case is None else lambda_case
        lambda_ele = cfg.lambda_ele if lambda_ele is None else lambda_ele
        out = self.forward(triples, cases)
        labels = np.array([t.label for t in triples], dtype=np.float64)
        main = main_loss(out["prob"], labels)
        parts = {"main": main, "case": None, "ele": None}
        total = main
        if cfg.use_case_view:
            pooled = attention_pool(out["h"], self.pool_head, out["mask"])
            batch = build_case_view_batch(pooled, out["row_of"], triples)
            parts["case"] = case_view_loss(batch, cfg.tau1)
            total = total + lambda_case * parts["case"]
        if cfg.use_element_view:
            if not element_instances or len(element_instances) < 2:
                raise ConfigError("element-view training needs at least 2 instances per batch")
            seqs = [i.tokens for i in element_instances] + [
                i.positive_tokens for i in element_instances
            ]
            ids = [i.case_id for i in element_instances] * 2
            h, mask = self.encoder.encode_batch(seqs, ids)
            pooled = attention_pool(h, self.pool_head, mask)
            k = len(element_instances)
            parts["ele"] = element_view_loss_pooled(pooled[:k], pooled[k:], cfg.tau2)
            total = total + lambda_ele * parts["ele"]
        return total, parts

    def predict_proba(self, triples: Sequence[Triple], cases: dict[str, CaseDocument],
                      batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(triples), batch_size):
            out.append(self.forward(triples[start:start + batch_size], cases)["prob"].data)
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, triples, cases, batch_size: int = 64) -> list[int]:
        return [int(p > 0.5) for p in self.predict_proba(triples, cases, batch_size)]


@dataclass
class Checkpoint:
    """Training state at ``step`` plus the best-on-validation parameters so far."""

    config: TrainConfig
    vocab: Vocabulary
    params: dict                     # ParameterStore.snapshot()
    step: int
    best_val_accuracy: float | None
    best_step: int | None
    best_params: dict[str, np.ndarray]
    loss_log: list[dict] = field(default_factory=list)
    val_log: list[dict] = field(default_factory=list)

    def model(self, which: str = "best", fixture=None) -> RetrievalModel:
        model = RetrievalModel(copy.deepcopy(self.config), self.vocab, fixture)
        if which == "best":
            model.store.load_values(self.best_params)
        else:
            model.store.restore(self.params)
        return model

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2))
        (directory / "vocab.json").write_text(json.dumps(self.vocab.to_dict(), ensure_ascii=False))
        store = _store_from(self.config, self.vocab)
        store.restore(self.params)
        store.save(directory / "params.json", with_state=True)
        store.load_values(self.best_params)
        store.save(directory / "best_params.json", with_state=False)
        state = {
            "step": self.step,
            "best_val_accuracy": self.best_val_accuracy,
            "best_step": self.best_step,
            "loss_log": self.loss_log,
            "val_log": self.val_log,
        }
        (directory / "state.json").write_text(json.dumps(state))

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        for name in ("config.json", "vocab.json", "params.json", "best_params.json", "state.json"):
            if not (directory / name).exists():
                raise ConfigError(f"{directory} is not a checkpoint (missing {name})")
        try:
            config = TrainConfig.from_dict(json.loads((directory / "config.json").read_text()))
            vocab = Vocabulary.from_dict(json.loads((directory / "vocab.json").read_text()))
            state = json.loads((directory / "state.json").read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{directory}: {exc}") from None
        store = _store_from(config, vocab)
        store.load(directory / "params.json")
        params = store.snapshot()
        store.load(directory / "best_params.json")
        return cls(config, vocab, params, state["step"], state["best_val_accuracy"],
                   state["best_step"], store.values(), state["loss_log"], state["val_log"])


def _store_from(config: TrainConfig, vocab: Vocabulary) -> ParameterStore:
    return RetrievalModel(copy.deepcopy(config), vocab, _shape_only_fixture(config)).store


def _shape_only_fixture(config: TrainConfig):
    if config.encoder.kind != "fixture":
        return None
    return {"_": np.zeros((1, config.encoder.d))}


def build_vocabulary(corpus: Corpus, buckets: int) -> Vocabulary:
    return Vocabulary.build((corpus.cases[c].tokens for c in sorted(corpus.cases)), buckets)


def _element_pool(corpus: Corpus, annotations: dict[str, ElementAnnotation] | None):
    train_ids = corpus.split_case_ids("train")
    if annotations is None:
        return []
    return [cid for cid in train_ids if cid in annotations]


def sample_element_batch(corpus: Corpus, annotations, pool: Sequence[str], size: int, l1: int,
                         rng: np.random.Generator) -> list[ElementViewInstance]:
    pick = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
    seeds = rng.integers(0, 2**63 - 1, size=len(pick))
    return [
        build_element_positive(corpus.cases[pool[i]], annotations[pool[i]], l1, int(s))
        for i, s in zip(pick, seeds)
    ]


def evaluate_model(model: RetrievalModel, triples: Sequence[Triple],
                   cases: dict[str, CaseDocument]) -> MetricsReport:
    return macro_metrics(model.predict(triples, cases), [t.label for t in triples])


def train(corpus: Corpus, config: TrainConfig,
          annotations: dict[str, ElementAnnotation] | None = None,
          resume: Checkpoint | None = None, stop_at: int | None = None,
          fixture: dict[str, np.ndarray] | None = None,
          on_step: Callable[[dict], None] | None = None) -> Checkpoint:
    """Optimise the weighted total loss; returns the checkpoint at the last step run.

    ``stop_at`` halts early (for resumable runs); ``resume`` continues a
    checkpoint's state under its own configuration.
    """
    if resume is not None:
        config = copy.deepcopy(resume.config)
    config.validate()
    annotations = annotations if annotations is not None else corpus.annotations
    train_triples = corpus.triples("train")
    if not train_triples:
        raise ConfigError("corpus has no train triples")
    if config.augment:
        train_triples = augment_swap(train_triples)
    pool = _element_pool(corpus, annotations) if config.use_element_view else []
    if config.use_element_view and len(pool) < 2:
        raise ConfigError("element-view training needs annotations for >= 2 train cases")
    val_triples = corpus.triples("validation")

    if config.encoder.kind == "fixture" and fixture is None:
        fixture = load_fixture(config.encoder.fixture_path)
    vocab = resume.vocab if resume is not None else build_vocabulary(corpus, config.encoder.buckets)
    model = RetrievalModel(config, vocab, fixture)
    if resume is not None:
        model.store.restore(resume.params)
        step = resume.step
        best_acc, best_step = resume.best_val_accuracy, resume.best_step
        best_params = {k: v.copy() for k, v in resume.best_params.items()}
        loss_log, val_log = list(resume.loss_log), list(resume.val_log)
    else:
        step = 0
        best_acc, best_step, best_params = None, None, model.store.values()
        loss_log, val_log = [], []

    end = config.total_steps if stop_at is None else min(stop_at, config.total_steps)
    cases = corpus.cases
    while step < end:
        rng = np.random.default_rng([config.seed, step])
        size = min(config.batch_size, len(train_triples))
        batch = [train_triples[i] for i in rng.choice(len(train_triples), size, replace=False)]
        instances = None
        if config.use_element_view:
            instances = sample_element_batch(corpus, annotations, pool, config.batch_size,
                                             config.l1, rng)
        lr = lr_at(step, config.total_steps, config.warmup_fraction, config.learning_rate)
        model.store.zero_grad()
        with Tape() as tape:
            loss, parts = model.objective(batch, cases, instances)
        ad.backward(loss, tape, model.store)
        ad.adam_step(model.store, lr)
        step += 1
        entry = {"step": step, "lr": lr, "loss": loss.item(),
                 **{k: (None if v is None else v.item()) for k, v in parts.items()}}
        loss_log.append(entry)
        if on_step is not None:
            on_step(entry)
        if val_triples and (step % config.eval_every == 0 or step == config.total_steps):
            acc = evaluate_model(model, val_triples, cases).accuracy
            val_log.append({"step": step, "accuracy": acc})
            log.info("step %d loss %.5f validation accuracy %.4f", step, entry["loss"], acc)
            if best_acc is None or acc > best_acc:
                best_acc, best_step, best_params = acc, step, model.store.values()

    if not val_triples:
        best_step, best_params = step, model.store.values()
    return Checkpoint(config, vocab, model.store.snapshot(), step, best_acc, best_step,
                      best_params, loss_log, val_log)


def evaluate_checkpoint(checkpoint: Checkpoint, triples: Sequence[Triple],
                        cases: dict[str, CaseDocument], fixture=None) -> MetricsReport:
    """Metrics of the selected (best-on-validation) parameters; P(y=1) > 0.5 predicts 1."""
    if checkpoint.config.encoder.kind == "fixture" and fixture is None:
        fixture = load_fixture(checkpoint.config.encoder.fixture_path)
    return evaluate_model(checkpoint.model("best", fixture), triples, cases)
