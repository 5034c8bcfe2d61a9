"""Interaction-focused matching of a query case against a candidate case.

Pipeline per (query, candidate) pair: scaled dot-product attention in both
directions, strengthened representations, a shared recurrent aggregator,
average/max pooling, and an MLP over the difference of the two pair vectors
of a triple. All functions accept a leading batch axis plus optional masks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .errors import ConfigError, ShapeError
from .nn import Bidirectional, Linear

PROB_FLOOR = 1e-12


@dataclass
class MatchConfig:
    d: int = 64
    h_rnn: int = 64
    mlp_hidden: int = 128
    use_ba: bool = True
    use_sr: bool = True
    rnn_kind: str = "lstm"

    def validate(self) -> None:
        if min(self.d, self.h_rnn, self.mlp_hidden) < 1:
            raise ConfigError("matcher sizes must be >= 1")
        if self.rnn_kind not in ("lstm", "gru", "none"):
            raise ConfigError(f"unknown rnn_kind {self.rnn_kind!r}")

    @property
    def strengthened_dim(self) -> int:
        return (4 if self.use_sr else 2) * self.d

    @property
    def match_dim(self) -> int:
        return 8 * self.h_rnn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionRecord:
    """``a_to_b[i, j]`` sums to 1 over j; ``b_to_a[i, j]`` sums to 1 over i."""

    scores: np.ndarray
    a_to_b: np.ndarray
    b_to_a: np.ndarray


def _pair_mask(mask_a, mask_b, shape):
    if mask_a is None and mask_b is None:
        return None
    ma = np.ones(shape[:-1], dtype=bool) if mask_a is None else np.asarray(mask_a, dtype=bool)
    mb = (np.ones(shape[:-2] + shape[-1:], dtype=bool) if mask_b is None
          else np.asarray(mask_b, dtype=bool))
    return ma[..., :, None] & mb[..., None, :]


def bidirectional_attention(h_a: Tensor, h_b: Tensor, mask_a=None, mask_b=None):
    """Return ``(h_a_tilde, h_b_tilde, AttentionRecord)`` for ``(.., o, d)`` and ``(.., m, d)``."""
    if h_a.shape[-1] != h_b.shape[-1]:
        raise ShapeError(f"bidirectional_attention: dimension mismatch {h_a.shape} vs {h_b.shape}")
    d = h_a.shape[-1]
    scores = ad.scale(h_a @ ad.transpose(h_b), 1.0 / math.sqrt(d))
    pair = _pair_mask(mask_a, mask_b, scores.shape)
    a_to_b = ad.softmax(scores, axis=-1, mask=pair)
    b_to_a = ad.softmax(scores, axis=-2, mask=pair)
    h_a_tilde = a_to_b @ h_b
    h_b_tilde = ad.transpose(b_to_a) @ h_a
    return h_a_tilde, h_b_tilde, AttentionRecord(scores.data, a_to_b.data, b_to_a.data)


def strengthen(h: Tensor, h_tilde: Tensor, use_sr: bool = True) -> Tensor:
    if h.shape != h_tilde.shape:
        raise ShapeError(f"strengthen: shape mismatch {h.shape} vs {h_tilde.shape}")
    if not use_sr:
        return ad.concat([h, h_tilde], axis=-1)
    return ad.concat([h, h_tilde, h - h_tilde, h * h_tilde], axis=-1)


class Aggregator:
    """Shared sequence aggregator emitting width ``2 * h_rnn`` per step."""

    def __init__(self, store: ParameterStore, name: str, kind: str, in_dim: int, h_rnn: int,
                 rng: np.random.Generator):
        self.kind = kind
        if kind == "none":
            self.proj = Linear(store, f"{name}.proj", in_dim, 2 * h_rnn, rng)
        else:
            self.rnn = Bidirectional(store, name, kind, in_dim, h_rnn, rng)

    def __call__(self, m: Tensor, mask: np.ndarray) -> Tensor:
        if self.kind == "none":
            return self.proj(m)
        return self.rnn(m, mask)


def aggregate(m_a: Tensor, m_b: Tensor, aggregator: Aggregator, mask_a=None, mask_b=None):
    """Run the shared aggregator over each side independently (state reset per document)."""
    if (m_a.ndim == 3 and m_b.ndim == 3 and m_a.shape[1] == m_b.shape[1]
            and mask_a is not None and mask_b is not None):
        # both sides share a time axis: one stacked pass, rows stay independent
        batch = m_a.shape[0]
        mk = np.concatenate([np.asarray(mask_a, bool), np.asarray(mask_b, bool)], axis=0)
        v = aggregator(ad.concat([m_a, m_b], axis=0), mk)
        return v[:batch], v[batch:]
    out = []
    for m, mask in ((m_a, mask_a), (m_b, mask_b)):
        batched = m.ndim == 3
        x = m if batched else ad.reshape(m, (1,) + m.shape)
        mk = (np.ones(x.shape[:2], dtype=bool) if mask is None
              else np.asarray(mask, dtype=bool).reshape(x.shape[:2]))
        v = aggregator(x, mk)
        out.append(v if batched else v[0])
    return out[0], out[1]


def pool_and_concat(v_a: Tensor, v_b: Tensor, mask_a=None, mask_b=None) -> Tensor:
    """``[avg(v_a); max(v_a); avg(v_b); max(v_b)]`` over the time axis."""
    parts = []
    for v, mask in ((v_a, mask_a), (v_b, mask_b)):
        m = None if mask is None else np.asarray(mask, dtype=bool)[..., None]
        parts.append(ad.avg_pool(v, axis=-2, mask=m))
        parts.append(ad.max_pool(v, axis=-2, mask=m))
    return ad.concat(parts, axis=-1)


class Classifier:
    """Affine -> tanh -> affine to two logits -> softmax; returns P(class 1)."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.hidden = Linear(store, f"{name}.hidden", in_dim, hidden, rng)
        self.out = Linear(store, f"{name}.out", hidden, 2, rng)

    def __call__(self, h_ab: Tensor, h_ac: Tensor) -> Tensor:
        if h_ab.shape != h_ac.shape:
            raise ShapeError(f"classify: shape mismatch {h_ab.shape} vs {h_ac.shape}")
        return self.from_difference(h_ab - h_ac)

    def from_difference(self, diff: Tensor) -> Tensor:
        logits = self.out(ad.tanh(self.hidden(diff)))
        return ad.softmax(logits, axis=-1)[..., 1]


def classify(h_ab: Tensor, h_ac: Tensor, classifier: Classifier) -> Tensor:
    return classifier(h_ab, h_ac)


def main_loss(y_hat: Tensor, y) -> Tensor:
    """Mean binary cross-entropy of P(class 1) against labels in {0, 1}."""
    y = np.asarray(y, dtype=np.float64)
    p = ad.clamp(y_hat, PROB_FLOOR, 1.0 - PROB_FLOOR)
    losses = -(ad.log(p) * y + ad.log(1.0 - p) * (1.0 - y))
    return ad.mean(losses)


class Matcher:
    """Parameters and forward pass for batched (query, candidate) pairs."""

    def __init__(self, config: MatchConfig, store: ParameterStore, rng: np.random.Generator,
                 prefix: str = "matcher"):
        config.validate()
        self.config = config
        self.aggregator = Aggregator(
            store, f"{prefix}.agg", config.rnn_kind, config.strengthened_dim, config.h_rnn, rng
        )
        self.classifier = Classifier(
            store, f"{prefix}.mlp", config.match_dim, config.mlp_hidden, rng
        )

    def represent(self, h_a: Tensor, mask_a, h_b: Tensor, mask_b, keep_attention: bool = False):
        """Match vectors ``H`` of shape ``(pairs, 8 * h_rnn)``."""
        cfg = self.config
        record = None
        if cfg.use_ba:
            ta, tb, record = bidirectional_attention(h_a, h_b, mask_a, mask_b)
        else:
            ta, tb = h_a, h_b
        m_a = strengthen(h_a, ta, cfg.use_sr)
        m_b = strengthen(h_b, tb, cfg.use_sr)
        v_a, v_b = aggregate(m_a, m_b, self.aggregator, mask_a, mask_b)
        rep = pool_and_concat(v_a, v_b, mask_a, mask_b)
        return (rep, record) if keep_attention else rep
