"""Attention pooling and the case-view / element-view contrastive objectives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .corpus import CaseDocument, ElementAnnotation, Triple
from .encoder import DEL, Encoder
from .errors import ConfigError, ContractError, IntegrityError


class AttentionPoolHead:
    """Parameters W (d x d), b (d) and the context vector u_w (d)."""

    def __init__(self, store: ParameterStore, name: str, d: int, rng: np.random.Generator):
        self.W = store.add(f"{name}.W", (d, d), rng, fan_in=d)
        self.b = store.add(f"{name}.b", (d,), rng, fan_in=d)
        self.u_w = store.add(f"{name}.u_w", (d,), rng, fan_in=d)
        self.d = d


def attention_pool(h: Tensor, head: AttentionPoolHead, mask=None, return_weights: bool = False):
    """Pool ``(..., n, d)`` token vectors into ``(..., d)``.

    u_i = relu(W h_i + b), alpha = softmax_i <u_i, u_w>, output sum_i alpha_i u_i.
    """
    u = ad.relu(h @ head.W + head.b)
    scores = ad.reshape(u @ ad.reshape(head.u_w, (head.d, 1)), u.shape[:-1])
    alpha = ad.softmax(scores, axis=-1, mask=mask)
    pooled = ad.sum(u * ad.reshape(alpha, alpha.shape + (1,)), axis=-2)
    return (pooled, alpha) if return_weights else pooled


def info_nce(anchors: Tensor, candidates: Tensor, mask, tau: float) -> Tensor:
    """Mean over anchors of -log softmax(sim / tau)[positive]; candidate column 0 is the positive.

    ``anchors`` is ``(N, d)``, ``candidates`` ``(N, C, d)``, ``mask`` ``(N, C)``
    marks real candidates (None means all).
    """
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    n = anchors.shape[0]
    sims = ad.cosine_similarity(ad.reshape(anchors, (n, 1, anchors.shape[-1])), candidates)
    logp = ad.log_softmax(ad.scale(sims, 1.0 / tau), axis=-1, mask=mask)
    return -ad.mean(logp[:, 0])


@dataclass
class CaseViewBatch:
    anchors: Tensor          # (N, d), always the query case
    positives: Tensor        # (N, d)
    negatives: Tensor        # (N, K, d), padded
    negative_mask: np.ndarray  # (N, K)


def build_case_view_batch(pooled: Tensor, row_of: dict[str, int],
                          triples: Sequence[Triple]) -> CaseViewBatch:
    """Positive is B when the label is 0, else C; every other distinct case of the
    batch (the in-triple negative and all cases of the other triples) is a negative.
    Cases identical to the anchor or the positive are never used as negatives."""
    order = list(dict.fromkeys(
        cid for t in triples for cid in (t.query_id, t.cand_b_id, t.cand_c_id)
    ))
    a_idx, p_idx, negs = [], [], []
    for t in triples:
        pos = t.cand_b_id if t.label == 0 else t.cand_c_id
        neg_ids = [c for c in order if c not in (t.query_id, pos)]
        if not neg_ids:
            raise ContractError(f"triple {t} has no negative case in its batch")
        a_idx.append(row_of[t.query_id])
        p_idx.append(row_of[pos])
        negs.append([row_of[c] for c in neg_ids])
    width = max(len(r) for r in negs)
    neg_idx = np.zeros((len(triples), width), dtype=np.int64)
    neg_mask = np.zeros((len(triples), width), dtype=bool)
    for i, row in enumerate(negs):
        neg_idx[i, : len(row)] = row
        neg_mask[i, : len(row)] = True
    return CaseViewBatch(
        ad.take(pooled, a_idx), ad.take(pooled, p_idx), ad.take(pooled, neg_idx), neg_mask
    )


def case_view_loss(batch: CaseViewBatch, tau1: float) -> Tensor:
    n, d = batch.anchors.shape
    candidates = ad.concat(
        [ad.reshape(batch.positives, (n, 1, d)), batch.negatives], axis=1
    )
    mask = np.concatenate([np.ones((n, 1), dtype=bool), batch.negative_mask], axis=1)
    return info_nce(batch.anchors, candidates, mask, tau1)


@dataclass
class ElementViewInstance:
    case_id: str
    tokens: tuple[str, ...]
    positive_tokens: tuple[str, ...]
    deleted_sentences: list[int] = field(default_factory=list)
    deleted_lengths: list[int] = field(default_factory=list)
    degenerate: bool = False

    @property
    def deleted_total(self) -> int:
        return sum(self.deleted_lengths)

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "deleted_sentences": list(self.deleted_sentences),
            "deleted_total": self.deleted_total,
            "positive_tokens": list(self.positive_tokens),
        }


def build_element_positive(case: CaseDocument, annotation: ElementAnnotation | Sequence[bool],
                           l1: int, seed) -> ElementViewInstance:
    """Replace tokens of randomly drawn non-element sentences with [DEL] until
    ``l1`` tokens are gone; the last drawn sentence may be masked only on its
    leading tokens. ``seed`` is an int or a numpy Generator."""
    flags = annotation.flags if isinstance(annotation, ElementAnnotation) else tuple(annotation)
    if len(flags) != case.sentence_count:
        raise IntegrityError(
            f"{len(flags)} flags for {case.sentence_count} sentences in case {case.id!r}"
        )
    if l1 < 0:
        raise ConfigError("deletion budget L1 must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    candidates = [k for k, f in enumerate(flags) if not f]
    positive = list(case.tokens)
    chosen, lengths = [], []
    budget = l1
    for k in rng.permutation(len(candidates)):
        if budget <= 0:
            break
        sent = candidates[int(k)]
        start, end = case.sentence_spans[sent]
        n = min(end - start, budget)
        positive[start:start + n] = [DEL] * n
        chosen.append(sent)
        lengths.append(n)
        budget -= n
    return ElementViewInstance(
        case.id, case.tokens, tuple(positive), chosen, lengths, degenerate=not candidates
    )


def element_view_loss_pooled(originals: Tensor, positives: Tensor, tau2: float) -> Tensor:
    """Each original's positive is its own masked copy; the other 2N-2 pooled
    sequences of the batch are its negatives."""
    n, d = originals.shape
    if n < 2:
        raise ContractError("element-view loss needs a batch of at least 2 instances")
    pooled = ad.concat([originals, positives], axis=0)
    idx = np.array(
        [[n + i] + [j for j in range(2 * n) if j not in (i, n + i)] for i in range(n)],
        dtype=np.int64,
    )
    return info_nce(originals, ad.take(pooled, idx), None, tau2)


def element_view_loss(instances: Sequence[ElementViewInstance], encoder: Encoder,
                      head: AttentionPoolHead, tau2: float) -> Tensor:
    """Encode and pool originals and positives of N instances, then apply the loss."""
    n = len(instances)
    if n < 2:
        raise ContractError("element-view loss needs a batch of at least 2 instances")
    seqs = [i.tokens for i in instances] + [i.positive_tokens for i in instances]
    ids = [i.case_id for i in instances] * 2
    h, mask = encoder.encode_batch(seqs, ids)
    pooled = attention_pool(h, head, mask)
    return element_view_loss_pooled(pooled[:n], pooled[n:], tau2)
