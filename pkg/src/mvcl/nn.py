"""Affine and recurrent layers built on the autodiff primitives.

Sequences are batched as ``(batch, time, features)`` with a boolean
``(batch, time)`` mask; padding sits at the end of each row. Masked steps
carry the previous state forward, so a right-to-left pass starts from the
zero state at each row's last real token without reversing anything.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .autodiff.recurrent import gru_sequence, lstm_sequence


class Linear:
    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, init: str = "uniform"):
        self.weight = store.add(f"{name}.weight", (in_dim, out_dim), rng, fan_in=in_dim, init=init)
        self.bias = store.add(f"{name}.bias", (out_dim,), rng, fan_in=in_dim, init=init)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return ad.reshape(ad.reshape(x, (1, -1)) @ self.weight, (-1,)) + self.bias
        return x @ self.weight + self.bias


class LSTM:
    """Single-direction LSTM with input, forget, output gates and a tanh candidate.

    ``fused=True`` records the whole pass as one tape op; ``False`` composes
    it from elementwise primitives step by step (same values, much slower).
    """

    def __init__(self, store: ParameterStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator, fused: bool = True):
        self.hidden = hidden
        self.fused = fused
        self.w_in = store.add(f"{name}.w_in", (in_dim, 4 * hidden), rng, fan_in=in_dim)
        self.w_rec = store.add(f"{name}.w_rec", (hidden, 4 * hidden), rng, fan_in=hidden)
        self.bias = store.add(f"{name}.bias", (4 * hidden,), rng, fan_in=hidden)

    def __call__(self, x: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
        batch, steps, _ = x.shape
        n = self.hidden
        projected = x @ self.w_in + self.bias
        if self.fused:
            return lstm_sequence(projected, self.w_rec, mask, reverse)
        h = ad.Tensor(np.zeros((batch, n)))
        c = ad.Tensor(np.zeros((batch, n)))
        outputs: list[Tensor | None] = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            z = projected[:, t, :] + h @ self.w_rec
            i = ad.sigmoid(z[:, 0:n])
            f = ad.sigmoid(z[:, n:2 * n])
            g = ad.tanh(z[:, 2 * n:3 * n])
            o = ad.sigmoid(z[:, 3 * n:4 * n])
            c_new = f * c + i * g
            h_new = o * ad.tanh(c_new)
            live = mask[:, t:t + 1]
            c = ad.where(live, c_new, c)
            h = ad.where(live, h_new, h)
            outputs[t] = h
        return ad.stack(outputs, axis=1)


class GRU:
    """Single-direction GRU: update gate z, reset gate r, candidate tanh(W x + U (r*h) + b)."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator, fused: bool = True):
        self.hidden = hidden
        self.fused = fused
        self.w_in = store.add(f"{name}.w_in", (in_dim, 3 * hidden), rng, fan_in=in_dim)
        self.w_gates = store.add(f"{name}.w_gates", (hidden, 2 * hidden), rng, fan_in=hidden)
        self.w_cand = store.add(f"{name}.w_cand", (hidden, hidden), rng, fan_in=hidden)
        self.bias = store.add(f"{name}.bias", (3 * hidden,), rng, fan_in=hidden)

    def __call__(self, x: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
        batch, steps, _ = x.shape
        n = self.hidden
        projected = x @ self.w_in + self.bias
        if self.fused:
            return gru_sequence(projected, self.w_gates, self.w_cand, mask, reverse)
        h = ad.Tensor(np.zeros((batch, n)))
        outputs: list[Tensor | None] = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            xt = projected[:, t, :]
            gates = xt[:, 0:2 * n] + h @ self.w_gates
            z = ad.sigmoid(gates[:, 0:n])
            r = ad.sigmoid(gates[:, n:2 * n])
            cand = ad.tanh(xt[:, 2 * n:3 * n] + (r * h) @ self.w_cand)
            h_new = h + z * (cand - h)
            h = ad.where(mask[:, t:t + 1], h_new, h)
            outputs[t] = h
        return ad.stack(outputs, axis=1)


class Bidirectional:
    """Left-to-right and right-to-left passes concatenated on the feature axis."""

    def __init__(self, store: ParameterStore, name: str, kind: str, in_dim: int, hidden: int,
                 rng: np.random.Generator, fused: bool = True):
        cell = {"lstm": LSTM, "gru": GRU}[kind]
        self.forward = cell(store, f"{name}.fwd", in_dim, hidden, rng, fused)
        self.backward = cell(store, f"{name}.bwd", in_dim, hidden, rng, fused)
        self.out_dim = 2 * hidden

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        return ad.concat([self.forward(x, mask), self.backward(x, mask, reverse=True)], axis=-1)


def pad_ids(sequences: list[list[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer sequences into an id matrix and a validity mask."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask
