"""Named trainable parameters, Adam state and on-disk persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, ShapeError
from .tensor import Tape, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParameterStore:
    """Registry of trainable tensors keyed by unique name."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.state: dict[str, AdamState] = {}

    def add(self, name: str, shape, rng: np.random.Generator | None = None,
            fan_in: int | None = None, init: str = "uniform") -> Tensor:
        """Register a parameter.

        ``uniform`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in
        defaults to the first dimension. ``zeros`` starts at 0.
        """
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "uniform":
            if rng is None:
                raise ConfigError("uniform init needs an rng")
            fan = fan_in if fan_in is not None else shape[0]
            bound = 1.0 / math.sqrt(fan)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        self.state[name] = AdamState(np.zeros(shape), np.zeros(shape))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def num_coordinates(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def fill_missing_grads(self) -> None:
        for p in self._params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for n, p in self._params.items()
        }

    def values(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self._params:
                raise FormatError(f"unknown parameter {name!r} in checkpoint")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self._params[name].shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape}"
                    f" != registered {self._params[name].shape}"
                )
            self._params[name].data = arr.copy()
        missing = set(self._params) - set(values)
        if missing:
            raise FormatError(f"checkpoint lacks parameters: {sorted(missing)}")

    def snapshot(self) -> dict:
        return {
            "values": self.values(),
            "state": {
                n: AdamState(s.m.copy(), s.v.copy(), s.step) for n, s in self.state.items()
            },
        }

    def restore(self, snap: dict) -> None:
        self.load_values(snap["values"])
        self.state = {
            n: AdamState(s.m.copy(), s.v.copy(), s.step) for n, s in snap["state"].items()
        }

    # -- persistence -----------------------------------------------------

    def to_json(self, with_state: bool = True) -> dict:
        out = {}
        for name, p in self._params.items():
            rec = {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            if with_state:
                s = self.state[name]
                rec["adam"] = {
                    "m": s.m.reshape(-1).tolist(),
                    "v": s.v.reshape(-1).tolist(),
                    "step": s.step,
                }
            out[name] = rec
        return out

    def load_json(self, payload: dict) -> None:
        values = {}
        for name, rec in payload.items():
            shape = tuple(rec["shape"])
            flat = np.asarray(rec["values"], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise FormatError(f"parameter {name!r}: {flat.size} values for shape {shape}")
            values[name] = flat.reshape(shape)
        self.load_values(values)
        for name, rec in payload.items():
            adam = rec.get("adam")
            shape = self._params[name].shape
            if adam is None:
                self.state[name] = AdamState(np.zeros(shape), np.zeros(shape))
            else:
                self.state[name] = AdamState(
                    np.asarray(adam["m"], dtype=np.float64).reshape(shape),
                    np.asarray(adam["v"], dtype=np.float64).reshape(shape),
                    int(adam["step"]),
                )

    def save(self, path: str | Path, with_state: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_json(with_state)), encoding="utf-8")

    def load(self, path: str | Path) -> None:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
        self.load_json(payload)


def adam_step(store: ParameterStore, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        s = store.state[name]
        s.step += 1
        s.m = beta1 * s.m + (1.0 - beta1) * g
        s.v = beta2 * s.v + (1.0 - beta2) * (g * g)
        m_hat = s.m / (1.0 - beta1 ** s.step)
        v_hat = s.v / (1.0 - beta2 ** s.step)
        p.data = p.data - learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def backward(loss: Tensor, tape: Tape, store: ParameterStore | None = None) -> None:
    """Run the tape backwards from ``loss``; unreachable parameters get zero grads."""
    tape.backward(loss)
    if store is not None:
        store.fill_missing_grads()
