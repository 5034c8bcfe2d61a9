"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .params import ParameterStore
from .tensor import Tape, Tensor


@dataclass
class Probe:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float

    def to_dict(self):
        return {
            "param": self.name,
            "index": [int(i) for i in self.index],
            "analytic": float(self.analytic),
            "numeric": float(self.numeric),
            "rel_error": float(self.rel_error),
        }


@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    total_coordinates: int
    tolerance: float
    floor: float = 1e-6
    worst: list[Probe] = field(default_factory=list)
    nonsmooth: list[Probe] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)

    def to_dict(self):
        return {
            "passed": bool(self.passed),
            "max_rel_error": float(self.max_rel_error),
            "tolerance": float(self.tolerance),
            "floor": float(self.floor),
            "checked": self.checked,
            "total_coordinates": self.total_coordinates,
            "worst": [p.to_dict() for p in self.worst],
            "nonsmooth": [p.to_dict() for p in self.nonsmooth],
        }


def _relative(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _is_kink(p, idx, value, base, up, down, eps, floor) -> bool:
    """One-sided slopes of a smooth function converge as the step shrinks;
    across a kink their gap stays put. Probe again at ``eps / 10``."""
    gap = (up - base) / eps - (base - down) / eps
    if abs(gap) <= floor:
        return False
    small = eps / 10.0
    orig = p.data[idx]
    p.data[idx] = orig + small
    up2 = value()
    p.data[idx] = orig - small
    down2 = value()
    p.data[idx] = orig
    gap2 = (up2 - base) / small - (base - down2) / small
    return abs(gap2) > 0.5 * abs(gap)


def gradcheck(
    function: Callable[[], Tensor],
    params: ParameterStore | Iterable[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_coordinates: int = 10_000,
    seed: int = 0,
    floor: float | None = None,
    keep_worst: int = 5,
) -> GradcheckReport:
    """Compare tape gradients of ``function()`` against central differences.

    ``function`` must rebuild its scalar output from the current parameter
    values each call. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    Above ``max_coordinates`` a seeded uniform subsample is probed.

    By default ``floor`` is the larger of 1e-6 and the gradient size at which
    the finite difference's own rounding noise, ``4 * machine_eps * max(1, |f|)
    / eps``, would use up the whole tolerance. Below that size the numeric
    estimate cannot resolve a relative error of ``tolerance``.

    A coordinate that misses ``tolerance`` and whose one-sided slopes keep
    disagreeing as the step shrinks sits on a kink (relu at 0, a max-pool
    tie); it is listed under ``nonsmooth`` and left out of ``max_rel_error``,
    since the tape follows the subgradient-0 convention there.
    """
    if isinstance(params, ParameterStore):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]

    with Tape() as tape:
        out = function()
    for _, p in named:
        p.grad = None
    tape.backward(out)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in named
    }

    coords = [(k, idx) for k, (_, p) in enumerate(named) for idx in np.ndindex(p.shape)]
    total = len(coords)
    if total > max_coordinates:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(total, size=max_coordinates, replace=False))
        coords = [coords[i] for i in pick]

    def value() -> float:
        return function().item()

    base = value()
    if floor is None:
        noise = 4.0 * np.finfo(np.float64).eps * max(1.0, abs(base)) / eps
        floor = max(1e-6, noise / tolerance)
    probes: list[Probe] = []
    nonsmooth: list[Probe] = []
    for k, idx in coords:
        name, p = named[k]
        orig = p.data[idx]
        p.data[idx] = orig + eps
        up = value()
        p.data[idx] = orig - eps
        down = value()
        p.data[idx] = orig
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[name][idx])
        probe = Probe(name, tuple(int(i) for i in idx), a, numeric, _relative(a, numeric, floor))
        if probe.rel_error > tolerance and _is_kink(p, idx, value, base, up, down, eps, floor):
            nonsmooth.append(probe)
            continue
        probes.append(probe)

    probes.sort(key=lambda pr: pr.rel_error, reverse=True)
    return GradcheckReport(
        max_rel_error=probes[0].rel_error if probes else 0.0,
        checked=len(coords),
        total_coordinates=total,
        tolerance=tolerance,
        floor=floor,
        worst=probes[:keep_worst],
        nonsmooth=nonsmooth,
    )
