"""Fused recurrent primitives: a whole masked LSTM or GRU pass as one tape op.

Inputs are pre-projected (``x @ W_in + b``), shaped ``(batch, time, k * hidden)``.
Masked steps keep the previous state. Backward is explicit backpropagation
through time; the composed per-gate cells in ``mvcl.nn`` give the same
values and gradients and serve as the reference.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _record, _sigmoid as _sig, as_tensor


def _steps(steps: int, reverse: bool):
    return range(steps - 1, -1, -1) if reverse else range(steps)


def lstm_sequence(projected, w_rec, mask, reverse: bool = False) -> Tensor:
    xw, w = as_tensor(projected), as_tensor(w_rec)
    batch, steps, four_n = xw.shape
    n = w.shape[0]
    if w.shape != (n, 4 * n) or four_n != 4 * n:
        raise ShapeError(f"lstm_sequence: projected {xw.shape} incompatible with w_rec {w.shape}")
    live = np.asarray(mask, dtype=bool).reshape(batch, steps, 1)
    out = np.zeros((batch, steps, n))
    h = np.zeros((batch, n))
    c = np.zeros((batch, n))
    cache = [None] * steps
    for t in _steps(steps, reverse):
        z = xw.data[:, t, :] + h @ w.data
        s = _sig(z)
        i, f, o = s[:, :n], s[:, n:2 * n], s[:, 3 * n:]
        g = np.tanh(z[:, 2 * n:3 * n])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache[t] = (h, c, i, f, g, o, tc)
        lv = live[:, t]
        c = np.where(lv, c_new, c)
        h = np.where(lv, o * tc, h)
        out[:, t] = h

    def backward(grad):
        dxw = np.zeros_like(xw.data)
        dw = np.zeros_like(w.data)
        dh_carry = np.zeros((batch, n))
        dc_carry = np.zeros((batch, n))
        for t in _steps(steps, not reverse):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            lv = live[:, t]
            dh = grad[:, t] + dh_carry
            dh_new = np.where(lv, dh, 0.0)
            dc_new = np.where(lv, dc_carry, 0.0) + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - g * g),
                dh_new * tc * o * (1.0 - o),
            ], axis=1)
            dxw[:, t] = dz
            dw += h_prev.T @ dz
            dh_carry = dz @ w.data.T + np.where(lv, 0.0, dh)
            dc_carry = dc_new * f + np.where(lv, 0.0, dc_carry)
        return dxw, dw

    return _record(out, (xw, w), backward, "lstm_sequence")


def gru_sequence(projected, w_gates, w_cand, mask, reverse: bool = False) -> Tensor:
    xw, wg, wc = as_tensor(projected), as_tensor(w_gates), as_tensor(w_cand)
    batch, steps, three_n = xw.shape
    n = wc.shape[0]
    if wg.shape != (n, 2 * n) or wc.shape != (n, n) or three_n != 3 * n:
        raise ShapeError(
            f"gru_sequence: projected {xw.shape} incompatible with {wg.shape}, {wc.shape}"
        )
    live = np.asarray(mask, dtype=bool).reshape(batch, steps, 1)
    out = np.zeros((batch, steps, n))
    h = np.zeros((batch, n))
    cache = [None] * steps
    for t in _steps(steps, reverse):
        xt = xw.data[:, t, :]
        gates = xt[:, :2 * n] + h @ wg.data
        zr = _sig(gates)
        z, r = zr[:, :n], zr[:, n:]
        rh = r * h
        cand = np.tanh(xt[:, 2 * n:] + rh @ wc.data)
        cache[t] = (h, z, r, rh, cand)
        h = np.where(live[:, t], h + z * (cand - h), h)
        out[:, t] = h

    def backward(grad):
        dxw = np.zeros_like(xw.data)
        dwg = np.zeros_like(wg.data)
        dwc = np.zeros_like(wc.data)
        dh_carry = np.zeros((batch, n))
        for t in _steps(steps, not reverse):
            h_prev, z, r, rh, cand = cache[t]
            lv = live[:, t]
            dh = grad[:, t] + dh_carry
            dh_new = np.where(lv, dh, 0.0)
            da = dh_new * z * (1.0 - cand * cand)
            dz = dh_new * (cand - h_prev)
            d_rh = da @ wc.data.T
            dgates = np.concatenate([dz * z * (1.0 - z), d_rh * h_prev * r * (1.0 - r)], axis=1)
            dxw[:, t, :2 * n] = dgates
            dxw[:, t, 2 * n:] = da
            dwc += rh.T @ da
            dwg += h_prev.T @ dgates
            dh_carry = (dh_new * (1.0 - z) + d_rh * r + dgates @ wg.data.T
                        + np.where(lv, 0.0, dh))
        return dxw, dwg, dwc

    return _record(out, (xw, wg, wc), backward, "gru_sequence")
