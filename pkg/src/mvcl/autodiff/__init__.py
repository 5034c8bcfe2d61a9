"""Reverse-mode differentiation over float64 numpy arrays."""

from .gradcheck import GradcheckReport, gradcheck
from .params import AdamState, ParameterStore, adam_step, backward
from .recurrent import gru_sequence, lstm_sequence
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    avg_pool,
    clamp,
    concat,
    cosine_similarity,
    div,
    exp,
    getitem,
    log,
    log_softmax,
    matmul,
    max_pool,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sqrt,
    stack,
    sub,
    sum,
    take,
    tanh,
    transpose,
    where,
)

slice = getitem  # noqa: A001 - op-list name
