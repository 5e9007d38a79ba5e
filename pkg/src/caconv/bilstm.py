"""Peephole LSTM over class-indexed time steps, run in both directions.

Time step ``l`` consumes the feature vector of class ``l``. The input and
forget gates peep at the previous cell, the output gate at the new one, and
all peepholes are full matrices. Each class gets its own single-unit
sigmoid head on the concatenated forward/backward activations.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, add, concat, getitem, matmul, mul, sigmoid, tanh, transpose

INIT_RANGE = 0.1

_INPUT = ("W_cv", "W_iv", "W_fv", "W_ov")
_RECURRENT = ("W_ch", "W_ih", "W_fh", "W_oh")
_PEEPHOLE = ("W_ic", "W_fc", "W_oc")
_BIAS = ("b_c", "b_i", "b_f", "b_o")


@dataclass
class LSTMCellParams:
    W_cv: Tensor
    W_iv: Tensor
    W_fv: Tensor
    W_ov: Tensor
    W_ch: Tensor
    W_ih: Tensor
    W_fh: Tensor
    W_oh: Tensor
    W_ic: Tensor
    W_fc: Tensor
    W_oc: Tensor
    b_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor

    def __post_init__(self):
        hidden, n_in = self.W_cv.shape
        for name in _INPUT:
            if getattr(self, name).shape != (hidden, n_in):
                raise DimensionError(f"{name} must be {hidden}x{n_in}")
        for name in _RECURRENT + _PEEPHOLE:
            if getattr(self, name).shape != (hidden, hidden):
                raise DimensionError(f"{name} must be {hidden}x{hidden}")
        for name in _BIAS:
            if getattr(self, name).shape != (hidden,):
                raise DimensionError(f"{name} must have length {hidden}")

    @property
    def hidden(self) -> int:
        return self.W_cv.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_cv.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], requires_grad: bool = True
                    ) -> "LSTMCellParams":
        return cls(**{f.name: Tensor(arrays[f.name], requires_grad=requires_grad)
                      for f in fields(cls)})


class LSTMState(NamedTuple):
    c: Tensor
    h: Tensor


@dataclass
class HeadParams:
    """Row ``l`` of ``weights`` and entry ``l`` of ``biases`` belong to class ``l``."""

    weights: Tensor  # N x (2 * hidden) for a bidirectional run
    biases: Tensor  # N

    def __post_init__(self):
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DimensionError("head weights must be N x D with N biases")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


def _mv(W: Tensor, x: Tensor) -> Tensor:
    return matmul(W, x) if x.ndim == 1 else matmul(x, transpose(W))


def zero_state(hidden: int, batch: int | None = None) -> LSTMState:
    shape = (hidden,) if batch is None else (batch, hidden)
    return LSTMState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(params: LSTMCellParams, v: Tensor, prev: LSTMState) -> LSTMState:
    if v.shape[-1] != params.input_size:
        raise DimensionError(f"input length {v.shape[-1]} != {params.input_size}")
    if prev.h.shape[-1] != params.hidden or prev.c.shape != prev.h.shape:
        raise DimensionError("previous state does not match hidden width")
    p = params
    h0, c0 = prev.h, prev.c
    cand = tanh(_mv(p.W_cv, v) + _mv(p.W_ch, h0) + p.b_c)
    i = sigmoid(_mv(p.W_iv, v) + _mv(p.W_ih, h0) + _mv(p.W_ic, c0) + p.b_i)
    f = sigmoid(_mv(p.W_fv, v) + _mv(p.W_fh, h0) + _mv(p.W_fc, c0) + p.b_f)
    c = add(mul(i, cand), mul(f, c0))
    o = sigmoid(_mv(p.W_ov, v) + _mv(p.W_oh, h0) + _mv(p.W_oc, c) + p.b_o)
    return LSTMState(c, mul(o, tanh(c)))


def run_stream(params: LSTMCellParams, inputs: Sequence[Tensor]) -> list[Tensor]:
    """Activations ``h`` for each input in the given order, from a zero state."""
    batch = None if inputs[0].ndim == 1 else inputs[0].shape[0]
    state = zero_state(params.hidden, batch)
    out = []
    for v in inputs:
        state = lstm_step(params, v, state)
        out.append(state.h)
    return out


def bilstm_run(fwd: LSTMCellParams, bwd: LSTMCellParams, features: Sequence[Tensor],
               n_classes: int | None = None) -> list[tuple[Tensor, Tensor]]:
    """Pairs ``(h_l, h'_l)``: forward reads v_1..v_N, backward reads v_N..v_1."""
    if not features:
        raise DimensionError("no class features given")
    if n_classes is not None and len(features) != n_classes:
        raise DimensionError(f"{len(features)} class features for {n_classes} classes")
    forward = run_stream(fwd, features)
    backward = run_stream(bwd, features[::-1])[::-1]
    return list(zip(forward, backward))


def class_head(h: Tensor, h_rev: Tensor | None, head: HeadParams, l: int) -> Tensor:
    """``P_l = sigmoid(w_l . [h_l, h'_l] + b_l)``; pass ``h_rev=None`` for one direction."""
    joined = h if h_rev is None else concat([h, h_rev], axis=-1)
    if joined.shape[-1] != head.weights.shape[1]:
        raise DimensionError(f"head expects {head.weights.shape[1]} inputs, got {joined.shape[-1]}")
    w = getitem(head.weights, l)
    return sigmoid(add(matmul(joined, w), getitem(head.biases, l)))


def init_cell(hidden: int, n_in: int, rng: np.random.Generator) -> LSTMCellParams:
    arrays = {}
    for name in _INPUT:
        arrays[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, (hidden, n_in))
    for name in _RECURRENT + _PEEPHOLE:
        arrays[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, (hidden, hidden))
    for name in _BIAS:
        arrays[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, hidden)
    return LSTMCellParams.from_arrays(arrays)


def init_head(n_classes: int, width: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, (n_classes, width)), requires_grad=True),
        Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, n_classes), requires_grad=True))


def init_bilstm(hidden: int, n_in: int, n_classes: int, seed
                ) -> tuple[LSTMCellParams, LSTMCellParams, HeadParams]:
    """Everything uniform in [-0.1, 0.1]."""
    if min(hidden, n_in, n_classes) < 1:
        raise DimensionError("hidden, input and class count must be positive")
    rng = np.random.default_rng(seed)
    fwd = init_cell(hidden, n_in, rng)
    bwd = init_cell(hidden, n_in, rng)
    return fwd, bwd, init_head(n_classes, 2 * hidden, rng)
