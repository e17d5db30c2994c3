"""
LSTM cell with an explicit backward pass through time.

Gate layout in the stacked pre-activation is [input, forget, cell, output].
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.core.errors import ShapeError
from app.numkernel.ops import sigmoid, tanh_backward


@dataclass
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, width: int) -> "RecurrentState":
        return cls(np.zeros(width), np.zeros(width))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.hidden.copy(), self.cell.copy())


@dataclass
class LSTMParams:
    w_x: np.ndarray  # (4H, D)
    w_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def width(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    def named(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        return [(f"{prefix}.w_x", self.w_x), (f"{prefix}.w_h", self.w_h), (f"{prefix}.b", self.b)]

    @classmethod
    def zeros_like(cls, other: "LSTMParams") -> "LSTMParams":
        return cls(np.zeros_like(other.w_x), np.zeros_like(other.w_h), np.zeros_like(other.b))


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


@dataclass
class SequenceCache:
    steps: List[StepCache] = field(default_factory=list)


def _check_dims(state: RecurrentState, x: np.ndarray, params: LSTMParams) -> None:
    h = params.width
    if params.w_x.shape[0] != 4 * h or params.b.shape != (4 * h,) or params.w_h.shape != (4 * h, h):
        raise ShapeError(
            f"inconsistent LSTM params w_x{params.w_x.shape} w_h{params.w_h.shape} b{params.b.shape}"
        )
    if x.shape != (params.input_dim,):
        raise ShapeError(f"LSTM input has shape {x.shape}, expected ({params.input_dim},)")
    if state.hidden.shape != (h,) or state.cell.shape != (h,):
        raise ShapeError(f"LSTM state width differs from layer width {h}")


def _step(
    state: RecurrentState, x: np.ndarray, params: LSTMParams
) -> Tuple[RecurrentState, StepCache]:
    h = params.width
    z = params.w_x @ x + params.w_h @ state.hidden + params.b
    i = sigmoid(z[:h])
    f = sigmoid(z[h:2 * h])
    g = np.tanh(z[2 * h:3 * h])
    o = sigmoid(z[3 * h:])
    c = f * state.cell + i * g
    tanh_c = np.tanh(c)
    new_state = RecurrentState(o * tanh_c, c)
    return new_state, StepCache(x, state.hidden, state.cell, i, f, g, o, tanh_c)


def lstm_step(
    state: RecurrentState, x: np.ndarray, params: LSTMParams
) -> Tuple[RecurrentState, np.ndarray]:
    """One recurrence; the output is the new hidden vector"""
    _check_dims(state, x, params)
    new_state, _ = _step(state, x, params)
    return new_state, new_state.hidden


def lstm_forward(
    params: LSTMParams,
    inputs: np.ndarray,
    state: Optional[RecurrentState] = None,
) -> Tuple[np.ndarray, RecurrentState, SequenceCache]:
    """Run the cell over (T, D) inputs; returns (T, H) outputs, final state and cache"""
    state = state if state is not None else RecurrentState.zeros(params.width)
    outputs = np.zeros((inputs.shape[0], params.width))
    cache = SequenceCache()
    for t in range(inputs.shape[0]):
        _check_dims(state, inputs[t], params)
        state, step_cache = _step(state, inputs[t], params)
        cache.steps.append(step_cache)
        outputs[t] = state.hidden
    return outputs, state, cache


def lstm_backward(
    params: LSTMParams, cache: SequenceCache, grad_outputs: np.ndarray
) -> Tuple[LSTMParams, np.ndarray]:
    """
    Backpropagation through time.

    grad_outputs is dLoss/dh for every step, shape (T, H). Returns parameter
    gradients and dLoss/dinputs of shape (T, D). The initial state is treated as
    a constant.
    """
    n_steps = len(cache.steps)
    h = params.width
    grads = LSTMParams.zeros_like(params)
    grad_inputs = np.zeros((n_steps, params.input_dim))
    if n_steps == 0:
        return grads, grad_inputs

    dz_all = np.zeros((n_steps, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in reversed(range(n_steps)):
        sc = cache.steps[t]
        dh = grad_outputs[t] + dh_next
        do = dh * sc.tanh_c
        dc = dc_next + tanh_backward(dh * sc.o, sc.tanh_c)
        di = dc * sc.g
        dg = dc * sc.i
        df = dc * sc.c_prev
        dz = dz_all[t]
        dz[:h] = di * sc.i * (1.0 - sc.i)
        dz[h:2 * h] = df * sc.f * (1.0 - sc.f)
        dz[2 * h:3 * h] = tanh_backward(dg, sc.g)
        dz[3 * h:] = do * sc.o * (1.0 - sc.o)
        grad_inputs[t] = params.w_x.T @ dz
        dh_next = params.w_h.T @ dz
        dc_next = dc * sc.f

    xs = np.stack([sc.x for sc in cache.steps])
    hs = np.stack([sc.h_prev for sc in cache.steps])
    grads.w_x = dz_all.T @ xs
    grads.w_h = dz_all.T @ hs
    grads.b = dz_all.sum(axis=0)
    return grads, grad_inputs
