"""
Dense primitives shared by every model: affine maps, normalizers and their
backward passes. Everything is float64.
"""
from typing import Tuple

import numpy as np

from app.core.errors import ArgumentError, NumericError, ShapeError

Matrix = np.ndarray


def as_matrix(data, rows: int, cols: int) -> Matrix:
    """Build a row-major float64 matrix and check the Matrix invariants"""
    arr = np.asarray(data, dtype=np.float64)
    if arr.size != rows * cols:
        raise ShapeError(f"matrix data has {arr.size} entries, expected {rows}x{cols}")
    arr = arr.reshape(rows, cols)
    check_finite("matrix", arr)
    return arr


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def affine(x: np.ndarray, w: Matrix, b: np.ndarray) -> np.ndarray:
    """w.x + b for a single vector"""
    if w.ndim != 2 or x.shape != (w.shape[1],) or b.shape != (w.shape[0],):
        raise ShapeError(
            f"affine shape mismatch: x{tuple(x.shape)} w{tuple(w.shape)} b{tuple(b.shape)}"
        )
    return w @ x + b


def affine_rows(xs: np.ndarray, w: Matrix, b: np.ndarray) -> np.ndarray:
    """Row-wise affine map: each row of xs goes through w.x + b"""
    if w.ndim != 2 or xs.ndim != 2 or xs.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(
            f"affine shape mismatch: xs{tuple(xs.shape)} w{tuple(w.shape)} b{tuple(b.shape)}"
        )
    return xs @ w.T + b


def affine_backward(
    grad_out: np.ndarray, xs: np.ndarray, w: Matrix
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Backward of affine_rows (or affine, for 1-D inputs).

    Returns (grad_xs, grad_w, grad_b).
    """
    if xs.ndim == 1:
        return w.T @ grad_out, np.outer(grad_out, xs), grad_out.copy()
    grad_flat = grad_out.reshape(-1, w.shape[0])
    x_flat = xs.reshape(-1, w.shape[1])
    grad_xs = (grad_flat @ w).reshape(xs.shape)
    return grad_xs, grad_flat.T @ x_flat, grad_flat.sum(axis=0)


def logsumexp(values: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted ln(sum(exp(v)))"""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ArgumentError("logsumexp of an empty input")
    m = np.max(v, axis=axis, keepdims=True)
    # An all -inf slice would give nan after shifting
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ArgumentError("log_softmax of an empty input")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def log_softmax_backward(grad_logp: np.ndarray, logp: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. log_softmax output"""
    return grad_logp - np.exp(logp) * np.sum(grad_logp, axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Split on sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh_backward(grad_out: np.ndarray, activated: np.ndarray) -> np.ndarray:
    return grad_out * (1.0 - activated * activated)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_backward(grad_out: np.ndarray, pre: np.ndarray) -> np.ndarray:
    return grad_out * (pre > 0.0)


def cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of one class and its gradient w.r.t. logits"""
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad
