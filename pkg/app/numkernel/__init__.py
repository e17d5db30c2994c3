from .lstm import LSTMParams, RecurrentState, lstm_backward, lstm_forward, lstm_step
from .ops import (
    Matrix,
    affine,
    affine_backward,
    affine_rows,
    as_matrix,
    log_softmax,
    logsumexp,
    softmax,
)
from .optim import AdamState, Optimizer, optimizer_step

__all__ = [
    "AdamState",
    "LSTMParams",
    "Matrix",
    "Optimizer",
    "RecurrentState",
    "affine",
    "affine_backward",
    "affine_rows",
    "as_matrix",
    "log_softmax",
    "logsumexp",
    "lstm_backward",
    "lstm_forward",
    "lstm_step",
    "optimizer_step",
    "softmax",
]
