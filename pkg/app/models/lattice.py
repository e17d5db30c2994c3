"""
Transducer lattice losses.

Nodes are (t, u) with 0 <= t < T and 0 <= u <= U. From each node the model
either emits blank (t+1, u) or the next label (t, u+1); the path ends with a
blank out of (T-1, U).
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.core.errors import ArgumentError, NumericError
from app.models.transducer import (
    EncoderCache,
    TransducerParams,
    context_ids,
    encode_backward,
    joint_grid,
    joint_grid_backward,
    predict_from_context,
    prediction_backward,
)
from app.numkernel.ops import log_softmax, log_softmax_backward
from app.schemas.model import ModelConfig

NEG_INF = -np.inf


@dataclass
class LossLattice:
    T: int
    U: int
    alpha: np.ndarray  # (T, U+1)
    beta: np.ndarray  # (T, U+1)
    log_probs_blank: np.ndarray  # (T, U+1)
    log_probs_emit: np.ndarray  # (T, U)

    @property
    def log_likelihood(self) -> float:
        return float(self.alpha[self.T - 1, self.U] + self.log_probs_blank[self.T - 1, self.U])

    @property
    def log_likelihood_beta(self) -> float:
        return float(self.beta[0, 0])

    def blank_occupancy(self) -> np.ndarray:
        """Posterior probability that a path takes the blank arc out of each node"""
        ll = self.log_likelihood
        occ = np.zeros((self.T, self.U + 1))
        occ[:-1] = np.exp(self.alpha[:-1] + self.log_probs_blank[:-1] + self.beta[1:] - ll)
        occ[-1, self.U] = np.exp(self.alpha[-1, self.U] + self.log_probs_blank[-1, self.U] - ll)
        return occ

    def emission_occupancy(self) -> np.ndarray:
        """Posterior probability that a path takes the label arc out of each node"""
        if self.U == 0:
            return np.zeros((self.T, 0))
        ll = self.log_likelihood
        return np.exp(self.alpha[:, :-1] + self.log_probs_emit + self.beta[:, 1:] - ll)


def compute_lattice(log_probs_blank: np.ndarray, log_probs_emit: np.ndarray) -> LossLattice:
    """Log-space forward/backward over the (T, U+1) alignment grid"""
    T, u1 = log_probs_blank.shape
    U = u1 - 1
    if T < 1 or log_probs_emit.shape != (T, U):
        raise ArgumentError(
            f"lattice shapes blank{log_probs_blank.shape} emit{log_probs_emit.shape} are inconsistent"
        )
    alpha = np.full((T, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            from_blank = alpha[t - 1, u] + log_probs_blank[t - 1, u] if t > 0 else NEG_INF
            from_emit = alpha[t, u - 1] + log_probs_emit[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = np.logaddexp(from_blank, from_emit)

    beta = np.full((T, U + 1), NEG_INF)
    beta[T - 1, U] = log_probs_blank[T - 1, U]
    for t in reversed(range(T)):
        for u in reversed(range(U + 1)):
            if t == T - 1 and u == U:
                continue
            via_blank = beta[t + 1, u] + log_probs_blank[t, u] if t < T - 1 else NEG_INF
            via_emit = beta[t, u + 1] + log_probs_emit[t, u] if u < U else NEG_INF
            beta[t, u] = np.logaddexp(via_blank, via_emit)

    lattice = LossLattice(T, U, alpha, beta, log_probs_blank, log_probs_emit)
    if not np.isfinite(lattice.log_likelihood):
        raise NumericError("non-finite transducer log-likelihood")
    return lattice


def node_gradients(lattice: LossLattice, fastemit_lambda: float = 0.0):
    """
    dLoss/dlog_prob for the blank and label arcs of every node. FastEmit
    scales the label-arc terms by (1 + lambda) and leaves the loss untouched.
    """
    return -lattice.blank_occupancy(), -(1.0 + fastemit_lambda) * lattice.emission_occupancy()


@dataclass
class LossResult:
    loss: float
    grads: Dict[str, np.ndarray]
    lattice: LossLattice
    grad_enc: Optional[np.ndarray] = None


def _scatter_node_grads(
    logp: np.ndarray, g_blank: np.ndarray, g_emit: np.ndarray, labels: Sequence[int], blank_id: int
) -> np.ndarray:
    """dLoss/dlogits from arc gradients through log_softmax"""
    g = np.zeros_like(logp)
    g[:, :, blank_id] = g_blank
    for u, label in enumerate(labels):
        g[:, u, label] += g_emit[:, u]
    return log_softmax_backward(g, logp)


def _arc_log_probs(logp: np.ndarray, labels: Sequence[int], blank_id: int):
    T, u1, _ = logp.shape
    lp_blank = logp[:, :, blank_id]
    lp_emit = np.zeros((T, u1 - 1))
    for u, label in enumerate(labels):
        lp_emit[:, u] = logp[:, u, label]
    return lp_blank, lp_emit


def _check_labels(labels: Sequence[int], low: int, high: int, what: str) -> List[int]:
    out = [int(y) for y in labels]
    for y in out:
        if not low <= y < high:
            raise ArgumentError(f"label {y} is not a valid {what} id")
    return out


def _zero_grads(params: TransducerParams) -> Dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_tensors()}


def rnnt_loss(
    enc_states: np.ndarray,
    labels: Sequence[int],
    params: TransducerParams,
    config: ModelConfig,
    fastemit_lambda: float = 0.0,
) -> LossResult:
    """
    -log P(labels | encoder states) under the ASR joint. Gradients cover the
    prediction network and the ASR joint; grad_enc carries dLoss/denc_states
    for the caller to push through the encoder.
    """
    if fastemit_lambda < 0:
        raise ArgumentError("fastemit_lambda must be non-negative")
    labels = _check_labels(labels, 1, config.vocab_size, "wordpiece")
    contexts = [context_ids(labels[:u], config) for u in range(len(labels) + 1)]
    pred = np.stack([predict_from_context(c, params.prediction) for c in contexts])
    grid = joint_grid(enc_states, pred, params.asr_joint)
    logp = log_softmax(grid.logits)
    lattice = compute_lattice(*_arc_log_probs(logp, labels, 0))

    g_blank, g_emit = node_gradients(lattice, fastemit_lambda)
    grad_logits = _scatter_node_grads(logp, g_blank, g_emit, labels, 0)
    joint_grads, grad_enc, grad_pred = joint_grid_backward(grad_logits, grid, params.asr_joint, "asr_joint")

    grads = _zero_grads(params)
    grads.update(joint_grads)
    grads.update(prediction_backward(contexts, pred, grad_pred, params.prediction))
    return LossResult(-lattice.log_likelihood, grads, lattice, grad_enc)


def rnnt_loss_with_encoder(
    enc_states: np.ndarray,
    enc_cache: EncoderCache,
    labels: Sequence[int],
    params: TransducerParams,
    config: ModelConfig,
    fastemit_lambda: float = 0.0,
) -> LossResult:
    """rnnt_loss with the gradient carried through the encoder as well"""
    result = rnnt_loss(enc_states, labels, params, config, fastemit_lambda)
    result.grads.update(encode_backward(result.grad_enc, enc_cache, params, config))
    return result


def iq_stage2_loss(
    enc_states: np.ndarray,
    augmented_labels: Sequence[int],
    params: TransducerParams,
    config: ModelConfig,
    fastemit_lambda: float = 0.0,
    pred_cache: Optional[Dict[tuple, np.ndarray]] = None,
) -> LossResult:
    """
    -log P(expanded labels) under the IQ joint. The prediction network only
    sees wordpieces, and gradients are non-zero for iq_joint tensors only.
    """
    if params.iq_joint is None:
        raise ArgumentError("stage-2 loss needs an initialized iq_joint")
    if fastemit_lambda < 0:
        raise ArgumentError("fastemit_lambda must be non-negative")
    if any(int(y) == 0 for y in augmented_labels):
        raise ArgumentError("augmented label sequence contains the blank id")
    labels = _check_labels(augmented_labels, 1, config.iq_output_size, "augmented")

    cache = pred_cache if pred_cache is not None else {}
    contexts = [context_ids(labels[:u], config) for u in range(len(labels) + 1)]
    rows = []
    for ctx in contexts:
        if ctx not in cache:
            cache[ctx] = predict_from_context(ctx, params.prediction)
        rows.append(cache[ctx])
    pred = np.stack(rows)
    grid = joint_grid(enc_states, pred, params.iq_joint)
    logp = log_softmax(grid.logits)
    lattice = compute_lattice(*_arc_log_probs(logp, labels, 0))

    g_blank, g_emit = node_gradients(lattice, fastemit_lambda)
    grad_logits = _scatter_node_grads(logp, g_blank, g_emit, labels, 0)
    joint_grads, _, _ = joint_grid_backward(grad_logits, grid, params.iq_joint, "iq_joint")

    grads = _zero_grads(params)
    grads.update(joint_grads)
    return LossResult(-lattice.log_likelihood, grads, lattice)
