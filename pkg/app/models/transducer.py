"""
Transducer network: causal LSTM encoder with a time-reduction layer, an
embedding prediction network over the last N wordpieces, and the ASR / IQ
joint networks.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError, ShapeError
from app.numkernel.lstm import (
    LSTMParams,
    RecurrentState,
    SequenceCache,
    lstm_backward,
    lstm_forward,
    lstm_step,
)
from app.numkernel.ops import affine_backward, tanh_backward
from app.schemas.model import ModelConfig


@dataclass
class PredictionParams:
    embedding: np.ndarray  # (vocab_size, E); row 0 (blank) doubles as start-of-sequence
    w_ctx: np.ndarray  # (E, N*E)
    b_ctx: np.ndarray  # (E,)

    def named(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{prefix}.embedding", self.embedding),
            (f"{prefix}.w_ctx", self.w_ctx),
            (f"{prefix}.b_ctx", self.b_ctx),
        ]


@dataclass
class JointParams:
    w_enc: np.ndarray  # (J, encoder_width)
    w_pred: np.ndarray  # (J, E)
    b: np.ndarray  # (J,)
    w_out: np.ndarray  # (V, J)
    b_out: np.ndarray  # (V,)

    @property
    def output_size(self) -> int:
        return self.w_out.shape[0]

    def named(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{prefix}.w_enc", self.w_enc),
            (f"{prefix}.w_pred", self.w_pred),
            (f"{prefix}.b", self.b),
            (f"{prefix}.w_out", self.w_out),
            (f"{prefix}.b_out", self.b_out),
        ]

    def copy(self) -> "JointParams":
        return JointParams(*(a.copy() for a in (self.w_enc, self.w_pred, self.b, self.w_out, self.b_out)))

    def padded(self, extra_rows: int, bias_fill: float = 0.0) -> "JointParams":
        """Copy with extra zero-weight output rows appended"""
        j = self.w_out.shape[1]
        return JointParams(
            self.w_enc.copy(),
            self.w_pred.copy(),
            self.b.copy(),
            np.vstack([self.w_out, np.zeros((extra_rows, j))]),
            np.concatenate([self.b_out, np.full(extra_rows, bias_fill)]),
        )


@dataclass
class TransducerParams:
    encoder: List[LSTMParams]
    prediction: PredictionParams
    asr_joint: JointParams
    iq_joint: Optional[JointParams] = None

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        """All tensors in declaration order; this order is the checkpoint order"""
        for k, layer in enumerate(self.encoder):
            yield from layer.named(f"encoder.{k}")
        yield from self.prediction.named("prediction")
        yield from self.asr_joint.named("asr_joint")
        if self.iq_joint is not None:
            yield from self.iq_joint.named("iq_joint")

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.named_tensors())

    @classmethod
    def from_dict(cls, config: ModelConfig, tensors: Dict[str, np.ndarray]) -> "TransducerParams":
        try:
            encoder = [
                LSTMParams(tensors[f"encoder.{k}.w_x"], tensors[f"encoder.{k}.w_h"], tensors[f"encoder.{k}.b"])
                for k in range(config.encoder_layers)
            ]
            prediction = PredictionParams(
                tensors["prediction.embedding"], tensors["prediction.w_ctx"], tensors["prediction.b_ctx"]
            )
            asr_joint = _joint_from(tensors, "asr_joint")
        except KeyError as e:
            raise ArgumentError(f"missing tensor {e.args[0]}") from None
        iq_joint = _joint_from(tensors, "iq_joint") if "iq_joint.w_out" in tensors else None
        params = cls(encoder, prediction, asr_joint, iq_joint)
        check_shapes(params, config)
        return params

    def copy(self) -> "TransducerParams":
        return TransducerParams.from_arrays_like(self, {k: v.copy() for k, v in self.named_tensors()})

    @classmethod
    def from_arrays_like(cls, template: "TransducerParams", tensors: Dict[str, np.ndarray]) -> "TransducerParams":
        encoder = [
            LSTMParams(tensors[f"encoder.{k}.w_x"], tensors[f"encoder.{k}.w_h"], tensors[f"encoder.{k}.b"])
            for k in range(len(template.encoder))
        ]
        prediction = PredictionParams(
            tensors["prediction.embedding"], tensors["prediction.w_ctx"], tensors["prediction.b_ctx"]
        )
        iq_joint = _joint_from(tensors, "iq_joint") if template.iq_joint is not None else None
        return cls(encoder, prediction, _joint_from(tensors, "asr_joint"), iq_joint)


def _joint_from(tensors: Dict[str, np.ndarray], prefix: str) -> JointParams:
    return JointParams(*(tensors[f"{prefix}.{n}"] for n in ("w_enc", "w_pred", "b", "w_out", "b_out")))


def expected_shapes(config: ModelConfig, with_iq: bool = True) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    h = config.encoder_width
    for k in range(config.encoder_layers):
        d = config.layer_input_dim(k)
        shapes[f"encoder.{k}.w_x"] = (4 * h, d)
        shapes[f"encoder.{k}.w_h"] = (4 * h, h)
        shapes[f"encoder.{k}.b"] = (4 * h,)
    e, n, j = config.embedding_dim, config.prediction_context, config.joint_width
    shapes["prediction.embedding"] = (config.vocab_size, e)
    shapes["prediction.w_ctx"] = (e, n * e)
    shapes["prediction.b_ctx"] = (e,)
    joints = [("asr_joint", config.vocab_size)]
    if with_iq:
        joints.append(("iq_joint", config.iq_output_size))
    for prefix, v in joints:
        shapes[f"{prefix}.w_enc"] = (j, h)
        shapes[f"{prefix}.w_pred"] = (j, e)
        shapes[f"{prefix}.b"] = (j,)
        shapes[f"{prefix}.w_out"] = (v, j)
        shapes[f"{prefix}.b_out"] = (v,)
    return shapes


def check_shapes(params: TransducerParams, config: ModelConfig) -> None:
    shapes = expected_shapes(config, with_iq=params.iq_joint is not None)
    for name, arr in params.named_tensors():
        if arr.shape != shapes[name]:
            raise ShapeError(f"{name} has shape {arr.shape}, expected {shapes[name]}")


def zero_params(config: ModelConfig, with_iq: bool = True) -> TransducerParams:
    tensors = {name: np.zeros(shape) for name, shape in expected_shapes(config, with_iq).items()}
    return TransducerParams.from_dict(config, tensors)


# --- encoder -----------------------------------------------------------------


@dataclass
class EncoderCache:
    n_frames: int
    lower: List[SequenceCache] = field(default_factory=list)
    upper: List[SequenceCache] = field(default_factory=list)


def _reduce(frames: np.ndarray, factor: int) -> np.ndarray:
    """Concatenate non-overlapping groups of `factor` rows, zero-padding the tail"""
    n, d = frames.shape
    steps = -(-n // factor)
    padded = np.zeros((steps * factor, d))
    padded[:n] = frames
    return padded.reshape(steps, factor * d)


def encode_with_cache(
    features: np.ndarray, params: TransducerParams, config: ModelConfig
) -> Tuple[np.ndarray, EncoderCache]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.feature_dim:
        raise ShapeError(f"features have shape {x.shape}, expected (frames, {config.feature_dim})")
    if x.shape[0] == 0:
        raise ArgumentError("cannot encode an empty feature sequence")
    cache = EncoderCache(n_frames=x.shape[0])
    k_red = config.time_reduction_after_layer
    for layer in params.encoder[:k_red]:
        x, _, layer_cache = lstm_forward(layer, x)
        cache.lower.append(layer_cache)
    x = _reduce(x, config.time_reduction_factor)
    for layer in params.encoder[k_red:]:
        x, _, layer_cache = lstm_forward(layer, x)
        cache.upper.append(layer_cache)
    return x, cache


def encode(features: np.ndarray, params: TransducerParams, config: ModelConfig) -> np.ndarray:
    """Causal encoding; (ceil(frames / factor), encoder_width)"""
    return encode_with_cache(features, params, config)[0]


def encode_backward(
    grad_enc: np.ndarray, cache: EncoderCache, params: TransducerParams, config: ModelConfig
) -> Dict[str, np.ndarray]:
    grads: Dict[str, np.ndarray] = {}
    k_red = config.time_reduction_after_layer
    g = grad_enc
    for offset in reversed(range(len(cache.upper))):
        k = k_red + offset
        layer_grads, g = lstm_backward(params.encoder[k], cache.upper[offset], g)
        grads.update(dict(layer_grads.named(f"encoder.{k}")))
    width = g.shape[1] // config.time_reduction_factor
    g = g.reshape(-1, width)[: cache.n_frames]
    for k in reversed(range(len(cache.lower))):
        layer_grads, g = lstm_backward(params.encoder[k], cache.lower[k], g)
        grads.update(dict(layer_grads.named(f"encoder.{k}")))
    return grads


class StreamingEncoder:
    """
    Frame-at-a-time encoder. Produces an encoder state whenever a reduction
    group completes; flush() pads and emits a trailing partial group.
    """

    def __init__(self, params: TransducerParams, config: ModelConfig):
        self.params = params
        self.config = config
        self.states = [RecurrentState.zeros(config.encoder_width) for _ in params.encoder]
        self.buffer: List[np.ndarray] = []
        self.frames_seen = 0

    def _lower(self, frame: np.ndarray) -> np.ndarray:
        x = frame
        for k in range(self.config.time_reduction_after_layer):
            self.states[k], x = lstm_step(self.states[k], x, self.params.encoder[k])
        return x

    def _upper(self, group: List[np.ndarray]) -> np.ndarray:
        x = np.concatenate(group)
        for k in range(self.config.time_reduction_after_layer, len(self.params.encoder)):
            self.states[k], x = lstm_step(self.states[k], x, self.params.encoder[k])
        return x

    def accept_frame(self, frame: np.ndarray) -> Optional[np.ndarray]:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.config.feature_dim,):
            raise ShapeError(f"frame has shape {frame.shape}, expected ({self.config.feature_dim},)")
        self.frames_seen += 1
        self.buffer.append(self._lower(frame))
        if len(self.buffer) < self.config.time_reduction_factor:
            return None
        group, self.buffer = self.buffer, []
        return self._upper(group)

    def flush(self) -> Optional[np.ndarray]:
        if not self.buffer:
            return None
        width = self.buffer[0].shape[0]
        group = self.buffer + [np.zeros(width)] * (self.config.time_reduction_factor - len(self.buffer))
        self.buffer = []
        return self._upper(group)


# --- prediction network --------------------------------------------------------


def context_ids(history: Sequence[int], config: ModelConfig) -> Tuple[int, ...]:
    """
    The last N wordpiece ids of a label history, left-padded with the
    start-of-sequence id 0. IQ tokens (ids vocab_size and vocab_size+1) are
    skipped; blank or any other id is rejected.
    """
    wordpieces = []
    for token in history:
        if 1 <= token < config.vocab_size:
            wordpieces.append(int(token))
        elif token in (config.vocab_size, config.vocab_size + 1):
            continue
        else:
            raise ArgumentError(f"token id {token} cannot appear in a label history")
    n = config.prediction_context
    tail = wordpieces[-n:]
    return tuple([0] * (n - len(tail)) + tail)


def predict_from_context(ctx: Tuple[int, ...], params: PredictionParams) -> np.ndarray:
    x = params.embedding[list(ctx)].reshape(-1)
    return np.tanh(params.w_ctx @ x + params.b_ctx)


def predict_context(history: Sequence[int], params: TransducerParams, config: ModelConfig) -> np.ndarray:
    return predict_from_context(context_ids(history, config), params.prediction)


def prediction_backward(
    contexts: Sequence[Tuple[int, ...]],
    outputs: np.ndarray,
    grad_outputs: np.ndarray,
    params: PredictionParams,
) -> Dict[str, np.ndarray]:
    """Gradients of the prediction network for a batch of contexts"""
    e = params.embedding.shape[1]
    ids = np.asarray(contexts, dtype=np.int64)  # (K, N)
    xs = params.embedding[ids].reshape(len(contexts), -1)
    d_pre = tanh_backward(grad_outputs, outputs)
    d_x, d_w, d_b = affine_backward(d_pre, xs, params.w_ctx)
    d_emb = np.zeros_like(params.embedding)
    np.add.at(d_emb, ids.reshape(-1), d_x.reshape(-1, e))
    return {"prediction.embedding": d_emb, "prediction.w_ctx": d_w, "prediction.b_ctx": d_b}


# --- joint networks ----------------------------------------------------------------


def joint_logits(enc_state: np.ndarray, pred_state: np.ndarray, joint: JointParams) -> np.ndarray:
    """tanh(W_enc.enc + W_pred.pred + b) projected to the output vocabulary"""
    if enc_state.shape != (joint.w_enc.shape[1],) or pred_state.shape != (joint.w_pred.shape[1],):
        raise ShapeError(
            f"joint inputs enc{enc_state.shape} pred{pred_state.shape} do not match "
            f"w_enc{joint.w_enc.shape} w_pred{joint.w_pred.shape}"
        )
    hidden = np.tanh(joint.w_enc @ enc_state + joint.w_pred @ pred_state + joint.b)
    return joint.w_out @ hidden + joint.b_out


@dataclass
class JointGrid:
    enc: np.ndarray  # (T, E)
    pred: np.ndarray  # (U+1, P)
    hidden: np.ndarray  # (T, U+1, J)
    logits: np.ndarray  # (T, U+1, V)


def joint_grid(enc: np.ndarray, pred: np.ndarray, joint: JointParams) -> JointGrid:
    """joint_logits evaluated on every (t, u) lattice node at once"""
    if enc.shape[1] != joint.w_enc.shape[1] or pred.shape[1] != joint.w_pred.shape[1]:
        raise ShapeError("joint grid inputs do not match joint parameters")
    a_enc = enc @ joint.w_enc.T
    a_pred = pred @ joint.w_pred.T
    hidden = np.tanh(a_enc[:, None, :] + a_pred[None, :, :] + joint.b)
    logits = hidden @ joint.w_out.T + joint.b_out
    return JointGrid(enc, pred, hidden, logits)


def joint_grid_backward(
    grad_logits: np.ndarray, grid: JointGrid, joint: JointParams, prefix: str
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Returns (joint grads, dLoss/denc (T, E), dLoss/dpred (U+1, P))"""
    j = joint.w_out.shape[1]
    d_hidden, d_w_out, d_b_out = affine_backward(grad_logits, grid.hidden, joint.w_out)
    d_a = tanh_backward(d_hidden, grid.hidden)
    d_a_enc = d_a.sum(axis=1)
    d_a_pred = d_a.sum(axis=0)
    grads = {
        f"{prefix}.w_enc": d_a_enc.T @ grid.enc,
        f"{prefix}.w_pred": d_a_pred.T @ grid.pred,
        f"{prefix}.b": d_a.reshape(-1, j).sum(axis=0),
        f"{prefix}.w_out": d_w_out,
        f"{prefix}.b_out": d_b_out,
    }
    return grads, d_a_enc @ joint.w_enc, d_a_pred @ joint.w_pred
