"""
Baseline IQ detectors: a frame-level acoustic classifier and an
utterance-level acoustic-text classifier with a convolutional text encoder.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError, ShapeError
from app.numkernel.init import bias_partner_fan_in, uniform_init
from app.numkernel.lstm import LSTMParams, SequenceCache, lstm_backward, lstm_forward
from app.numkernel.ops import affine_backward, cross_entropy, log_softmax, relu, relu_backward, softmax, tanh_backward
from app.schemas.baselines import AcousticDetectorConfig, AcousticTextConfig

INTENDED_CLASS = 1
UNINTENDED_CLASS = 0

Tensors = Dict[str, np.ndarray]


def intent_class(intent: str) -> int:
    return INTENDED_CLASS if intent == "intended" else UNINTENDED_CLASS


def _lstm_named(layers: Sequence[LSTMParams]) -> Iterator[Tuple[str, np.ndarray]]:
    for k, layer in enumerate(layers):
        yield from layer.named(f"lstm.{k}")


def _lstm_from(tensors: Tensors, n_layers: int) -> List[LSTMParams]:
    return [
        LSTMParams(tensors[f"lstm.{k}.w_x"], tensors[f"lstm.{k}.w_h"], tensors[f"lstm.{k}.b"])
        for k in range(n_layers)
    ]


def _lstm_shapes(n_layers: int, input_dim: int, width: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for k in range(n_layers):
        d = input_dim if k == 0 else width
        shapes[f"lstm.{k}.w_x"] = (4 * width, d)
        shapes[f"lstm.{k}.w_h"] = (4 * width, width)
        shapes[f"lstm.{k}.b"] = (4 * width,)
    return shapes


def _fan_in(shapes: Dict[str, Tuple[int, ...]]):
    generic = bias_partner_fan_in(shapes, {"b": "w"})

    def fan_in(name: str) -> int:
        prefix = name.rsplit(".", 1)[0]
        if prefix.startswith("lstm."):
            return shapes[f"{prefix}.w_h"][1]
        return generic(name)
    return fan_in


def _check(tensors: Tensors, shapes: Dict[str, Tuple[int, ...]]) -> None:
    for name, shape in shapes.items():
        if name not in tensors:
            raise ArgumentError(f"missing tensor {name}")
        if tensors[name].shape != shape:
            raise ShapeError(f"{name} has shape {tensors[name].shape}, expected {shape}")


def _stack_forward(
    layers: Sequence[LSTMParams], features: np.ndarray
) -> Tuple[np.ndarray, List[SequenceCache]]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("detectors need a non-empty (frames, dim) feature matrix")
    caches = []
    for layer in layers:
        x, _, cache = lstm_forward(layer, x)
        caches.append(cache)
    return x, caches


def _stack_backward(
    layers: Sequence[LSTMParams], caches: Sequence[SequenceCache], grad_top: np.ndarray
) -> Tensors:
    grads: Tensors = {}
    g = grad_top
    for k in reversed(range(len(caches))):
        layer_grads, g = lstm_backward(layers[k], caches[k], g)
        grads.update(dict(layer_grads.named(f"lstm.{k}")))
    return grads


# --- acoustic detector ----------------------------------------------------------


@dataclass
class AcousticDetectorParams:
    layers: List[LSTMParams]
    w: np.ndarray  # (2, H) per-frame projection; class 1 is intended
    b: np.ndarray  # (2,)

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from _lstm_named(self.layers)
        yield "out.w", self.w
        yield "out.b", self.b

    def as_dict(self) -> Tensors:
        return dict(self.named_tensors())

    @classmethod
    def from_dict(cls, tensors: Tensors, n_layers: int) -> "AcousticDetectorParams":
        return cls(_lstm_from(tensors, n_layers), tensors["out.w"], tensors["out.b"])


def acoustic_shapes(config: AcousticDetectorConfig, feature_dim: int) -> Dict[str, Tuple[int, ...]]:
    shapes = _lstm_shapes(config.layers, feature_dim, config.width)
    shapes["out.w"] = (2, config.width)
    shapes["out.b"] = (2,)
    return shapes


def init_acoustic_params(config: AcousticDetectorConfig, feature_dim: int, seed: int) -> AcousticDetectorParams:
    shapes = acoustic_shapes(config, feature_dim)
    tensors = uniform_init(shapes, _fan_in(shapes), seed)
    return AcousticDetectorParams.from_dict(tensors, config.layers)


def acoustic_frame_logits(params: AcousticDetectorParams, features: np.ndarray) -> np.ndarray:
    top, _ = _stack_forward(params.layers, features)
    return top @ params.w.T + params.b


def acoustic_posteriors(params: AcousticDetectorParams, features: np.ndarray) -> np.ndarray:
    """Per-frame P(intended); frame t depends on frames 1..t only"""
    return softmax(acoustic_frame_logits(params, features))[:, INTENDED_CLASS]


def acoustic_frame_loss(
    params: AcousticDetectorParams, features: np.ndarray, label: int
) -> Tuple[float, Tensors]:
    """Mean per-frame cross-entropy against the utterance class, with gradients"""
    top, caches = _stack_forward(params.layers, features)
    logits = top @ params.w.T + params.b
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = float(-np.mean(logp[:, label]))
    grad_logits = np.exp(logp)
    grad_logits[:, label] -= 1.0
    grad_logits /= n
    grad_top, grad_w, grad_b = affine_backward(grad_logits, top, params.w)
    grads = _stack_backward(params.layers, caches, grad_top)
    grads["out.w"] = grad_w
    grads["out.b"] = grad_b
    return loss, grads


# --- acoustic-text detector -------------------------------------------------------


@dataclass
class AcousticTextParams:
    layers: List[LSTMParams]
    embedding: np.ndarray  # (V, Ew) word embeddings indexed by ASR token id
    conv_w: np.ndarray  # (F, window*Ew)
    conv_b: np.ndarray  # (F,)
    w_hidden: np.ndarray  # (Hj, F + H); input is [text ; acoustic]
    b_hidden: np.ndarray
    w_out: np.ndarray  # (2, Hj)
    b_out: np.ndarray

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from _lstm_named(self.layers)
        yield "text.embedding", self.embedding
        yield "text.conv_w", self.conv_w
        yield "text.conv_b", self.conv_b
        yield "joint.w_hidden", self.w_hidden
        yield "joint.b_hidden", self.b_hidden
        yield "joint.w_out", self.w_out
        yield "joint.b_out", self.b_out

    def as_dict(self) -> Tensors:
        return dict(self.named_tensors())

    @classmethod
    def from_dict(cls, tensors: Tensors, n_layers: int) -> "AcousticTextParams":
        return cls(
            _lstm_from(tensors, n_layers),
            tensors["text.embedding"],
            tensors["text.conv_w"],
            tensors["text.conv_b"],
            tensors["joint.w_hidden"],
            tensors["joint.b_hidden"],
            tensors["joint.w_out"],
            tensors["joint.b_out"],
        )


def acoustic_text_shapes(
    config: AcousticTextConfig, feature_dim: int, vocab_size: int
) -> Dict[str, Tuple[int, ...]]:
    shapes = _lstm_shapes(config.layers, feature_dim, config.width)
    e = config.word_embedding_dim
    shapes["text.embedding"] = (vocab_size, e)
    shapes["text.conv_w"] = (config.conv_filters, config.conv_window * e)
    shapes["text.conv_b"] = (config.conv_filters,)
    shapes["joint.w_hidden"] = (config.hidden_width, config.joint_input_width)
    shapes["joint.b_hidden"] = (config.hidden_width,)
    shapes["joint.w_out"] = (2, config.hidden_width)
    shapes["joint.b_out"] = (2,)
    return shapes


def init_acoustic_text_params(
    config: AcousticTextConfig, feature_dim: int, vocab_size: int, seed: int
) -> AcousticTextParams:
    shapes = acoustic_text_shapes(config, feature_dim, vocab_size)
    generic = bias_partner_fan_in(
        shapes, {"conv_b": "conv_w", "b_hidden": "w_hidden", "b_out": "w_out"}
    )

    def fan_in(name: str) -> int:
        if name.startswith("lstm."):
            return shapes[f"{name.rsplit('.', 1)[0]}.w_h"][1]
        return generic(name)

    tensors = uniform_init(shapes, fan_in, seed)
    return AcousticTextParams.from_dict(tensors, config.layers)


def check_acoustic_text_params(
    params: AcousticTextParams, config: AcousticTextConfig, feature_dim: int, vocab_size: int
) -> None:
    _check(params.as_dict(), acoustic_text_shapes(config, feature_dim, vocab_size))


@dataclass
class TextCache:
    tokens: List[int]
    windows: np.ndarray  # (L, window*Ew)
    pre: np.ndarray  # (L, F)
    argmax: np.ndarray  # (F,)


def text_embedding(
    tokens: Sequence[int], params: AcousticTextParams, window: int
) -> Tuple[np.ndarray, Optional[TextCache]]:
    """
    Width-`window` convolution over word embeddings (zero-padded to keep one
    output per token), ReLU, then max over positions. An empty hypothesis
    embeds to zeros.
    """
    n_filters = params.conv_w.shape[0]
    tokens = [int(t) for t in tokens]
    if not tokens:
        return np.zeros(n_filters), None
    e = params.embedding.shape[1]
    pad = window // 2
    rows = np.zeros((len(tokens) + 2 * pad, e))
    rows[pad:pad + len(tokens)] = params.embedding[tokens]
    windows = np.stack([rows[j:j + window].reshape(-1) for j in range(len(tokens))])
    pre = windows @ params.conv_w.T + params.conv_b
    act = relu(pre)
    argmax = np.argmax(act, axis=0)
    return act[argmax, np.arange(n_filters)], TextCache(tokens, windows, pre, argmax)


def text_embedding_backward(
    grad_emb: np.ndarray, cache: Optional[TextCache], params: AcousticTextParams, window: int
) -> Tensors:
    grads = {
        "text.embedding": np.zeros_like(params.embedding),
        "text.conv_w": np.zeros_like(params.conv_w),
        "text.conv_b": np.zeros_like(params.conv_b),
    }
    if cache is None:
        return grads
    n_tokens, n_filters = cache.pre.shape
    e = params.embedding.shape[1]
    pad = window // 2
    d_act = np.zeros_like(cache.pre)
    d_act[cache.argmax, np.arange(n_filters)] = grad_emb
    d_pre = relu_backward(d_act, cache.pre)
    d_windows, grads["text.conv_w"], grads["text.conv_b"] = affine_backward(d_pre, cache.windows, params.conv_w)
    d_rows = np.zeros((n_tokens + 2 * pad, e))
    for j in range(n_tokens):
        d_rows[j:j + window] += d_windows[j].reshape(window, e)
    np.add.at(grads["text.embedding"], cache.tokens, d_rows[pad:pad + n_tokens])
    return grads


def acoustic_layer_outputs(
    params: AcousticTextParams, features: np.ndarray, layer: int
) -> Tuple[np.ndarray, List[SequenceCache]]:
    """Hidden states (T, H) of the 1-based `layer`; higher layers are not run"""
    if not 1 <= layer <= len(params.layers):
        raise ArgumentError(f"acoustic embedding layer {layer} outside 1..{len(params.layers)}")
    return _stack_forward(params.layers[:layer], features)


@dataclass
class JointCache:
    z: np.ndarray
    hidden: np.ndarray


def detector_joint(
    text_emb: np.ndarray, acoustic_emb: np.ndarray, params: AcousticTextParams
) -> Tuple[np.ndarray, JointCache]:
    z = np.concatenate([text_emb, acoustic_emb])
    if z.shape != (params.w_hidden.shape[1],):
        raise ShapeError(f"joint input width {z.shape[0]} differs from {params.w_hidden.shape[1]}")
    hidden = np.tanh(params.w_hidden @ z + params.b_hidden)
    return params.w_out @ hidden + params.b_out, JointCache(z, hidden)


def acoustic_text_posterior(
    acoustic_emb: np.ndarray, tokens: Sequence[int], params: AcousticTextParams, config: AcousticTextConfig
) -> float:
    text_emb, _ = text_embedding(tokens, params, config.conv_window)
    logits, _ = detector_joint(text_emb, acoustic_emb, params)
    return float(softmax(logits)[INTENDED_CLASS])


def acoustic_text_loss(
    params: AcousticTextParams,
    features: np.ndarray,
    hypothesis: Sequence[int],
    label: int,
    config: AcousticTextConfig,
) -> Tuple[float, Tensors]:
    """Utterance-level cross-entropy on [text embedding ; last-frame acoustic embedding]"""
    layer = config.embedding_layer
    outputs, caches = acoustic_layer_outputs(params, features, layer)
    text_emb, text_cache = text_embedding(hypothesis, params, config.conv_window)
    logits, jc = detector_joint(text_emb, outputs[-1], params)
    loss, grad_logits = cross_entropy(logits, label)

    grads: Tensors = {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
    d_hidden, grads["joint.w_out"], grads["joint.b_out"] = affine_backward(grad_logits, jc.hidden, params.w_out)
    d_pre = tanh_backward(d_hidden, jc.hidden)
    d_z, grads["joint.w_hidden"], grads["joint.b_hidden"] = affine_backward(d_pre, jc.z, params.w_hidden)
    n_filters = params.conv_w.shape[0]
    grads.update(text_embedding_backward(d_z[:n_filters], text_cache, params, config.conv_window))
    grad_outputs = np.zeros_like(outputs)
    grad_outputs[-1] = d_z[n_filters:]
    grads.update(_stack_backward(params.layers[:layer], caches, grad_outputs))
    return loss, grads
