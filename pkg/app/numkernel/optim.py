from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from app.core.errors import ShapeError, TrainingError
from app.schemas.optim import OptimizerConfig

ParamView = Dict[str, np.ndarray]


@dataclass
class AdamState:
    m: ParamView = field(default_factory=dict)
    v: ParamView = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], clip_norm: Optional[float]) -> ParamView:
    if clip_norm is None:
        return dict(grads)
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads)
    scale = clip_norm / norm
    return {name: g * scale for name, g in grads.items()}


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    cfg: OptimizerConfig,
    step_index: int,
    state: Optional[AdamState] = None,
) -> ParamView:
    """
    Return updated copies of params. step_index counts from 1 and drives the
    Adam bias correction; state carries the Adam moments between calls.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} differs from parameter {name}{params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", param_name=name, step=step_index)

    clipped = clip_by_global_norm(grads, cfg.clip_norm)
    updated: ParamView = {}
    if cfg.method == "sgd":
        for name, p in params.items():
            g = clipped.get(name)
            updated[name] = p if g is None else p - cfg.learning_rate * g
        return updated

    if step_index < 1:
        raise ShapeError("adam step_index counts from 1")
    state = state if state is not None else AdamState()
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - b1 ** step_index
    correction2 = 1.0 - b2 ** step_index
    for name, p in params.items():
        g = clipped.get(name)
        if g is None:
            updated[name] = p
            continue
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        updated[name] = p - cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_epsilon)
    return updated


class Optimizer:
    """Stateful wrapper the training loops hold on to"""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.state = AdamState()
        self.step_index = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> ParamView:
        self.step_index += 1
        return optimizer_step(params, grads, self.cfg, self.step_index, self.state)
