from typing import List, Literal

from pydantic import ConfigDict, Field, field_validator

from .base import BaseSchema
from .model import ModelConfig
from .optim import OptimizerConfig


class TrainConfig(BaseSchema):
    seed: int = Field(42, ge=0)
    batch_size: int = Field(8, gt=0)
    epochs_stage1: int = Field(20, ge=0)
    epochs_stage2: int = Field(10, ge=0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    fastemit_lambda: float = Field(5e-3, ge=0)
    shuffle: bool = True
    # Held-out loss is logged every eval_every epochs; 0 disables it
    eval_every: int = Field(0, ge=0)


class Checkpoint(BaseSchema):
    """
    A trained transducer. ``params`` is an app.models.transducer.TransducerParams;
    stage-2 checkpoints carry their stage-1 parent's encoder, prediction and
    ASR joint tensors unchanged.
    """
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)

    config: ModelConfig
    params: object
    stage: Literal[1, 2]
    step: int = Field(0, ge=0)
    train_loss_history: List[float] = Field(default_factory=list)

    @field_validator("config")
    @classmethod
    def check_vocab_size(cls, v: ModelConfig) -> ModelConfig:
        if v.vocab_size is None:
            raise ValueError("checkpoint model config needs a vocab_size")
        return v
