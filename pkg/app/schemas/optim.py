from typing import Literal, Optional

from pydantic import Field

from .base import BaseSchema


class OptimizerConfig(BaseSchema):
    method: Literal["sgd", "adam"] = "adam"
    learning_rate: float = Field(1e-3, gt=0)
    adam_beta1: float = Field(0.9, gt=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    clip_norm: Optional[float] = Field(5.0, gt=0)
