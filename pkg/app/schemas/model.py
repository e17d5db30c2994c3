from typing import Optional

from pydantic import Field, model_validator

from .base import BaseSchema


class ModelConfig(BaseSchema):
    feature_dim: int = Field(16, gt=0)
    encoder_layers: int = Field(3, gt=0)
    encoder_width: int = Field(64, gt=0)
    time_reduction_factor: int = Field(2, ge=1)
    # Number of encoder layers that run before the reduction
    time_reduction_after_layer: int = Field(2, ge=0)
    prediction_context: int = Field(2, ge=1)
    embedding_dim: int = Field(16, gt=0)
    joint_width: int = Field(64, gt=0)
    # Blank plus wordpieces. Pipeline configs leave it unset; for_corpus fills it and feature_dim
    vocab_size: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def check_reduction(self) -> "ModelConfig":
        if self.time_reduction_after_layer >= self.encoder_layers:
            raise ValueError("time_reduction_after_layer must be below encoder_layers")
        return self

    def for_corpus(self, feature_dim: int, vocab_size: int) -> "ModelConfig":
        return ModelConfig.model_validate(
            {**self.model_dump(), "feature_dim": feature_dim, "vocab_size": vocab_size}
        )

    @property
    def iq_output_size(self) -> int:
        return self.vocab_size + 2

    def layer_input_dim(self, layer: int) -> int:
        below = self.feature_dim if layer == 0 else self.encoder_width
        if layer == self.time_reduction_after_layer:
            return below * self.time_reduction_factor
        return below

    def encoder_steps(self, n_frames: int) -> int:
        return -(-n_frames // self.time_reduction_factor)
