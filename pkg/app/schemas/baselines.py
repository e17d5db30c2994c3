from typing import Optional

from pydantic import Field, model_validator

from .base import BaseSchema
from .optim import OptimizerConfig


class StateMachineConfig(BaseSchema):
    frame_threshold: float = Field(0.5, ge=0, le=1)
    k_on: int = Field(10, ge=1)


class DetectorTrainConfig(BaseSchema):
    seed: int = Field(7, ge=0)
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(8, gt=0)
    shuffle: bool = True
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)


class AcousticDetectorConfig(BaseSchema):
    layers: int = Field(3, ge=1)
    width: int = Field(64, gt=0)
    train: DetectorTrainConfig = Field(default_factory=DetectorTrainConfig)
    state_machine: StateMachineConfig = Field(default_factory=StateMachineConfig)


class AcousticTextConfig(BaseSchema):
    layers: int = Field(3, ge=1)
    width: int = Field(64, gt=0)
    # 1-based; None selects the top layer
    acoustic_embedding_layer: Optional[int] = Field(None, ge=1)
    word_embedding_dim: int = Field(16, gt=0)
    conv_window: int = Field(3, ge=1)
    conv_filters: int = Field(100, gt=0)
    hidden_width: int = Field(64, gt=0)
    # Encoder steps between incremental evaluations; None evaluates at the end only
    eval_stride: Optional[int] = Field(5, ge=1)
    train: DetectorTrainConfig = Field(default_factory=DetectorTrainConfig)

    @model_validator(mode="after")
    def check_embedding_layer(self) -> "AcousticTextConfig":
        if self.acoustic_embedding_layer is not None and self.acoustic_embedding_layer > self.layers:
            raise ValueError("acoustic_embedding_layer exceeds the number of LSTM layers")
        if self.conv_window % 2 == 0:
            raise ValueError("conv_window must be odd")
        return self

    @property
    def embedding_layer(self) -> int:
        return self.acoustic_embedding_layer or self.layers

    @property
    def joint_input_width(self) -> int:
        return self.conv_filters + self.width


class BaselinesConfig(BaseSchema):
    acoustic: AcousticDetectorConfig = Field(default_factory=AcousticDetectorConfig)
    acoustic_text: AcousticTextConfig = Field(default_factory=AcousticTextConfig)
