from typing import Optional

from pydantic import Field, model_validator

from .base import BaseSchema
from .baselines import BaselinesConfig
from .corpus import CorpusSpec
from .decoding import DecisionConfig
from .experiment import ExperimentSection
from .model import ModelConfig
from .training import TrainConfig


class EvalSection(BaseSchema):
    # None evaluates latency and per-domain FR at each detector's EER threshold
    latency_threshold: Optional[float] = Field(None, ge=0)
    max_utterances: Optional[int] = Field(None, gt=0)


class PipelineConfig(BaseSchema):
    corpus: CorpusSpec
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    decision: DecisionConfig = Field(default_factory=DecisionConfig)
    baselines: BaselinesConfig = Field(default_factory=BaselinesConfig)
    eval: EvalSection = Field(default_factory=EvalSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    @model_validator(mode="after")
    def check_model(self) -> "PipelineConfig":
        if self.model.vocab_size is not None:
            raise ValueError("model.vocab_size comes from the corpus vocabulary and cannot be set")
        return self

    def decision_config(self) -> DecisionConfig:
        """Decision settings with the frame period taken from the corpus"""
        return self.decision.model_copy(update={"frame_period_ms": self.corpus.frame_period_ms})
