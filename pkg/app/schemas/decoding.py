from typing import List, Literal, Optional

from pydantic import Field

from .base import BaseSchema, FrozenSchema
from .corpus import Intent


class DecisionConfig(BaseSchema):
    # Thresholds above 1 are accepted and simply never cross
    intended_threshold: float = Field(0.5, ge=0)
    beam_size: int = Field(4, ge=1)
    max_symbols_per_step: int = Field(4, ge=1)
    decision_mode: Literal["first_crossing"] = "first_crossing"
    renormalize_iq: bool = False
    frame_period_ms: float = Field(10.0, gt=0)


class DecisionEvent(FrozenSchema):
    # Encoder step for the transducer detectors, input frame for the acoustic one; counts from 1
    encoder_step: int = Field(..., ge=1)
    time_ms: float = Field(..., ge=0)
    intended_posterior: float = Field(..., ge=0, le=1)
    crossed: bool


class DecodeResult(BaseSchema):
    utterance_id: str
    detector: str = "e2e"
    hypothesis: List[int] = Field(default_factory=list)
    events: List[DecisionEvent] = Field(default_factory=list)
    final_decision: Intent
    decision_time_ms: Optional[float] = None

    @property
    def max_posterior(self) -> float:
        return max((e.intended_posterior for e in self.events), default=0.0)


def first_crossing(events: List[DecisionEvent]) -> Optional[DecisionEvent]:
    return next((e for e in events if e.crossed), None)
