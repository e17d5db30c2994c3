from typing import Dict, List, Optional

from pydantic import Field, model_validator

from .base import BaseSchema, FrozenSchema
from .corpus import Intent


class ScoredUtterance(BaseSchema):
    """
    A detector's event stream for one utterance. An utterance crosses θ when
    k_on consecutive events pass it: posterior > θ when strict, else >= θ.
    """
    id: str
    domain: str
    true_intent: Intent
    posteriors: List[float] = Field(..., min_length=1)
    times_ms: List[float]
    start_of_speech_ms: float = Field(0.0, ge=0)
    k_on: int = Field(1, ge=1)
    strict: bool = False

    @model_validator(mode="after")
    def check_stream(self) -> "ScoredUtterance":
        if len(self.times_ms) != len(self.posteriors):
            raise ValueError("one timestamp per posterior is required")
        return self

    @property
    def score(self) -> float:
        """Largest θ-level this stream reaches under its run rule (max over k_on-windows of the window minimum)"""
        k = self.k_on
        if len(self.posteriors) < k:
            return float("-inf")
        return max(min(self.posteriors[i:i + k]) for i in range(len(self.posteriors) - k + 1))

    def passes(self, posterior: float, threshold: float) -> bool:
        return posterior > threshold if self.strict else posterior >= threshold

    def crosses(self, threshold: float) -> bool:
        s = self.score
        return s > threshold if self.strict else s >= threshold

    def decision_time_ms(self, threshold: float) -> Optional[float]:
        run = 0
        for p, t in zip(self.posteriors, self.times_ms):
            run = run + 1 if self.passes(p, threshold) else 0
            if run >= self.k_on:
                return t
        return None


class DetPoint(FrozenSchema):
    threshold: float
    false_accept_rate: float = Field(..., ge=0, le=1)
    false_reject_rate: float = Field(..., ge=0, le=1)


class EerResult(FrozenSchema):
    eer: float
    threshold: float
    # False when FA - FR never changes sign and the closest boundary point is returned
    straddled: bool = True


class LatencyResult(FrozenSchema):
    p50_ms: Optional[float] = None
    p90_ms: Optional[float] = None
    coverage: float = Field(0.0, ge=0, le=1)
    n_crossed: int = 0
    error: Optional[str] = None


class EvalSummary(BaseSchema):
    model: str
    eer: float
    eer_threshold: float
    eer_straddled: bool = True
    latency_threshold: float
    p50_ms: Optional[float] = None
    p90_ms: Optional[float] = None
    coverage: float = 0.0
    per_domain_fr: Dict[str, float] = Field(default_factory=dict)
    wer: Optional[float] = None
