from typing import List, Optional

from pydantic import Field, field_validator

from .base import BaseSchema
from .evaluation import EvalSummary


class ExperimentSection(BaseSchema):
    """Multi-seed comparison and FastEmit A/B run by the ``experiment`` verb"""
    # The first seed is the reference run for the strict ordering and latency checks
    seeds: List[int] = Field(default_factory=lambda: [42, 43, 44], min_length=1)
    # Compared against a fastemit_lambda=0 run on the first seed's corpus
    fastemit_lambda: float = Field(0.01, gt=0)
    max_e2e_eer: float = Field(0.15, gt=0, le=1)
    max_wer: float = Field(0.10, gt=0)
    max_p50_ratio: float = Field(2.0, gt=0)
    max_fastemit_eer_delta: float = Field(0.02, gt=0)

    @field_validator("seeds")
    @classmethod
    def unique_seeds(cls, v: List[int]) -> List[int]:
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        return v


class SeedRun(BaseSchema):
    seed: int
    summaries: List[EvalSummary]

    def summary(self, model: str) -> Optional[EvalSummary]:
        return next((s for s in self.summaries if s.model == model), None)


class FastEmitRun(BaseSchema):
    fastemit_lambda: float
    summary: EvalSummary


class ExperimentCheck(BaseSchema):
    name: str
    passed: bool
    detail: str


class ExperimentReport(BaseSchema):
    seeds: List[SeedRun]
    fastemit: List[FastEmitRun] = Field(default_factory=list)
    checks: List[ExperimentCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> List[ExperimentCheck]:
        return [c for c in self.checks if not c.passed]
