from typing import List, Literal, Optional

from pydantic import Field, field_validator

from .base import BaseSchema

Verb = Literal["gen-corpus", "train-asr", "train-iq", "train-baseline", "evaluate", "decode", "experiment"]
VERBS = ("gen-corpus", "train-asr", "train-iq", "train-baseline", "evaluate", "decode", "experiment")
BaselineChoice = Literal["acoustic", "acoustic_text", "all"]


class Command(BaseSchema):
    verb: Verb
    config_path: Optional[str] = None
    out: str = "artifacts"
    corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    asr_checkpoint: Optional[str] = None
    acoustic: Optional[str] = None
    acoustic_text: Optional[str] = None
    utterance: Optional[str] = None
    detector: BaselineChoice = "all"
    overrides: List[str] = Field(default_factory=list)
    jobs: Optional[int] = Field(None, ge=1)

    @field_validator("config_path", "out", "corpus", "checkpoint", "asr_checkpoint", "acoustic", "acoustic_text")
    @classmethod
    def non_empty_path(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not v.strip():
            raise ValueError("path must not be empty")
        return v

    def baselines(self) -> tuple:
        if self.detector == "all":
            return ("acoustic", "acoustic_text")
        return (self.detector,)
