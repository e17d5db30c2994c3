import re
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import ConfigDict, Field, field_validator, model_validator

from .base import BaseSchema
from .labeling import SlotSpan

BLANK = "<blank>"
INTENDED = "<intended>"
UNINTENDED = "<unintended>"
SPECIAL_TOKENS = (BLANK, INTENDED, UNINTENDED)

Intent = Literal["intended", "unintended"]
FrameRange = Tuple[int, int]

_PLACEHOLDER = re.compile(r"^\[?<([a-z_]+)>\]?$")


def placeholder_name(element: str) -> Optional[str]:
    m = _PLACEHOLDER.match(element)
    return m.group(1) if m else None


def _check_range(name: str, v: FrameRange, minimum: int = 0) -> FrameRange:
    lo, hi = v
    if lo < minimum or hi < lo:
        raise ValueError(f"{name} must satisfy {minimum} <= min <= max, got {v}")
    return v


class DomainTemplate(BaseSchema):
    """
    Templates are token patterns; ``|`` separates phrases (candidate pauses),
    ``<slot>`` is a placeholder and ``[<slot>]`` an optional placeholder.
    """
    name: str
    templates: List[str] = Field(..., min_length=1)
    tempo_frames: FrameRange
    slot_fillers: Dict[str, List[str]] = Field(default_factory=dict)
    weight: float = Field(1.0, gt=0)

    @field_validator("tempo_frames")
    @classmethod
    def check_tempo(cls, v: FrameRange) -> FrameRange:
        return _check_range("tempo_frames", v, minimum=1)

    @model_validator(mode="after")
    def check_placeholders(self) -> "DomainTemplate":
        for template in self.templates:
            for element in template.split():
                slot = placeholder_name(element)
                if slot is not None and not self.slot_fillers.get(slot):
                    raise ValueError(f"domain {self.name}: no fillers for slot <{slot}>")
        return self

    def has_slots(self) -> bool:
        return any(placeholder_name(e) for t in self.templates for e in t.split())


class CorpusSpec(BaseSchema):
    seed: int = Field(42, ge=0, lt=2 ** 64)
    n_intended: int = Field(2000, gt=0)
    n_unintended: int = Field(2000, gt=0)
    eval_intended: int = Field(500, ge=0)
    eval_unintended: int = Field(500, ge=0)
    feature_dim: int = Field(16, gt=0)
    frame_period_ms: float = Field(10.0, gt=0)
    intended_domains: List[DomainTemplate] = Field(..., min_length=1)
    unintended_domains: List[DomainTemplate] = Field(..., min_length=1)
    noise_sigma: float = Field(0.25, ge=0)
    silence_insertion_prob: float = Field(0.3, ge=0, le=1)
    leading_silence_frames: FrameRange = (5, 20)
    trailing_silence_frames: FrameRange = (5, 20)
    pause_frames: FrameRange = (8, 20)

    @field_validator("leading_silence_frames", "trailing_silence_frames", "pause_frames")
    @classmethod
    def check_silence_range(cls, v: FrameRange) -> FrameRange:
        return _check_range("silence range", v)

    @model_validator(mode="after")
    def check_domains(self) -> "CorpusSpec":
        for domain in self.unintended_domains:
            if domain.has_slots():
                raise ValueError(f"unintended domain {domain.name} uses slot placeholders")
        names = [d.name for d in self.intended_domains + self.unintended_domains]
        if len(set(names)) != len(names):
            raise ValueError("domain names must be unique")
        return self

    def split_counts(self, split: str) -> Tuple[int, int]:
        if split == "train":
            return self.n_intended, self.n_unintended
        if split == "eval":
            return self.eval_intended, self.eval_unintended
        raise ValueError(f"unknown split {split!r}")


class Vocabulary(BaseSchema):
    tokens: List[str]
    blank_id: int
    intended_id: int
    unintended_id: int

    @model_validator(mode="after")
    def check_specials(self) -> "Vocabulary":
        ids = {self.blank_id, self.intended_id, self.unintended_id}
        if len(ids) != 3 or any(not 0 <= i < len(self.tokens) for i in ids):
            raise ValueError("blank, <intended> and <unintended> ids must be distinct and in range")
        expected = {self.blank_id: BLANK, self.intended_id: INTENDED, self.unintended_id: UNINTENDED}
        for idx, tok in expected.items():
            if self.tokens[idx] != tok:
                raise ValueError(f"token {idx} must be {tok}, found {self.tokens[idx]}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        return self

    @classmethod
    def from_wordpieces(cls, wordpieces: List[str]) -> "Vocabulary":
        """Layout: blank first, wordpieces, then the two IQ tokens"""
        tokens = [BLANK, *wordpieces, INTENDED, UNINTENDED]
        return cls(tokens=tokens, blank_id=0, intended_id=len(tokens) - 2, unintended_id=len(tokens) - 1)

    @property
    def asr_size(self) -> int:
        """Blank plus wordpieces: the ASR joint's output size"""
        return len(self.tokens) - 2

    def is_iq(self, token_id: int) -> bool:
        return token_id in (self.intended_id, self.unintended_id)

    def is_wordpiece(self, token_id: int) -> bool:
        return 0 <= token_id < len(self.tokens) and token_id not in (
            self.blank_id, self.intended_id, self.unintended_id
        )

    def class_token(self, intent: str) -> int:
        return self.intended_id if intent == "intended" else self.unintended_id

    def encode(self, words: List[str]) -> List[int]:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        try:
            return [index[w] for w in words]
        except KeyError as e:
            raise ValueError(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: List[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


class Utterance(BaseSchema):
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)

    id: str
    domain: str
    intent: Intent
    transcript: List[int] = Field(..., min_length=1)
    features: np.ndarray
    silence_segments: List[Tuple[int, int]] = Field(default_factory=list)
    start_of_speech_frame: int = Field(..., ge=0)
    token_alignment: List[Tuple[int, int]]
    slots: List[SlotSpan] = Field(default_factory=list)
    augmented_targets: Optional[List[int]] = None

    @field_validator("features")
    @classmethod
    def check_features(cls, v: np.ndarray) -> np.ndarray:
        if not isinstance(v, np.ndarray) or v.ndim != 2 or v.dtype != np.float32:
            raise ValueError("features must be a 2-D float32 array")
        return v

    @model_validator(mode="after")
    def check_timeline(self) -> "Utterance":
        n_frames = self.features.shape[0]
        if self.start_of_speech_frame >= n_frames:
            raise ValueError("start_of_speech_frame beyond last frame")
        if len(self.token_alignment) != len(self.transcript):
            raise ValueError("one alignment entry per transcript token is required")
        segments = sorted(self.silence_segments + self.token_alignment)
        cursor = 0
        for start, end in segments:
            if start != cursor or end <= start:
                raise ValueError("silence and token spans must tile the frame range")
            cursor = end
        if cursor != n_frames:
            raise ValueError("silence and token spans must cover every frame")
        if list(self.token_alignment) != sorted(self.token_alignment):
            raise ValueError("token alignment out of order")
        if self.token_alignment[0][0] != self.start_of_speech_frame:
            raise ValueError("start_of_speech_frame must be the first token frame")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    def pause_gaps(self, min_frames: int) -> List[int]:
        """Token-gap indices g (pause between token g-1 and g) of pauses >= min_frames"""
        gaps = []
        for g in range(1, len(self.token_alignment)):
            gap = self.token_alignment[g][0] - self.token_alignment[g - 1][1]
            if gap >= min_frames:
                gaps.append(g)
        return gaps


class ManifestRecord(BaseSchema):
    id: str
    domain: str
    intent: Intent
    transcript: List[str]
    silence_segments: List[Tuple[int, int]]
    start_of_speech_frame: int
    token_alignment: List[Tuple[int, int]]
    feature_file: str
    slots: List[SlotSpan] = Field(default_factory=list)
    augmented_targets: Optional[List[str]] = None
