from typing import List, Literal, Tuple

from pydantic import Field, field_validator, model_validator

from .base import BaseSchema, FrozenSchema

Origin = Literal["wordpiece", "slot_close", "silence", "utterance_end"]


class SlotSpan(FrozenSchema):
    slot_name: str
    start_token: int = Field(..., ge=0)
    end_token: int

    @model_validator(mode="after")
    def check_order(self) -> "SlotSpan":
        if self.end_token <= self.start_token:
            raise ValueError(f"slot {self.slot_name} has empty span {self.start_token}..{self.end_token}")
        return self


class SlotRule(BaseSchema):
    """
    A pattern such as ``snooze alarm [<time_label>]``: literal tokens, ``<slot>``
    placeholders and bracketed optional placeholders. Each placeholder names a
    key of ``slot_vocabulary``.
    """
    pattern: str
    slot_name: str
    slot_vocabulary: List[str] = Field(..., min_length=1)

    @field_validator("pattern")
    @classmethod
    def check_pattern(cls, v: str) -> str:
        if not v.split():
            raise ValueError("empty slot pattern")
        return v

    def elements(self) -> List[Tuple[str, bool, bool]]:
        """(token, is_placeholder, is_optional) per pattern element"""
        out = []
        for raw in self.pattern.split():
            optional = raw.startswith("[") and raw.endswith("]")
            tok = raw[1:-1] if optional else raw
            placeholder = tok.startswith("<") and tok.endswith(">")
            out.append((tok, placeholder, optional))
        return out

    def fillers(self) -> List[List[str]]:
        return [f.split() for f in self.slot_vocabulary]


class SlotGrammar(BaseSchema):
    rules: List[SlotRule] = Field(default_factory=list)


class LabelItem(FrozenSchema):
    token_id: int
    origin: Origin


class AugmentedLabelSequence(BaseSchema):
    items: List[LabelItem]
    intent: Literal["intended", "unintended"]

    def token_ids(self) -> List[int]:
        return [item.token_id for item in self.items]
