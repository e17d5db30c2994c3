from pydantic import BaseModel, ConfigDict


class BaseSchema(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FrozenSchema(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
