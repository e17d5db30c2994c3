import os
from functools import lru_cache
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="IQSTREAM_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Project
    PROJECT_NAME: str = "iqstream"
    VERSION: str = "0.1.0"

    # Logging
    LOG: str = "info"
    LOG_FORMAT: str = "json"

    # Per-utterance worker threads; None means one per core
    JOBS: Optional[int] = None

    @field_validator("LOG", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        level = str(v).strip().lower()
        if level not in {"error", "info", "debug"}:
            raise ValueError(f"IQSTREAM_LOG must be one of error, info, debug; got {v!r}")
        return level

    @field_validator("LOG_FORMAT")
    @classmethod
    def check_log_format(cls, v: str) -> str:
        if v not in {"json", "console"}:
            raise ValueError(f"IQSTREAM_LOG_FORMAT must be json or console; got {v!r}")
        return v

    @field_validator("JOBS")
    @classmethod
    def check_jobs(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("IQSTREAM_JOBS must be at least 1")
        return v

    def resolved_jobs(self) -> int:
        """Worker count with the core-count fallback applied"""
        return self.JOBS or os.cpu_count() or 1


@lru_cache()
def get_settings() -> Settings:
    """
    Returns cached settings instance to avoid reading the environment multiple times
    """
    return Settings()


settings = get_settings()
