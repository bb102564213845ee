"""Toolkit configuration using pydantic-settings."""

import os
from functools import lru_cache
from typing import Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    VERSION: str = "0.1.0"
    ENVIRONMENT: Literal["development", "staging", "production"] = "development"
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    # Output
    OUTPUT_ROOT: str = "./runs"

    # Worker pool; None means one worker per available CPU
    WORKERS: int | None = Field(default=None, ge=1)

    @field_validator("WORKERS", mode="before")
    @classmethod
    def parse_workers(cls, v: str | int | None) -> int | None:
        """Treat an empty WORKERS variable as unset."""
        if isinstance(v, str) and not v.strip():
            return None
        return v  # type: ignore[return-value]

    @property
    def default_workers(self) -> int:
        """Worker count to use when no flag overrides it."""
        return self.WORKERS or os.cpu_count() or 1


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
