"""
Core configuration settings for DeGLIF.

This module provides process-level configuration using Pydantic Settings.
All values can be overridden via environment variables prefixed with
``DEGLIF_`` (for example ``DEGLIF_THREADS=4``) or a local ``.env`` file.

Experiment parameters (graph, noise, model, detector) are not settings;
they live in the experiment JSON validated by ``deglif.schemas.config``.
"""

import os
from enum import Enum
from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class HvpBackend(str, Enum):
    """Hessian-vector product backend."""
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="DEGLIF_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "DeGLIF"
    app_env: str = "development"
    debug: bool = False
    log_level: str = "INFO"

    # Parallelism (DEGLIF_THREADS)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1)

    # Influence solver defaults
    damping: float = 1e-3
    max_damping: float = 1.0
    damping_growth: float = 10.0
    cg_tol: float = 1e-6
    cg_max_iters: int = 1000
    hvp_backend: HvpBackend = HvpBackend.ANALYTIC

    # Oracle scale guard
    oracle_max_nodes: int = 100

    @field_validator("threads")
    @classmethod
    def _at_least_one_thread(cls, value: int) -> int:
        return max(1, value)

    @field_validator("damping", "max_damping")
    @classmethod
    def _non_negative_damping(cls, value: float) -> float:
        if value < 0:
            raise ValueError("damping must be >= 0")
        return value


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Returns:
        Settings: The process settings singleton.
    """
    return Settings()
