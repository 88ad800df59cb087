"""Configuration management for the singular-control toolkit."""

import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

_LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


def _env_int(key: str, default: int) -> int:
    value = os.getenv(key, "").strip()
    if not value:
        return default
    try:
        return int(value)
    except ValueError:
        return default


@dataclass
class Settings:
    """Process-wide settings resolved from the environment."""

    # Artifacts
    output_root: str = field(default_factory=lambda: os.getenv("SCTL_OUTPUT_ROOT", "runs"))

    # Monte-Carlo parallelism and reproducibility
    workers: int = field(
        default_factory=lambda: _env_int("SCTL_WORKERS", os.cpu_count() or 1)
    )
    seed: int = field(default_factory=lambda: _env_int("SCTL_SEED", 0))

    # Logging
    log_level: str = field(
        default_factory=lambda: os.getenv("SCTL_LOG_LEVEL", "INFO").upper()
    )

    # LangSmith
    langsmith_api_key: str = field(
        default_factory=lambda: os.getenv("LANGSMITH_API_KEY", "")
    )
    langsmith_project: str = field(
        default_factory=lambda: os.getenv("LANGSMITH_PROJECT", "singular-control")
    )
    langsmith_tracing: bool = field(
        default_factory=lambda: os.getenv("LANGSMITH_TRACING", "false").lower() == "true"
    )

    def validate(self) -> list[str]:
        """Validate settings. Returns a list of problems (empty when valid)."""
        problems = []
        if self.workers < 1:
            problems.append(f"SCTL_WORKERS must be >= 1 (got {self.workers})")
        if self.seed < 0:
            problems.append(f"SCTL_SEED must be non-negative (got {self.seed})")
        if self.log_level not in _LOG_LEVELS:
            problems.append(f"SCTL_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)}")
        if self.langsmith_tracing and not self.langsmith_api_key:
            problems.append("LANGSMITH_TRACING is enabled but LANGSMITH_API_KEY is not set")
        return problems

