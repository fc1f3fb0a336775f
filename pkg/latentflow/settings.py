"""
Configuration management using pydantic-settings and python-dotenv.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field, field_validator
from dotenv import load_dotenv

# Load environment variables from env file
load_dotenv()


class Settings(BaseSettings):
    """Process-wide settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="LATENTFLOW_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # Reproducibility
    seed: int = Field(default=0, description="Global seed default (LATENTFLOW_SEED)")

    # Execution
    num_workers: int = Field(default=1, description="Worker threads for sweep cells")
    out_dir: str = Field(default="runs", description="Default output directory")
    tiebreak_max_batch: int = Field(
        default=16,
        description="Largest batch for which OT coupling enforces lexicographic tie-breaking"
    )

    # Application
    log_level: str = Field(default="INFO", description="Logging level")
    debug: bool = Field(default=False, description="Debug mode")

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v):
        """Seeds feed SeedSequence, which rejects negatives."""
        if v < 0:
            raise ValueError("Seed must be non-negative")
        return v

    @field_validator("num_workers")
    @classmethod
    def validate_workers(cls, v):
        """Validate worker count."""
        if v < 1 or v > 256:
            raise ValueError("num_workers must be between 1 and 256")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Accept the standard logging level names only."""
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    @property
    def effective_log_level(self) -> str:
        """Debug mode forces DEBUG logging."""
        return "DEBUG" if self.debug else self.log_level


def load_settings() -> Settings:
    """Load settings with proper error handling."""
    try:
        return Settings()
    except Exception as e:
        error_msg = f"Failed to load settings: {e}"
        if "seed" in str(e).lower():
            error_msg += "\nLATENTFLOW_SEED must be a non-negative integer"
        raise ValueError(error_msg) from e


# Global settings instance
settings = load_settings()
