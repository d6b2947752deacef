from typing import Any, Dict, Optional

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from reloc_kit.core.errors import InvalidSettings


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
        populate_by_name=True,
    )

    # Application Settings
    APP_NAME: str = "reloc-kit"
    APP_VERSION: str = "0.1.0"
    DEBUG: bool = False
    ENVIRONMENT: str = Field(
        default="development",
        description="Environment: development, test, production",
    )

    # Worker Settings
    THREADS: int = Field(
        default=1,
        validation_alias="RELOC_KIT_THREADS",
        description="Worker cap used when --threads is not given",
    )

    @field_validator("THREADS", mode="before")
    @classmethod
    def parse_threads(cls, v: Any) -> int:
        if v is None or (isinstance(v, str) and not v.strip()):
            return 1
        value = int(v)
        if value < 1:
            raise ValueError("RELOC_KIT_THREADS must be a positive integer")
        return value

    # Logging Settings
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")
    LOG_FORMAT: str = Field(
        default="console", description="Log format: json or console"
    )

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in {"json", "console"}:
            raise ValueError("LOG_FORMAT must be 'json' or 'console'")
        return v

    @property
    def is_development(self) -> bool:
        return self.ENVIRONMENT.lower() == "development"

    @property
    def is_production(self) -> bool:
        return self.ENVIRONMENT.lower() == "production"

    @property
    def is_testing(self) -> bool:
        return self.ENVIRONMENT.lower() == "test"

    def model_dump_env(self) -> Dict[str, str]:
        """Export settings as environment variables."""
        env_vars = {}
        for field_name, field_value in self.model_dump().items():
            if field_value is not None:
                env_vars[field_name] = str(field_value)
        return env_vars


def get_settings() -> Settings:
    """Settings read from the environment now; bad values raise InvalidSettings."""
    try:
        return Settings()
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "settings"
        raise InvalidSettings(f"invalid environment {field}: {first['msg']}") from exc


def resolve_threads(flag: Optional[int] = None) -> int:
    """Worker count: the --threads flag wins, then RELOC_KIT_THREADS, then 1."""
    if flag is not None:
        if flag < 1:
            raise ValueError("--threads must be a positive integer")
        return flag
    return get_settings().THREADS
