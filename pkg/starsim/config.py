from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import ValidationError, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from starsim.errors import ConfigError

KIB = 1024
MIB = 1024 * KIB
PAGE_BYTES = 4096


class Settings(BaseSettings):
    # Memory
    mem_bytes: int = 16 * MIB

    # Scheme
    scheme: Literal["wb", "strict", "anubis", "star"] = "star"
    aw_mode: Literal["aw-l", "aw-m", "aw-h"] = "aw-h"
    fresh_victim_policy: Literal["writeback", "discard"] = "writeback"

    # Metadata cache (desk scale; 256 KiB each matches the full-size setup)
    counter_cache_bytes: int = 32 * KIB
    sit_cache_bytes: int = 32 * KIB
    ways: int = 8

    # ADR bitmap lines
    adr_lines: int = 16
    adr_l2_lines: int | None = None

    # Run
    seed: int = 0
    read_ns: int = 100
    shadow_checks: bool = False

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding="utf-8",
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # A run depends on (file, flags) only; the process environment is ignored.
        return init_settings, dotenv_settings

    @field_validator("scheme", "aw_mode", "fresh_victim_policy", mode="before")
    @classmethod
    def _lowercase(cls, value: Any) -> Any:
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("mem_bytes")
    @classmethod
    def _whole_pages(cls, value: int) -> int:
        if value <= 0 or value % PAGE_BYTES:
            raise ValueError(f"mem_bytes must be a positive multiple of {PAGE_BYTES}")
        return value

    @field_validator("ways", "adr_lines", "read_ns")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @model_validator(mode="after")
    def _check_capacities(self) -> "Settings":
        set_bytes = self.ways * 64
        for name in ("counter_cache_bytes", "sit_cache_bytes"):
            size = getattr(self, name)
            if size <= 0 or size % set_bytes:
                raise ValueError(f"{name} must be a positive multiple of ways x 64 ({set_bytes})")
        if self.ways < 2:
            raise ValueError("ways must be at least 2")
        if self.adr_lines < 2:
            raise ValueError("adr_lines must hold at least one L1 and one L2 line")
        l2 = self.l2_lines
        if not 1 <= l2 < self.adr_lines:
            raise ValueError("adr_l2_lines must be in [1, adr_lines)")
        return self

    @property
    def l2_lines(self) -> int:
        if self.adr_l2_lines is not None:
            return self.adr_l2_lines
        return max(1, self.adr_lines // 8)

    @property
    def l1_lines(self) -> int:
        return self.adr_lines - self.l2_lines

    @property
    def scheme_label(self) -> str:
        """Name used in reports: the AW mode for STAR, the scheme otherwise."""
        return self.aw_mode if self.scheme == "star" else self.scheme


def load_settings(path: str | Path | None = None, **overrides: Any) -> Settings:
    """
    Build settings from an optional key=value file plus explicit overrides.

    Overrides whose value is None are ignored so argparse defaults can be
    passed straight through.
    """
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {key: value for key, value in overrides.items() if value is not None}
    try:
        return Settings(_env_file=path, **values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


@lru_cache
def get_settings() -> Settings:
    return Settings()
