"""
Experiment configuration.

Settings are flat, one field per knob. Values come from (highest priority
first) explicit overrides such as CLI flags, then a flat key=value config
file, then the defaults below, which are the published DAMP configuration.
Environment variables are deliberately not read.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from damp.core.exceptions import ConfigError
from damp.core.io import numbered_lines
from damp.schemas.model import Hyperparams
from damp.schemas.train import Strategy, TrainConfig

logger = logging.getLogger("damp.config")


class Settings(BaseSettings):
    # ── Experiment ─────────────────────────────────────
    strategy: Strategy = "damp"
    seed: int = 0
    epochs: int = 100
    patience: int = 10
    stop_on_perfect_dev: bool = True
    workers: int = 1

    # ── Data ───────────────────────────────────────────
    data: Path | None = None
    test_data: Path | None = None
    embeddings: Path | None = None
    target_domain: str | None = None
    target_fraction: float = 0.10
    dev_fraction: float = 0.20
    domain_queries: str = ""  # "socialnetwork:social network;recipes:recipe"
    fractions: str = "0.01,0.05,0.1,0.2,0.4"
    min_count: int = 1

    # ── Outputs ────────────────────────────────────────
    out: Path | None = None
    checkpoint: Path | None = None

    # ── Network ────────────────────────────────────────
    embedding_dim: int = 300
    encoder_hidden: int = 300
    hidden_per_direction: bool = False
    decoder_hidden: int | None = None
    init_range: float = 0.08

    # ── Domain relevance / discrimination ──────────────
    r_c: float = 60.0
    r_f: float = 2.0
    relevance_k: int = 2
    lambda_c: float = 0.4
    lambda_f: float = 0.2
    reverse_grad_discriminator: bool = False

    # ── Optimisation ───────────────────────────────────
    dropout: float = 0.6
    l2: float = 1e-5
    batch_size: int = 64
    lr: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    clip_norm: float | None = None

    # ── Decoding ───────────────────────────────────────
    beam_size: int = 3
    constrained_fine: bool = True
    max_sketch_decode_len: int | None = None
    max_lf_decode_len: int | None = None
    max_utterance_len: int = 100
    max_lf_len: int = 200

    model_config = SettingsConfigDict(case_sensitive=False, extra="forbid")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @field_validator("target_fraction")
    @classmethod
    def _check_target_fraction(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("target_fraction must lie in (0, 1]")
        return v

    @field_validator("dev_fraction")
    @classmethod
    def _check_dev_fraction(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("dev_fraction must lie in (0, 1)")
        return v

    @property
    def domain_queries_map(self) -> dict[str, tuple[str, ...]]:
        queries: dict[str, tuple[str, ...]] = {}
        for chunk in self.domain_queries.split(";"):
            if not chunk.strip():
                continue
            name, sep, words = chunk.partition(":")
            if not sep or not words.split():
                raise ConfigError(f"malformed domain query {chunk.strip()!r}", key="domain_queries")
            queries[name.strip()] = tuple(words.split())
        return queries

    @property
    def fractions_list(self) -> list[float]:
        try:
            values = [float(v) for v in self.fractions.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(str(exc), key="fractions") from exc
        if not values or any(not 0.0 < v <= 1.0 for v in values):
            raise ConfigError("fractions must be a non-empty list within (0, 1]", key="fractions")
        return values

    def hyperparams(self) -> Hyperparams:
        fields = {name: getattr(self, name) for name in Hyperparams.model_fields}
        try:
            return Hyperparams(**fields)
        except ValidationError as exc:
            raise ConfigError(_first_error(exc)) from exc

    def train_config(self, out_dir: Path | None = None) -> TrainConfig:
        return TrainConfig(
            strategy=self.strategy,
            hyperparams=self.hyperparams(),
            epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            out_dir=out_dir or self.out or Path("runs") / self.strategy,
            stop_on_perfect_dev=self.stop_on_perfect_dev,
            domain_queries=self.domain_queries_map,
            workers=self.workers,
        )


def read_config_file(path: Path) -> dict[str, str]:
    """Parse a flat key=value file into raw string values keyed by field name."""
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    known = set(Settings.model_fields)
    values: dict[str, str] = {}

    def undecodable(lineno: int, exc: UnicodeDecodeError) -> ConfigError:
        return ConfigError(f"{path}: invalid UTF-8 at byte {exc.start}", line=lineno)

    for lineno, raw in numbered_lines(path, undecodable):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: expected key=value", line=lineno)
        key = key.strip().lower().replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}: unknown setting", line=lineno, key=key)
        values[key] = value.strip()
    return values


def load_settings(config_path: Path | None = None, **overrides: Any) -> Settings:
    """Build Settings from an optional config file plus overrides (overrides win)."""
    values: dict[str, Any] = read_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    # empty strings in a config file mean "unset" for optional fields
    values = {k: (None if v == "" and k in _OPTIONAL else v) for k, v in values.items()}
    try:
        settings = Settings(**values)
    except ValidationError as exc:
        raise ConfigError(_first_error(exc)) from exc
    logger.debug("Settings loaded (%d explicit values)", len(values))
    return settings


_OPTIONAL = {
    name for name, field in Settings.model_fields.items() if not field.is_required() and field.default is None
}


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}" if loc else str(err.get("msg"))
