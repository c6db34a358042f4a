"""Run configuration: a flat key=value file with command-line overrides.

Every key is validated before any work starts; unknown keys are rejected.
The seed is mandatory, either in the file or as a flag, so every run is
reproducible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .notes import MelodiaError, Vocabularies


class ConfigError(MelodiaError):
    """Invalid, unknown, or missing configuration."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    """Union of dataset, model, training, and analysis settings."""

    seed: int
    segment_length: int = 100
    segment_stride: int = 50
    transpose_low: int = -3
    transpose_high: int = 3
    holdout_fraction: float = 0.0
    hidden_size: int = 512
    latent_dim: int = 128
    embed_delta: int = 64
    embed_duration: int = 64
    embed_pitch: int = 128
    max_generate_len: int = 100
    kl_ramp_steps: int = 2000
    learning_rate: float = 1e-4
    batch_size: int = 128
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    epochs: int = 1
    train_dtype: str = "float32"
    generation_mode: str = "sample"
    temperature: float = 1.0
    interpolation_steps: int = 11
    interpolation_pairs: int = 100

    def validate(self) -> None:
        positive = (
            "segment_length", "segment_stride", "hidden_size", "latent_dim",
            "embed_delta", "embed_duration", "embed_pitch", "max_generate_len",
            "batch_size", "epochs", "interpolation_pairs",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.transpose_low > self.transpose_high:
            raise ConfigError("transpose_low must not exceed transpose_high")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if self.learning_rate <= 0 or self.rmsprop_eps <= 0:
            raise ConfigError("learning_rate and rmsprop_eps must be positive")
        if not 0.0 <= self.rmsprop_decay < 1.0:
            raise ConfigError("rmsprop_decay must lie in [0, 1)")
        if self.kl_ramp_steps < 0:
            raise ConfigError("kl_ramp_steps must be >= 0")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError("train_dtype must be float32 or float64")
        if self.generation_mode not in ("sample", "greedy"):
            raise ConfigError("generation_mode must be sample or greedy")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.interpolation_steps < 2:
            raise ConfigError("interpolation_steps must be at least 2")
        if self.latent_dim > 4 * self.hidden_size:
            raise ConfigError("latent_dim must not exceed 4 * hidden_size")

    def model_config(self, vocabs: Vocabularies, note_unrolling: bool = True):
        from .model import ModelConfig

        sizes = vocabs.sizes()
        return ModelConfig(
            vocab_delta=sizes[0],
            vocab_duration=sizes[1],
            vocab_pitch=sizes[2],
            hidden_size=self.hidden_size,
            latent_dim=self.latent_dim,
            embed_delta=self.embed_delta,
            embed_duration=self.embed_duration,
            embed_pitch=self.embed_pitch,
            note_unrolling=note_unrolling,
            max_generate_len=self.max_generate_len,
            kl_ramp_steps=self.kl_ramp_steps,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(
    path: str | Path,
    overrides: Iterable[str] = (),
    seed: int | None = None,
) -> RunConfig:
    """Read the file, apply ``key=value`` overrides, validate everything."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    values = parse_config_text(config_path.read_text(), str(config_path))
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override must look like key=value, got {override!r}")
        key, raw = (part.strip() for part in override.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown override key {key!r}")
        values[key] = _convert(key, raw)
    if seed is not None:
        values["seed"] = seed
    if "seed" not in values:
        raise ConfigError("a seed is required, via the config file or --seed")
    config = RunConfig(**values)
    config.validate()
    return config
