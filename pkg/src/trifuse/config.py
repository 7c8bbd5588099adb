"""Detector configuration.

Defaults follow the generation protocol (temperature 0.8, 300 tokens), the
hyperparameter sweeps (8 attention heads, hidden-state layer 24), and the
focal-loss convention (gamma 2, alpha 0.25). A config travels with every
checkpoint so a trained detector is self-describing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

from .errors import InvalidConfig

CROSS_ATTENTION_MODES = ("full_trajectory", "cls_only")


@dataclass
class DetectorConfig:
    hidden_dim: int = 64
    num_heads: int = 8
    encoder_layers: int = 2
    ffn_multiplier: int = 4
    max_units: int = 32
    positional_encoding: bool = True
    cross_attention_mode: str = "full_trajectory"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    layer_index: int = 24
    temperature: float = 0.8
    max_tokens: int = 300

    def validate(self) -> "DetectorConfig":
        positive = {
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "encoder_layers": self.encoder_layers,
            "ffn_multiplier": self.ffn_multiplier,
            "max_units": self.max_units,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "max_tokens": self.max_tokens,
        }
        for name, value in positive.items():
            if not isinstance(value, int) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.num_heads != 0:
            raise InvalidConfig(
                f"hidden_dim ({self.hidden_dim}) must be divisible by "
                f"num_heads ({self.num_heads})"
            )
        if self.cross_attention_mode not in CROSS_ATTENTION_MODES:
            raise InvalidConfig(
                f"cross_attention_mode must be one of {CROSS_ATTENTION_MODES}, "
                f"got {self.cross_attention_mode!r}"
            )
        if self.focal_gamma < 0:
            raise InvalidConfig(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 < self.focal_alpha < 1.0:
            raise InvalidConfig(f"focal_alpha must lie in (0, 1), got {self.focal_alpha}")
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be non-negative, got {self.seed}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, mapping: dict[str, Any]) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping).validate()


def _coerce(name: str, kind: type, raw: str) -> Any:
    raw = raw.strip()
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise InvalidConfig(f"config key {name!r}: cannot parse {raw!r} as boolean")
    try:
        return kind(raw)
    except ValueError as exc:
        raise InvalidConfig(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a flat ``key=value`` config file into typed overrides.

    Blank lines and ``#`` comments are ignored. Keys must name DetectorConfig
    fields; values are coerced to the field's type.
    """
    types = {f.name: f.type for f in fields(DetectorConfig)}
    # dataclass field types are strings under `from __future__ import annotations`
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    overrides: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise InvalidConfig(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in types:
                raise InvalidConfig(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(key, kinds[str(types[key])], raw)
    return overrides


def resolve_config(
    file_path: str | Path | None = None,
    flag_overrides: dict[str, Any] | None = None,
) -> DetectorConfig:
    """Build a validated config: defaults < config file < explicit flags."""
    merged: dict[str, Any] = {}
    if file_path is not None:
        merged.update(parse_config_file(file_path))
    for key, value in (flag_overrides or {}).items():
        if value is not None:
            merged.update({key: value})
    return DetectorConfig.from_dict(merged)
