"""Run configuration shared by the command-line tools.

A config is a JSON object whose keys are a subset of :class:`RunConfig`'s
fields; anything else is rejected.  ``DYSALIGN_CONFIG`` names a default
config file used when no ``--config`` flag is given.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .align.losses import LOSS_NAMES
from .core import DysfluencyError

CONFIG_ENV = "DYSALIGN_CONFIG"


class ConfigError(DysfluencyError, ValueError):
    """Malformed or inconsistent configuration; ``field`` names the offender."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


def _default_weights() -> dict:
    return {name: 1.0 for name in LOSS_NAMES}


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=_default_weights)  # kl, flow, pre, post, con, pit
    temperature: float = 2.0
    sigma_min: float = 0.01
    n_gestures: int = 40
    token_dim: int = 64
    learning_rate: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 10
    alignment_threshold: float = 0.5
    train_steps: int = 200
    batch_size: int = 2
    sim_mode: str = "mixed"
    multi_fraction: float = 0.4
    voice_seed: int = 0
    prolongation_ratio: float = 1.6
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ("int", "float") and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"expected a number, got {value!r}", f.name)
            if f.type == "int" and int(value) != value:
                raise ConfigError(f"expected an integer, got {value!r}", f.name)
            if f.type == "dict" and not isinstance(value, dict):
                raise ConfigError(f"expected an object, got {value!r}", f.name)
        unknown = set(self.loss_weights) - set(LOSS_NAMES)
        if unknown:
            raise ConfigError(f"unknown loss names {sorted(unknown)}", "loss_weights")
        self.loss_weights = {**_default_weights(), **{k: float(v) for k, v in self.loss_weights.items()}}
        checks = [
            ("temperature", self.temperature > 0),
            ("sigma_min", 0 < self.sigma_min < 1),
            ("n_gestures", self.n_gestures >= 1),
            ("token_dim", self.token_dim >= 1),
            ("learning_rate", self.learning_rate > 0),
            ("lr_decay", 0 < self.lr_decay <= 1),
            ("decay_every", self.decay_every >= 1),
            ("alignment_threshold", 0 < self.alignment_threshold <= 1),
            ("train_steps", self.train_steps >= 0),
            ("batch_size", self.batch_size >= 1),
            ("sim_mode", self.sim_mode in ("single", "multi", "mixed", "fluent")),
            ("multi_fraction", 0 <= self.multi_fraction <= 1),
            ("prolongation_ratio", self.prolongation_ratio > 1),
            ("jobs", self.jobs >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value {getattr(self, name)!r}", name)

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown field", key)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})


def resolve_config(path=None) -> RunConfig:
    """Config from ``path``, else from ``$DYSALIGN_CONFIG``, else the defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    return RunConfig.load(path) if path else RunConfig()
