"""One TOML file for every stage; command-line flags override file values."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from datetime import date, time
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import tomli

from .detect import DetectConfig
from .features import EnrichmentConfig
from .neural import TrainConfig
from .sequence import SplitPolicy
from .synthgen import GenConfig

SECTIONS = ("generate", "features", "sequence", "train", "detect")
DEFAULT_WINDOW = 10


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    generate: GenConfig = field(default_factory=GenConfig)
    features: EnrichmentConfig = field(default_factory=EnrichmentConfig)
    window: int = DEFAULT_WINDOW
    split: SplitPolicy = field(default_factory=SplitPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def snapshot(self) -> dict:
        """Plain JSON-ready view of every setting, used in manifests."""
        return {
            "generate": _plain(self.generate),
            "features": _plain(self.features),
            "sequence": {"window": self.window, **_plain(self.split)},
            "train": _plain(self.train),
            "detect": _plain(self.detect),
        }


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (date, time)):
        return value.isoformat()
    if isinstance(value, Mapping):
        return {str(_plain(k)): _plain(v) for k, v in sorted(value.items(), key=lambda kv: str(_plain(kv[0])))}
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _section(raw: Mapping, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def settings_from_mapping(raw: Mapping, overrides: Mapping[str, Any] | None = None) -> Settings:
    """Build settings from parsed TOML plus flag overrides.

    ``overrides`` keys are the command-line names: ``seed`` (generator and
    training), ``window``, ``hidden``, ``epochs``, ``lr`` and ``z``.
    """
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    gen, feat, seq, tr, det = (_section(raw, s) for s in SECTIONS)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "seed" in ov:
        gen["seed"] = ov["seed"]
        tr["seed"] = ov["seed"]
    if "window" in ov:
        seq["window"] = ov["window"]
    for flag, key in (("hidden", "hidden"), ("epochs", "epochs"), ("lr", "learning_rate")):
        if flag in ov:
            tr[key] = ov[flag]
    if "z" in ov:
        det["z"] = ov["z"]
    try:
        window = int(seq.pop("window", DEFAULT_WINDOW))
        if window < 1:
            raise ValueError("window must be >= 1")
        unknown_seq = set(seq) - {"train_fraction", "validation_fraction"}
        if unknown_seq:
            raise ValueError(f"unknown sequence options {sorted(unknown_seq)}")
        unknown_tr = set(tr) - set(TrainConfig.__dataclass_fields__)
        if unknown_tr:
            raise ValueError(f"unknown train options {sorted(unknown_tr)}")
        return Settings(
            generate=GenConfig.from_mapping(gen),
            features=EnrichmentConfig.from_mapping(feat),
            window=window,
            split=SplitPolicy(**seq),
            train=TrainConfig(**tr),
            detect=DetectConfig.from_mapping(det),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_settings(path=None, overrides: Mapping[str, Any] | None = None) -> Settings:
    """Precedence is flag, then file, then built-in default."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            raw = tomli.loads(path.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return settings_from_mapping(raw, overrides)
