"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Mapping

from .data import SyntheticSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .train import ALL_MASKS, MRMConfig, TrainConfig, mask_name, parse_mask


@dataclass(frozen=True)
class Settings:
    seed: int = 0
    # data
    n_classes: int = 2
    n_train: int = 600
    n_val: int = 100
    n_test: int = 300
    T: int = 16
    d_l: int = 12
    d_a: int = 8
    d_v: int = 8
    snr_l: float = 3.0
    snr_a: float = 1.5
    snr_v: float = 1.0
    proto_scale: float = 0.12
    # model
    d_model: int = 16
    alpha_min: float = 2.0
    fusion: str = "confidence"
    normalized_weights: bool = False
    rrm: bool = True
    # optimisation
    epochs_teacher: int = 30
    epochs_cotrain: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    momentum: float = 0.9
    clip_norm: float = 5.0
    alpha: float = 1.0
    beta: float = 0.1
    temperature: float = 1.0
    freeze_teacher: bool = True
    # corruption
    p_intra: float = 0.3
    inter_patterns: str = ";".join(mask_name(m) for m in ALL_MASKS)
    # evaluation
    eval_seed: int = 0
    n_seeds: int = 5

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_classes=self.n_classes, n_train=self.n_train, n_val=self.n_val, n_test=self.n_test,
            T=self.T, d_in=(self.d_l, self.d_a, self.d_v), snr=(self.snr_l, self.snr_a, self.snr_v),
            proto_scale=self.proto_scale, seed=self.seed,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d_in=(self.d_l, self.d_a, self.d_v), d_model=self.d_model, T=self.T,
                             n_classes=self.n_classes, alpha_min=self.alpha_min)

    def train_config(self) -> TrainConfig:
        patterns = tuple(parse_mask(p) for p in self.inter_patterns.split(";") if p.strip())
        return TrainConfig(
            epochs_teacher=self.epochs_teacher, epochs_cotrain=self.epochs_cotrain,
            batch_size=self.batch_size, learning_rate=self.learning_rate, momentum=self.momentum,
            clip_norm=self.clip_norm, seed=self.seed,
            loss=LossWeights(self.alpha, self.beta, self.temperature),
            mrm=MRMConfig(self.p_intra, patterns),
            fusion=self.fusion, normalized_weights=self.normalized_weights, rrm=self.rrm,
            freeze_teacher=self.freeze_teacher,
        )

    def validate(self) -> "Settings":
        self.synthetic_spec()
        self.encoder_config()
        self.train_config()
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be positive")
        return self

    def replace(self, **kw) -> "Settings":
        return dataclasses.replace(self, **coerce(kw))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(Settings)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def coerce(values: Mapping[str, object]) -> Dict[str, object]:
    out = {}
    for key, raw in values.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        kind = _TYPES[key]
        if not isinstance(raw, str):
            out[key] = raw
            continue
        try:
            if kind == "bool":
                out[key] = _parse_bool(key, raw)
            elif kind == "int":
                out[key] = int(raw)
            elif kind == "float":
                out[key] = float(raw)
            else:
                out[key] = raw.strip()
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return out


def parse_text(text: str) -> Dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key '{key}'")
        values[key] = value
    return values


def load_settings(path=None, overrides: Mapping[str, object] = ()) -> Settings:
    """Defaults, then the config file, then explicit overrides (which win)."""
    values: Dict[str, object] = {}
    if path is not None:
        try:
            values.update(parse_text(Path(path).read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    values.update(dict(overrides))
    return Settings(**coerce(values)).validate()
