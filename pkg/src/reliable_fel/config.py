"""Flat ``key = value`` experiment configuration with typed validation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .datagen import DatasetSpec, RefinementConfig
from .exceptions import ConfigError


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    n_classes: int = 8
    samples_per_class: int = 250
    separation: float = 3.0
    spread: float = 1.0
    confusion_pairs: tuple = ((0, 1), (2, 3))
    confusion_overlap: float = 0.8
    imbalance: float = 1.0
    n_groups: int = 16
    group_shift: float = 0.3
    latent_dim: int = 16
    image_size: int = 32
    image_channels: int = 3
    landmark_channels: int = 4
    pixel_noise: float = 0.02
    data_seed: int = 0
    data_dir: str = ""
    test_fraction: float = 0.25
    # encoder
    crop_size: int = 28
    pool_size: int = 16
    levels: tuple = (8, 4, 2)
    windows: tuple = (4, 2, 2)
    dim: int = 64
    n_heads: int = 4
    embed_dim: int = 64
    mlp_ratio: int = 2
    # reliability balancing
    n_anchors: int = 8
    delta: float = 1.0
    corrector_tokens: int = 4
    corrector_heads: int = 4
    head_hidden: int = 64
    dropout: float = 0.5
    enable_anchors: bool = True
    enable_mhsa: bool = True
    # losses
    lambda_cls: float = 1.0
    lambda_anchor: float = 1.0
    lambda_center: float = 1.0
    # optimisation
    lr: float = 3e-4
    gamma: float = 0.995
    epochs: int = 60
    batch_size: int = 0
    per_group: int = 64
    per_class: int = 32
    # label handling
    noise_rate: float = 0.0
    smoothing: float = 11.0
    augment: bool = True
    # run
    seed: int = 0
    output_dir: str = "runs"
    sweep_values: tuple = ()

    def __post_init__(self):
        self.dataset_spec()
        RefinementConfig(self.per_group, self.per_class)
        checks = [
            (0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)"),
            (self.lr > 0, "lr must be positive"),
            (0.0 < self.gamma <= 1.0, "gamma must be in (0, 1]"),
            (self.epochs >= 0, "epochs must be nonnegative"),
            (self.batch_size >= 0, "batch_size must be nonnegative (0 = whole epoch batch)"),
            (0.0 <= self.noise_rate <= 0.5, "noise_rate must be in [0, 0.5]"),
            (0.0 <= self.smoothing <= 50.0, "smoothing must be in [0, 50]"),
            (self.n_anchors >= 0, "n_anchors must be nonnegative"),
            (self.delta > 0, "delta must be positive"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (min(self.lambda_cls, self.lambda_anchor, self.lambda_center) >= 0,
             "loss weights must be nonnegative"),
            (max(self.lambda_cls, self.lambda_anchor, self.lambda_center) > 0,
             "at least one loss weight must be positive"),
            (len(self.levels) == len(self.windows) and len(self.levels) > 0,
             "levels and windows must be non-empty and equally long"),
            (self.dim > 0 and self.dim % self.n_heads == 0, "n_heads must divide dim"),
            (self.embed_dim % self.corrector_tokens == 0,
             "corrector_tokens must divide embed_dim"),
            (self.pool_size <= self.crop_size <= self.image_size,
             "need pool_size <= crop_size <= image_size"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def dataset_spec(self):
        return DatasetSpec(**{f.name: getattr(self, f.name) for f in fields(DatasetSpec)
                              if f.name != "seed"}, seed=self.data_seed)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_text(self, include_output=True):
        lines = []
        for f in fields(self):
            if f.name == "output_dir" and not include_output:
                continue
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        """Stable digest of every setting that can change results."""
        return hashlib.sha256(self.to_text(include_output=False).encode()).hexdigest()[:16]


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join("-".join(str(v) for v in pair) for pair in value)
        return ",".join(format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _scalar(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _parse_tuple(text, default):
    if not text.strip():
        return ()
    items = [t.strip() for t in text.split(",")]
    if default and isinstance(default[0], tuple):
        return tuple(tuple(int(v) for v in t.split("-")) for t in items)
    if default and isinstance(default[0], int):
        return tuple(int(t) for t in items)
    if default:
        return tuple(float(t) for t in items)
    return tuple(_scalar(t) for t in items)


def parse_value(name, text, default):
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return _parse_tuple(text, default)
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} ({exc})") from exc


def parse_config_text(text, cls=ExperimentConfig):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value, getattr(defaults, key))
    return cls(**values)


def load_config(path, cls=ExperimentConfig):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, cls)
