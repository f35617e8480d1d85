"""Run configuration tree: typed sections, YAML loading, CLI overrides.

Every key is validated before any work happens; unknown keys are rejected
with the full offending path so config typos never fail silently mid-run.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    """Raised when a config file or override is structurally invalid."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class DatasetConfig:
    root: str = ""
    k_frames: int = 8
    box_growth: float = 0.8
    subsample_stride: int = 25

    def validate(self) -> None:
        _require(self.k_frames >= 1, "dataset.k_frames must be >= 1")
        _require(self.box_growth >= 0, "dataset.box_growth must be >= 0")
        _require(self.subsample_stride >= 1, "dataset.subsample_stride must be >= 1")


@dataclass
class AugmentConfig:
    enabled: bool = True
    scale_range: tuple[float, float] = (0.8, 1.2)
    blur_prob: float = 0.3
    sharpen_prob: float = 0.3
    contrast_prob: float = 0.3
    jpeg_prob: float = 0.3
    blur_sigma_range: tuple[float, float] = (0.5, 2.0)
    sharpen_amount_range: tuple[float, float] = (0.5, 2.0)
    contrast_factor_range: tuple[float, float] = (0.6, 1.4)
    jpeg_quality_range: tuple[int, int] = (30, 90)

    def validate(self) -> None:
        for name in ("scale_range", "blur_sigma_range", "sharpen_amount_range",
                     "contrast_factor_range", "jpeg_quality_range"):
            lo, hi = getattr(self, name)
            _require(lo <= hi, f"augment.{name}: lo must be <= hi")
        for name in ("blur_prob", "sharpen_prob", "contrast_prob", "jpeg_prob"):
            p = getattr(self, name)
            _require(0.0 <= p <= 1.0, f"augment.{name} must be in [0,1]")
        _require(self.jpeg_quality_range[0] >= 1 and self.jpeg_quality_range[1] <= 100,
                 "augment.jpeg_quality_range must lie within [1,100]")

    @property
    def op_probabilities(self) -> dict[str, float]:
        return {"blur": self.blur_prob, "sharpen": self.sharpen_prob,
                "contrast": self.contrast_prob, "jpeg": self.jpeg_prob}


@dataclass
class NetworkConfig:
    resolution: int = 256
    pose_dim: int = 256
    identity_dim: int = 512
    pose_encoder_preset: str = "small"
    identity_encoder_preset: str = "large"
    mlp_hidden: int = 768
    base_channels: int = 512
    disc_channels: int = 64
    identity_channels: int = 64
    pose_channels: int = 16

    def validate(self) -> None:
        _require(self.resolution >= 8, "networks.resolution must be >= 8")
        up = math.log2(self.resolution / 4)
        _require(up == int(up) and up >= 1,
                 "networks.resolution must be 4 * 2**n for integer n >= 1")
        _require(self.pose_dim >= 1, "networks.pose_dim must be >= 1")
        _require(self.identity_dim >= 1, "networks.identity_dim must be >= 1")
        _require(self.pose_encoder_preset in ("small", "large"),
                 "networks.pose_encoder_preset must be 'small' or 'large'")
        _require(self.identity_encoder_preset in ("large",),
                 "networks.identity_encoder_preset must be 'large'")
        _require(self.mlp_hidden >= 1, "networks.mlp_hidden must be >= 1")
        for name in ("base_channels", "disc_channels", "identity_channels", "pose_channels"):
            _require(getattr(self, name) >= 8, f"networks.{name} must be >= 8")
        _require(self.base_channels % 8 == 0, "networks.base_channels must be divisible by 8")

    @property
    def upsample_blocks(self) -> int:
        return int(math.log2(self.resolution / 4))


@dataclass
class LossConfig:
    w_dice: float = 1.0
    w_content_generic: float = 10.0
    w_content_face: float = 0.01
    w_adv: float = 1.0
    w_fm: float = 10.0
    w_emb: float = 1.0
    generic_extractor: str = "random-conv"
    face_extractor: Optional[str] = None
    layer_set: Optional[list[str]] = None
    eps: float = 1e-7

    def validate(self) -> None:
        weights = [self.w_dice, self.w_content_generic, self.w_content_face,
                   self.w_adv, self.w_fm, self.w_emb]
        for w in weights:
            _require(w >= 0 and math.isfinite(w), "losses.w_* must be finite and >= 0")
        _require(any(w > 0 for w in weights), "losses: at least one weight must be positive")
        _require(self.eps > 0, "losses.eps must be > 0")


@dataclass
class TrainerConfig:
    steps: int = 1_200_000
    batch_size: int = 8
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    use_segmentation: bool = True
    log_every: int = 100
    sample_every: int = 1000
    prefetch_capacity: int = 16
    finetune_steps: int = 600
    finetune_frames: int = 32

    def validate(self) -> None:
        _require(self.steps >= 0, "trainer.steps must be >= 0")
        _require(self.batch_size >= 1, "trainer.batch_size must be >= 1")
        _require(self.lr_g >= 0 and self.lr_d >= 0, "trainer learning rates must be >= 0")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "trainer betas must be in [0,1)")
        _require(self.log_every >= 1 and self.sample_every >= 1,
                 "trainer logging intervals must be >= 1")
        _require(self.prefetch_capacity >= 1, "trainer.prefetch_capacity must be >= 1")
        _require(self.finetune_steps >= 0, "trainer.finetune_steps must be >= 0")
        _require(1 <= self.finetune_frames, "trainer.finetune_frames must be >= 1")


@dataclass
class EvalConfig:
    embedder: str = "synthetic-color"
    detector: str = "synthetic-landmarks"
    topn: list[int] = field(default_factory=lambda: [10, 20, 50, 100])
    queries_per_group: int = 100
    probe_hidden: int = 768
    probe_iters: int = 2000
    probe_lr: float = 1e-3

    def validate(self) -> None:
        _require(all(n >= 1 for n in self.topn), "evaluation.topn entries must be >= 1")
        _require(self.queries_per_group >= 1, "evaluation.queries_per_group must be >= 1")
        _require(self.probe_hidden >= 1, "evaluation.probe_hidden must be >= 1")
        _require(self.probe_iters >= 1, "evaluation.probe_iters must be >= 1")


_SECTIONS = {
    "dataset": DatasetConfig,
    "augment": AugmentConfig,
    "networks": NetworkConfig,
    "losses": LossConfig,
    "trainer": TrainerConfig,
    "evaluation": EvalConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, target_type: Any, path: str) -> Any:
    """Coerce a YAML scalar/list into the dataclass field type."""
    origin = getattr(target_type, "__origin__", None)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a 2-element sequence")
        args = target_type.__args__
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} elements, got {len(value)}")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        elem_t = target_type.__args__[0]
        return [_coerce(v, elem_t, f"{path}[{i}]") for i, v in enumerate(value)]
    if target_type is Optional[str] or target_type == Optional[str]:
        if value is None:
            return None
        target_type = str
    if target_type is Optional[list[str]]:
        if value is None:
            return None
        return [_coerce(v, str, f"{path}[{i}]") for i, v in enumerate(value)]
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a bool, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an int, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _fill_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key: {path}.{key}")
    kwargs = {}
    hints = {f.name: f.type for f in fields(cls)}
    resolved = _resolve_hints(cls)
    for key, value in data.items():
        kwargs[key] = _coerce(value, resolved.get(key, hints[key]), f"{path}.{key}")
    return cls(**kwargs)


def _resolve_hints(cls) -> dict:
    import typing
    try:
        return typing.get_type_hints(cls)
    except Exception:
        return {}


def config_from_dict(tree: dict) -> RunConfig:
    """Build a validated RunConfig from a nested plain dict."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    cfg = RunConfig()
    for key, value in tree.items():
        if key == "seed":
            cfg.seed = _coerce(value, int, "seed")
        elif key in _SECTIONS:
            setattr(cfg, key, _fill_section(_SECTIONS[key], value, key))
        else:
            raise ConfigError(f"unknown config key: {key}")
    return cfg.validate()


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Load YAML config (or defaults when path is None) and apply dotted overrides.

    Overrides map dotted paths like "networks.pose_dim" to values; a value of
    None leaves the config untouched (unset CLI flag).
    """
    tree: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        tree = loaded
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted}: {part} is not a mapping")
        node[parts[-1]] = value
    return config_from_dict(tree)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    """Write the fully resolved config tree as YAML."""
    tree = cfg.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(tree, fh, sort_keys=True, default_flow_style=False)
