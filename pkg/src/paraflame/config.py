"""TOML run configuration with [dataset], [model], [train] and [eval] sections.

Every key has a default, so an empty file is a valid configuration. Unknown
sections or keys are rejected. ``clip = 0`` disables gradient clipping
(TOML has no null).
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dataset import Plan, desk_plan, full_plan
from .models import MODEL_KINDS, OperatorNet, ParamEmbedding, build_model
from .models.pcnn import PcnnSpec
from .models.pfno import PfnoSpec
from .training import TrainConfig

__all__ = ["ConfigError", "DatasetSection", "ModelSection", "TrainSection", "EvalSection",
           "RunConfig", "load_config", "parse_config", "dump_config"]


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass(frozen=True)
class DatasetSection:
    equation: str = "KS"
    gammas: tuple = (6.0, 24.0)
    sequences: int = 20
    frames: int = 200
    valid_sequences: int = 2
    n: int = 256
    dt: float = 0.015
    seed: int = 0

    def plan(self, scale: str = "desk", split: str = "train", seed: int | None = None) -> Plan:
        base = self.seed if seed is None else seed
        if scale == "full":
            return full_plan(self.equation, split=split, base_seed=base)
        if scale != "desk":
            raise ConfigError(f"scale must be 'full' or 'desk', got {scale!r}")
        count = self.sequences if split == "train" else self.valid_sequences
        return desk_plan(self.equation, self.gammas, count, self.frames, split=split,
                         base_seed=base, n=self.n, dt=self.dt)


@dataclass(frozen=True)
class ModelSection:
    kind: str = "pfno"
    embedding: str = "log"
    # Fourier operators
    layers: int = 4
    width: int = 30
    modes: int = 64
    bands: int = 6
    share_weights: bool = True
    use_skip: bool = False
    ratio_hidden: int = 32
    # convolutional operator
    levels: int = 6
    channels: tuple = (16, 32, 64, 96, 96, 96)
    param_levels: int = 4
    convs_per_block: int = 2
    use_inception: bool = False

    def spec(self, n: int):
        if self.kind in ("pfno", "pfno_star"):
            return PfnoSpec(n=n, layers=self.layers, width=self.width, modes=self.modes,
                            bands=self.bands, share_weights=self.share_weights,
                            use_skip=self.use_skip, ratio_hidden=self.ratio_hidden)
        return PcnnSpec(n=n, levels=self.levels, channels=self.channels,
                        param_levels=self.param_levels, convs_per_block=self.convs_per_block,
                        use_inception=self.use_inception, ratio_hidden=self.ratio_hidden)

    def build(self, n: int, gammas, seed: int = 0) -> OperatorNet:
        emb = ParamEmbedding.fit(gammas, self.embedding)
        return build_model(self.kind, asdict(self.spec(n)), emb.to_dict(), seed=seed)


@dataclass(frozen=True)
class TrainSection:
    n: int = 20
    epochs: int = 1000
    batch_size: int = 800
    lr0: float = 0.0025
    weight_decay: float = 1e-4
    sched_step: int = 100
    sched_gamma: float = 0.5
    clip: float = 50.0
    seed: int = 0
    stride: int = 1
    decoupled_decay: bool = False

    def to_train_config(self, seed: int | None = None) -> TrainConfig:
        values = asdict(self)
        values["clip"] = self.clip if self.clip > 0 else None
        if seed is not None:
            values["seed"] = seed
        return TrainConfig(**values)


@dataclass(frozen=True)
class EvalSection:
    gamma: float = 0.0  # 0 selects the first dataset gamma
    steps: int = 500
    burn_in: int = 500
    samples: int = 500
    every: int = 10
    seed: int = 0
    ic: str = "random"


_SECTIONS = {"dataset": DatasetSection, "model": ModelSection, "train": TrainSection,
             "eval": EvalSection}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            section = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def with_section(self, name: str, **changes) -> "RunConfig":
        return replace(self, **{name: replace(getattr(self, name), **changes)})


def _coerce(cls, name: str, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = {}
    defaults = cls()
    for key, value in raw.items():
        default = getattr(defaults, key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"[{name}] {key} must be a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"[{name}] {key} must be true or false")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{name}] {key} must be a number")
            value = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"[{name}] {key} must be an integer")
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"[{name}] {key} must be a string")
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _validate(cfg: RunConfig) -> None:
    if cfg.dataset.equation not in ("MS", "KS"):
        raise ConfigError(f"[dataset] equation must be MS or KS, got {cfg.dataset.equation!r}")
    if not cfg.dataset.gammas or any(g <= 0 for g in cfg.dataset.gammas):
        raise ConfigError("[dataset] gammas must be a non-empty list of positive values")
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigError(f"[model] kind must be one of {sorted(MODEL_KINDS)}")
    if cfg.eval.ic not in ("random", "flat"):
        raise ConfigError("[eval] ic must be 'random' or 'flat'")
    try:
        cfg.model.spec(cfg.dataset.n)
        cfg.train.to_train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _coerce(cls, name, value)
    cfg = RunConfig(**sections)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
