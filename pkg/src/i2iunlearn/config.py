"""JSON experiment configuration with path-qualified validation errors."""

from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class CorpusConfig:
    kind: str = "shapes"  # "shapes" or "idx"
    seed: int = 0
    n_per_class: int = 250
    images: str | None = None
    labels: str | None = None


@dataclass
class ArchConfig:
    encoder_widths: list[int] = field(default_factory=lambda: [256, 64, 16])


@dataclass
class MaskConfig:
    mode: str = "inpaint-center"
    k: int = 8


@dataclass
class SplitConfig:
    mode: str = "class-level"
    classes: list[int] = field(default_factory=lambda: [5])
    fraction: float = 1.0
    test_fraction: float = 0.2
    seed: int = 1


@dataclass
class TrainSection:
    epochs: int = 80
    eta: float = 8.0
    batch_size: int = 32
    seed: int = 2
    init_seed: int = 3


@dataclass
class AttackConfig:
    epochs: int = 10
    eta: float = 8.0
    batch_size: int = 32
    seed: int = 4
    arm: int = 3
    intensity: float = 1.0


@dataclass
class UnlearnSection:
    eta: float = 8.0
    unlearn_epochs: int = 10
    finetune_epochs: int = 40
    threshold: float | None = None  # null means no early stop
    threshold_space: str = "parameter"
    batch_size: int = 32
    seed: int = 5
    clip_norm: float = 10.0
    forget_weight: float = 1.0


@dataclass
class BaselineSection:
    epochs: int = 10
    eta: float = 8.0
    batch_size: int = 32
    seed: int = 6
    pixel_noise_std: float = 0.25
    latent_noise_std: float = 1.0


@dataclass
class AuditSection:
    rho: float = 0.6
    grid_images: int = 8


@dataclass
class EvalSection:
    reference: str = "retrain"
    probe_seed: int = 7
    probe_epochs: int = 40
    probe_eta: float = 0.5
    trace_probe_size: int = 64


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackConfig = field(default_factory=AttackConfig)
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    audit: AuditSection = field(default_factory=AuditSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "runs/desk"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


# -- loading ------------------------------------------------------------------


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {type(value).__name__}")
        return _build(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported type {tp}")


def _build(cls, data: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}" if prefix else key, "unknown key")
    kwargs = {}
    for name in known:
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], f"{prefix}.{name}" if prefix else name)
    return cls(**kwargs)


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: ExperimentConfig) -> None:
    c = cfg.corpus
    _check(c.kind in ("shapes", "idx"), "corpus.kind", "must be 'shapes' or 'idx'")
    _check(c.n_per_class >= 1, "corpus.n_per_class", "must be >= 1")
    if c.kind == "idx":
        _check(bool(c.images), "corpus.images", "required for idx corpora")
        _check(bool(c.labels), "corpus.labels", "required for idx corpora")
    _check(len(cfg.arch.encoder_widths) >= 1 and all(w >= 1 for w in cfg.arch.encoder_widths),
           "arch.encoder_widths", "must be a non-empty list of positive widths")
    _check(cfg.mask.mode in ("inpaint-center", "outpaint-border"), "mask.mode",
           "must be 'inpaint-center' or 'outpaint-border'")
    _check(cfg.mask.k >= 0, "mask.k", "must be >= 0")
    s = cfg.split
    _check(s.mode in ("class-level", "sample-level"), "split.mode", "must be 'class-level' or 'sample-level'")
    _check(len(s.classes) >= 1, "split.classes", "must name at least one class")
    _check(0.0 < s.fraction <= 1.0, "split.fraction", "must be in (0, 1]")
    _check(s.mode == "sample-level" or s.fraction == 1.0, "split.fraction", "class-level requires 1.0")
    _check(0.0 <= s.test_fraction < 1.0, "split.test_fraction", "must be in [0, 1)")
    for sec in ("train", "attack", "unlearn", "baselines"):
        obj = getattr(cfg, sec)
        _check(obj.eta > 0, f"{sec}.eta", "must be > 0")
        _check(obj.batch_size >= 1, f"{sec}.batch_size", "must be >= 1")
    for sec, name in (("train", "epochs"), ("attack", "epochs"), ("baselines", "epochs"),
                      ("unlearn", "unlearn_epochs"), ("unlearn", "finetune_epochs")):
        _check(getattr(getattr(cfg, sec), name) >= 0, f"{sec}.{name}", "must be >= 0")
    u = cfg.unlearn
    _check(u.threshold is None or u.threshold >= 0, "unlearn.threshold", "must be >= 0 or null")
    _check(u.threshold_space in ("parameter", "output"), "unlearn.threshold_space",
           "must be 'parameter' or 'output'")
    _check(u.clip_norm > 0, "unlearn.clip_norm", "must be > 0")
    _check(cfg.attack.arm >= 0, "attack.arm", "must be >= 0")
    _check(0.0 <= cfg.attack.intensity <= 1.0, "attack.intensity", "must be in [0, 1]")
    _check(-1.0 <= cfg.audit.rho <= 1.0, "audit.rho", "must be in [-1, 1]")
    _check(cfg.eval.reference in ("retrain", "attack", "original"), "eval.reference",
           "must be 'retrain', 'attack' or 'original'")
    _check(cfg.eval.trace_probe_size >= 1, "eval.trace_probe_size", "must be >= 1")
    _check(bool(cfg.output_dir), "output_dir", "must be non-empty")


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    return from_dict(data)


def threshold_value(u: UnlearnSection) -> float:
    return math.inf if u.threshold is None else u.threshold
