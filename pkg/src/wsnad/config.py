"""Run configuration: nested dataclasses loaded from YAML/JSON with strict keys.

Every field has a default; unknown keys are rejected.  Dotted paths such as
``window.w`` or ``pretrain.augment.edge_drop_ratio`` address nested fields,
both in ``--key value`` command-line overrides and in :func:`apply_overrides`.
"""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig
from .pretrain import AugmentConfig, PretrainConfig
from .prompt import FinetuneConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass
class DataConfig:
    source: str = "synth"  # synth | ibrl | corpus
    path: str | None = None  # IBRL readings file or corpus directory
    coordinates: str | None = None  # IBRL "moteid x y" file
    n_nodes: int = 8
    n_modalities: int = 3
    t: int = 5000
    anomaly_rate: float = 0.02
    anomaly_types: list[str] = field(default_factory=lambda: ["point", "contextual", "collective", "correlation"])
    anomaly_overrides: dict[str, dict] = field(default_factory=dict)
    ffill_limit: int = 10
    max_missing: float = 0.4


@dataclass
class GraphConfig:
    k: int = 4


@dataclass
class WindowConfig:
    w: int = 300
    stride: int = 1  # evaluation stride
    train_stride: int = 1
    epsilon: float = 1e-8
    stats: str = "window"  # window | global
    train_frac: float = 0.6
    val_frac: float = 0.2


@dataclass
class DetectConfig:
    mode: str = "best_f1"  # fixed | quantile | best_f1
    tau: float | None = None
    quantile: float = 0.995


@dataclass
class AblateConfig:
    schemes: list[str] = field(
        default_factory=lambda: ["full", "scheme1", "scheme2", "scheme3", "scheme4", "scheme5", "scheme6"]
    )


@dataclass
class GradcheckConfig:
    h: float = 1e-5
    tol: float = 1e-4
    max_coords: int = 8


@dataclass
class ArtifactsConfig:
    """Inputs produced by earlier runs; empty means "look in output_dir"."""

    corpus: str | None = None
    checkpoint: str | None = None
    prompts: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    artifacts: ArtifactsConfig = field(default_factory=ArtifactsConfig)

    def as_dict(self) -> dict:
        return to_dict(self)


# ---------------------------------------------------------------------------
# generic dataclass <-> dict


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, where)
            except ConfigError as e:
                errors.append(str(e))
        raise ConfigError(f"{where}: {value!r} does not match {tp}")
    if _is_dataclass_type(tp):
        if isinstance(value, tp):
            return value
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return from_dict(tp, value, where)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (inner, *_) = typing.get_args(tp) or (Any,)
        items = [_coerce(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, where: str = "config"):
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def field_paths(cls=RunConfig, prefix: str = "") -> dict[str, Any]:
    """Every leaf ``dotted.path -> type`` of a config dataclass."""
    out: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        tp = _hints(cls)[f.name]
        path = f"{prefix}{f.name}"
        if _is_dataclass_type(tp):
            out.update(field_paths(tp, path + "."))
        else:
            out[path] = tp
    return out


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return a new config with dotted-path overrides applied (validated)."""
    d = to_dict(cfg)
    leaves = field_paths()
    for path, value in overrides.items():
        if path not in leaves:
            raise ConfigError(f"unknown config key {path!r}")
        node = d
        *parents, last = path.split(".")
        for p in parents:
            node = node[p]
        node[last] = value
    return from_dict(RunConfig, d)


def parse_value(text: str) -> Any:
    """Interpret a command-line override with YAML scalar rules (``true``, ``3``, ``[1, 2]``)."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {text!r}: {e}") from e


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    cfg = from_dict(RunConfig, raw)
    validate(cfg)
    return cfg


def resolve(cfg: RunConfig, overrides: dict[str, Any] | None = None, env: dict[str, str] | None = None) -> RunConfig:
    """Config file < ``OUTPUT_DIR`` environment variable < command-line overrides."""
    env = os.environ if env is None else env
    if env.get("OUTPUT_DIR"):
        cfg = apply_overrides(cfg, {"output_dir": env["OUTPUT_DIR"]})
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.data.source not in ("synth", "ibrl", "corpus"):
        raise ConfigError(f"data.source must be synth, ibrl or corpus, got {cfg.data.source!r}")
    if cfg.window.stats not in ("window", "global"):
        raise ConfigError(f"window.stats must be window or global, got {cfg.window.stats!r}")
    if cfg.detect.mode not in ("fixed", "quantile", "best_f1"):
        raise ConfigError(f"detect.mode must be fixed, quantile or best_f1, got {cfg.detect.mode!r}")
    if cfg.detect.mode == "fixed" and cfg.detect.tau is None:
        raise ConfigError("detect.mode=fixed needs detect.tau")
    if cfg.pretrain.reduction not in ("sum", "mean") or cfg.finetune.reduction not in ("sum", "mean"):
        raise ConfigError("loss reduction must be sum or mean")
    if cfg.window.w < 1 or cfg.window.stride < 1 or cfg.window.train_stride < 1:
        raise ConfigError("window sizes and strides must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if not 0.0 <= cfg.pretrain.momentum <= 1.0:
        raise ConfigError("pretrain.momentum must be in [0, 1]")


def dump_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)


__all__ = [
    "AblateConfig",
    "ArtifactsConfig",
    "AugmentConfig",
    "ConfigError",
    "DataConfig",
    "DetectConfig",
    "FinetuneConfig",
    "GradcheckConfig",
    "GraphConfig",
    "ModelConfig",
    "PretrainConfig",
    "RunConfig",
    "WindowConfig",
    "apply_overrides",
    "dump_yaml",
    "field_paths",
    "from_dict",
    "load_config",
    "parse_value",
    "resolve",
    "to_dict",
]
