"""Run configuration: JSON config files with strict keys and flag overrides.

A config file is a JSON object whose sections mirror the dataclasses below
(``synth``, ``model``, ``train``, ``selflearn``, ``eval``, ``paths`` plus the
top-level ``seed`` and ``out_dir``). Unknown keys are rejected. Command-line
overrides (``--set section.key=value``) win over the file; a global ``--seed``
fills every section seed that the file did not set explicitly.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .corpus.synth import SynthConfig
from .evaluation import EvalConfig
from .linkage import ModelConfig, TrainConfig
from .selflearn import SelfLearnConfig

OUTPUT_DIR_ENV = "IDLINK_OUT"
DEFAULT_OUTPUT_DIR = "idlink-out"


class ConfigError(Exception):
    """Invalid configuration file, key, or value."""


@dataclass(frozen=True)
class PathsConfig:
    source_dir: str | None = None
    target_dir: str | None = None
    annotations: str | None = None
    ground_truth: str | None = None
    checkpoint: str | None = None
    source_embeddings: str | None = None
    target_embeddings: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    out_dir: str | None = None
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selflearn: SelfLearnConfig = field(default_factory=SelfLearnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        try:
            self.synth.validate()
            self.model.validate()
            self.train.validate()
            self.selflearn.validate()
            self.eval.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_SECTION_TYPES = {
    "paths": PathsConfig,
    "synth": SynthConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "selflearn": SelfLearnConfig,
    "eval": EvalConfig,
}


def _coerce(value, annotation, key: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union or origin is types.UnionType:
        if type(None) in args:
            if value is None:
                return None
            if isinstance(value, str) and value.lower() in ("null", "none"):
                return None
        for arg in args:
            if arg is type(None):
                continue
            return _coerce(value, arg, key)
    if annotation is bool or annotation == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if annotation is int or annotation == "int":
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if annotation is float or annotation == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if annotation is str or annotation == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        elem = args[0] if args else float
        return tuple(_coerce(v, elem, key) for v in value)
    if isinstance(annotation, type) and dataclasses.is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object, got {value!r}")
        return _build_section(annotation, value, key)
    return value


def _resolved_annotations(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _build_section(cls, data: dict, prefix: str, base=None):
    annotations = _resolved_annotations(cls)
    known = {f.name for f in fields(cls)}
    values = {} if base is None else {f.name: getattr(base, f.name) for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {prefix}.{key}" if prefix else f"unknown config key: {key}")
        label = f"{prefix}.{key}" if prefix else key
        values[key] = _coerce(value, annotations[key], label)
    return cls(**values)


def _explicit_seed_sections(data: dict) -> set[str]:
    return {
        name
        for name in ("synth", "train", "selflearn", "eval")
        if isinstance(data.get(name), dict) and "seed" in data[name]
    }


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> RunConfig:
    """Build a run configuration from defaults, a JSON file, and overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config root must be a JSON object")

    explicit_seeds = _explicit_seed_sections(data)
    for raw in overrides or []:
        if "=" not in raw:
            raise ConfigError(f"override must look like section.key=value, got {raw!r}")
        dotted, value = raw.split("=", 1)
        parts = dotted.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} conflicts with a scalar value")
        node[parts[-1]] = value
        if len(parts) == 2 and parts[1] == "seed":
            explicit_seeds.add(parts[0])

    top_known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in top_known:
            raise ConfigError(f"unknown config key: {key}")

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        sections[name] = _build_section(cls, data.get(name, {}), name)
    run_seed = _coerce(data.get("seed", RunConfig.seed), int, "seed")
    if seed is not None:
        run_seed = seed
    run_out = data.get("out_dir")
    if out_dir is not None:
        run_out = out_dir

    # a global seed flows into every section seed not pinned by the file/flags
    if seed is not None or "seed" in data:
        for offset, name in enumerate(("synth", "train", "selflearn", "eval")):
            if name not in explicit_seeds:
                sections[name] = dataclasses.replace(sections[name], seed=run_seed + offset)

    cfg = RunConfig(seed=run_seed, out_dir=run_out, **sections)
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
