"""Experiment configuration: dataclass schema, profiles and YAML loading.

A config file is a partial override of a profile. Every key must be known;
mistakes are reported with the dotted field path and, when the text came from
a file, the line it sits on.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .optim import OptimizerSpec
from .trainer import NAMED_STRATEGIES, ProtectConfig

TASK_MODES = ("classification", "generation")


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-4)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                    |[0-9][0-9_]*[eE][-+]?[0-9]+
                    |[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))
PROFILES = ("paper", "desk")
CODE_VERSION = "nftlab-0.1.0"


@dataclass(frozen=True)
class DomainConfig:
    original: str = "original"
    restricted: str = "restricted"
    n_original: int = 3000
    n_restricted: int = 1000
    dim: int = 16
    n_classes: int = 4
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.original == self.restricted:
            raise ConfigError("original and restricted domains must differ")
        if min(self.n_original, self.n_restricted) < 10 or self.dim < 2 or self.n_classes < 2:
            raise ConfigError("domains need n >= 10, dim >= 2 and n_classes >= 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError("activation must be relu or tanh")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        self.spec()

    def spec(self) -> OptimizerSpec:
        try:
            return OptimizerSpec(self.kind, self.lr, momentum=self.momentum, weight_decay=self.weight_decay)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("pretrain epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class AttackConfig:
    strategies: tuple[str, ...] = tuple(NAMED_STRATEGIES)
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig("momentum", 1e-4, 0.9, 1e-4))
    batch_size: int = 200
    iters: int = 1000
    eval_every: int = 100

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("attack.strategies must be non-empty")
        for s in self.strategies:
            if s not in NAMED_STRATEGIES:
                raise ConfigError(f"unknown attack strategy {s!r}")
        if self.batch_size < 1 or self.iters < 1 or self.eval_every < 1:
            raise ConfigError("attack batch_size, iters and eval_every must be >= 1")


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    task_mode: str = "classification"
    domains: DomainConfig = field(default_factory=DomainConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    protect: ProtectConfig = field(default_factory=ProtectConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_noise_seed: int = 0

    def __post_init__(self):
        if self.task_mode not in TASK_MODES:
            raise ConfigError(f"task_mode must be one of {TASK_MODES}")
        if self.protect.mode != self.task_mode:
            raise ConfigError(
                f"protect losses ({self.protect.loss_alpha}/{self.protect.loss_beta}) "
                f"belong to {self.protect.mode}, not {self.task_mode}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """sha256 over the canonical config and the code version string."""
        return hashlib.sha256((self.canonical_json() + "\n" + CODE_VERSION).encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -- profiles ----------------------------------------------------------------

_PAPER_PROTECT = {
    "classification": {},
    "generation": {"loss_alpha": "DoS", "loss_beta": "MSE"},
}

_DESK = {
    "classification": {
        "protect": {"alpha": 6e-3, "beta": 6e-3, "iters": 100, "K": 10, "N": 2,
                   "lambda_tol": 0.25, "ft_lr_grid": [1e-3, 1e-2, 3e-2], "ft_bs_grid": [32, 64, 128]},
    },
    "generation": {
        "domains": {"dim": 64},
        "arch": {"hidden": [128, 128]},
        "pretrain": {"epochs": 40},
        "attack": {"strategies": ["direct+all"]},
        "protect": {"alpha": 3e-3, "beta": 3e-3, "iters": 1500, "K": 10, "N": 2, "l_ntr": 2,
                   "loss_alpha": "DoS", "loss_beta": "MSE", "lambda_tol": 3.0,
                   "ft_lr_grid": [1e-2, 3e-2], "ft_bs_grid": [32, 64, 128], "init_modes": ["full"]},
    },
}


def profile_overrides(profile: str, task_mode: str) -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}")
    if task_mode not in TASK_MODES:
        raise ConfigError(f"task_mode must be one of {TASK_MODES}")
    if profile == "paper":
        return {"task_mode": task_mode, "protect": dict(_PAPER_PROTECT[task_mode])}
    return {"task_mode": task_mode, **json.loads(json.dumps(_DESK[task_mode]))}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


# -- schema-checked construction ---------------------------------------------

def _err(path: str, msg: str) -> ConfigError:
    exc = ConfigError(f"{path}: {msg}" if path else msg)
    exc.path = path
    return exc


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise _err(path, "expected a mapping")
        return _build(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise _err(path, "expected a list")
        return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(path, f"expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise _err(path, f"expected a string, got {value!r}")
        return value
    raise _err(path, f"unsupported field type {tp!r}")


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise _err(key, "unknown key")
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if getattr(exc, "path", None) is not None:
            raise
        raise _err(path, str(exc)) from None


def build_config(overrides: dict | None = None, profile: str = "desk") -> ExperimentConfig:
    overrides = dict(overrides or {})
    mode = overrides.get("task_mode", "classification")
    merged = _merge(profile_overrides(profile, mode), overrides)
    return _build(ExperimentConfig, merged)


def _key_lines(text: str) -> dict[str, int]:
    """Dotted key path -> 1-based line number for every mapping key in a YAML text."""
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                name = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[name] = k.start_mark.line + 1
                walk(v, name)

    try:
        walk(yaml.compose(text, Loader=_Loader), "")
    except yaml.YAMLError:
        pass
    return lines


def loads_config(text: str, profile: str = "desk", source: str = "<config>") -> ExperimentConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return build_config(data, profile)
    except ConfigError as exc:
        lines = _key_lines(text)
        path = re.sub(r"\[\d+\]", "", getattr(exc, "path", "") or "")
        while path and path not in lines:
            path = path.rpartition(".")[0]
        where = f"{source}:{lines[path]}" if path else source
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path, profile: str = "desk") -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return loads_config(text, profile, str(p))


def config_from_dict(data: dict) -> ExperimentConfig:
    """Rebuild a fully resolved config (as written by ``to_dict``)."""
    return _build(ExperimentConfig, data)


def with_seeds(cfg: ExperimentConfig, seeds) -> ExperimentConfig:
    return dataclasses.replace(cfg, seeds=tuple(int(s) for s in seeds))
