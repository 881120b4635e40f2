"""Run configuration: desk-scale defaults, JSON loading, strict validation.

Desk-scale defaults train end to end on a laptop CPU in minutes. The
benchmark-scale settings from the original training recipe remain valid
config (select_k=300, stages=5, ranker lr 1e-5 for 5k iters, enhancer lr
1e-5 for 10k iters, bootstrap ranker lr 1e-4 for 60k iters halved every
20k); they are simply far slower.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError


@dataclass
class EnhancerConfig:
    iterations: int = 4
    grid_size: int = 1
    exposure_target: float = 0.6
    exposure_patch: int = 16
    color_weight: float = 0.5
    pretrain_lr: float = 0.005
    pretrain_iters: int = 40
    pretrain_batch: int = 8
    checkpoint_interval: int = 10
    finetune_lr: float = 5e-3
    finetune_iters: int = 400
    finetune_batch: int = 2
    ranker_weight: float = 0.1
    content_levels: int = 3


@dataclass
class RankerConfig:
    blocks: int = 4
    base_ch: int = 16
    hidden: int = 64
    slope: float = 0.2
    margin: float = 0.5
    lr: float = 5e-4
    iters: int = 700
    iters_per_label: int = 20
    batch_size: int = 8
    weight_decay: float = 1e-4
    warm_start: bool = True
    bootstrap_lr: float = 1e-3
    bootstrap_iters: int = 450
    holdout_fraction: float = 0.15


@dataclass
class BootstrapConfig:
    patch: int = 32
    sharpness_quantile: float = 0.75


@dataclass
class AnnotatorConfig:
    count: int = 3
    noise: float = 0.02
    exposure_target: float = 0.6
    contrast_target: float = 0.18
    weights: list = field(default_factory=lambda: [1.0, 0.5, 0.25])


@dataclass
class ServiceConfig:
    port: int = 8787
    poll_interval: float = 2.0


@dataclass
class RunConfig:
    x_dir: str = ""
    y_dir: str = ""
    workdir: str = ""
    seed: int = 0
    stages: int = 3
    select_k: int = 16
    vote_source: str = "simulated"
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    ranker: RankerConfig = field(default_factory=RankerConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    annotators: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def require_paths(self, *names: str):
        problems = [f"missing required config key: {n}" for n in names if not getattr(self, n)]
        if problems:
            raise ConfigError(problems)


def _coerce(cls, data: dict, prefix: str, problems: list[str]):
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in fields:
            problems.append(f"unknown config key: {path}")
            continue
        expected = hints[key]
        if dataclasses.is_dataclass(expected):
            if not isinstance(value, dict):
                problems.append(f"{path}: expected an object")
                continue
            kwargs[key] = _coerce(expected, value, f"{path}.", problems)
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if expected is int and (isinstance(value, bool) or not isinstance(value, int)):
            problems.append(f"{path}: expected an integer, got {value!r}")
            continue
        if expected is float and not isinstance(value, float):
            problems.append(f"{path}: expected a number, got {value!r}")
            continue
        if expected is str and not isinstance(value, str):
            problems.append(f"{path}: expected a string, got {value!r}")
            continue
        if expected is bool and not isinstance(value, bool):
            problems.append(f"{path}: expected a boolean, got {value!r}")
            continue
        if expected is list and not isinstance(value, list):
            problems.append(f"{path}: expected a list, got {value!r}")
            continue
        kwargs[key] = value
    return cls(**kwargs)


def _validate(cfg: RunConfig, problems: list[str]):
    if cfg.stages < 1:
        problems.append("stages: must be >= 1")
    if cfg.select_k < 1:
        problems.append("select_k: must be >= 1")
    if cfg.vote_source not in ("simulated", "service"):
        problems.append(f"vote_source: must be 'simulated' or 'service', got {cfg.vote_source!r}")
    if cfg.annotators.count < 3 or cfg.annotators.count % 2 == 0:
        problems.append("annotators.count: must be odd and >= 3")
    if cfg.annotators.noise < 0:
        problems.append("annotators.noise: must be >= 0")
    if len(cfg.annotators.weights) != 3:
        problems.append("annotators.weights: must have exactly 3 entries")
    if not 1 <= cfg.service.port <= 65535:
        problems.append("service.port: must be in [1, 65535]")
    if not 0 < cfg.ranker.holdout_fraction < 1:
        problems.append("ranker.holdout_fraction: must be in (0, 1)")
    if cfg.enhancer.ranker_weight < 0:
        problems.append("enhancer.ranker_weight: must be >= 0")


def parse_override(text: str) -> tuple[str, object]:
    """Parse a --set override of the form section.key=value (value as JSON)."""
    if "=" not in text:
        raise ConfigError([f"override {text!r} must look like key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {dotted!r}: {part} is not a section"])
    node[parts[-1]] = value


def load_config(source=None, overrides: list[str] = ()) -> RunConfig:
    """Build a validated RunConfig from a JSON file/dict plus overrides.

    Overrides are dotted key=value pairs and win over the file. Unknown keys
    anywhere are collected and reported together.
    """
    if source is None:
        tree = {}
    elif isinstance(source, dict):
        tree = json.loads(json.dumps(source))
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        try:
            tree = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
        if not isinstance(tree, dict):
            raise ConfigError(["config root must be a JSON object"])
    for item in overrides:
        key, value = parse_override(item)
        _apply_override(tree, key, value)
    problems: list[str] = []
    cfg = _coerce(RunConfig, tree, "", problems)
    _validate(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def write_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
