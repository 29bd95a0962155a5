"""Run configuration: one nested JSON document, strictly validated (unknown
keys are errors), plus the reproducibility manifest written by every command."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from . import __version__

CONFIG_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    num_envs: int = 12
    env_size: int = 30
    ambiguity: float = 0.5
    routes_per_env: int = 60
    landmark_classes: int = 24
    split_fracs: list = field(default_factory=lambda: [0.8, 0.2, 0.1667])
    paraphrases_train: int = 3
    paraphrases_val: int = 1


@dataclass
class ModelConfig:
    hidden_size: int = 64
    embed_size: int = 32
    attention_size: int = 64
    dtype: str = "float32"


@dataclass
class TrainingConfig:
    follower_iterations: int = 2500
    speaker_iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    max_episode_actions: int = 20
    log_every: int = 100


@dataclass
class AugmentSection:
    multiplier: int = 25
    aug_iterations: int = 2500
    finetune_iterations: int = 1000


@dataclass
class PragmaticsSection:
    num_candidates: int = 40
    speaker_weight: float = 0.95
    max_route_actions: int = 20


@dataclass
class EvalSection:
    success_threshold: float = 3.0
    workers: int = 1


@dataclass
class AblationSection:
    k_values: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 40])
    lambda_values: list = field(default_factory=lambda: [0.0, 0.5, 0.9, 0.95, 1.0])


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    pragmatics: PragmaticsSection = field(default_factory=PragmaticsSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)
             if f.default_factory is not dataclasses.MISSING}


def _from_dict(cls, doc, path):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} at {path or 'top level'}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        section = (f.default_factory is not dataclasses.MISSING
                   and dataclasses.is_dataclass(f.default_factory))
        if section:
            if not isinstance(value, dict):
                raise ConfigError(f"section {path}{name} must be an object")
            kwargs[name] = _from_dict(f.default_factory, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc):
    doc = dict(doc)
    version = doc.pop("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {version!r}")
    cfg = _from_dict(RunConfig, doc, "")
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.world.num_envs < 3:
        raise ConfigError("world.num_envs must be >= 3")
    if not 0.0 <= cfg.world.ambiguity <= 1.0:
        raise ConfigError("world.ambiguity must be in [0, 1]")
    if cfg.model.dtype not in ("float32", "float64"):
        raise ConfigError("model.dtype must be float32 or float64")
    if not 0.0 <= cfg.pragmatics.speaker_weight <= 1.0:
        raise ConfigError("pragmatics.speaker_weight must be in [0, 1]")
    if cfg.pragmatics.num_candidates < 1:
        raise ConfigError("pragmatics.num_candidates must be >= 1")
    if cfg.eval.success_threshold <= 0:
        raise ConfigError("eval.success_threshold must be positive")
    if cfg.eval.workers < 1:
        raise ConfigError("eval.workers must be >= 1")
    if cfg.augment.multiplier < 0:
        raise ConfigError("augment.multiplier must be >= 0")


def config_to_dict(cfg):
    doc = dataclasses.asdict(cfg)
    doc["format_version"] = CONFIG_FORMAT_VERSION
    return doc


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def config_hash(cfg):
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_out_dir(cfg):
    root = os.environ.get("PRAGNAV_OUT", "")
    out = cfg.out_dir
    return os.path.join(root, out) if root and not os.path.isabs(out) else out


def write_manifest(cfg, command, out_dir):
    """Reproducibility record: hash + full config + versions.  Contains no
    timestamps so reruns are byte-identical."""
    from . import kernels
    doc = {
        "format_version": 1,
        "command": command,
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "package_version": __version__,
        "kernel_backend": kernels.active_name(),
    }
    path = os.path.join(out_dir, "manifests")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, f"{command}.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
