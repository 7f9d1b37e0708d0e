"""Run configuration: one YAML file drives the whole pipeline.

The file maps section names to the dataclass configs of each stage. Unknown
keys are rejected (they are almost always typos), list values are normalized
to tuples so a round trip through YAML compares equal, and every random draw
in the pipeline flows from the explicit root seed — never from the clock.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .env import EmbraceConfig, ObjectSpec
from .errors import ConfigError
from .nsdf import NsdfFitConfig
from .ppo import PpoConfig
from .prior import DistillConfig
from .rewards import RewardConfig
from .sim import SimConfig
from .task import TaskTrainConfig

OUT_DIR_ENV_VAR = "WBM_OUT_DIR"


@dataclass
class TeacherTrainConfig:
    updates: int = 800
    n_lanes: int = 32
    hidden: tuple = (256, 128)
    eval_episodes: int = 20
    clip_seeds_per_kind: int = 4
    clip_duration: float = 6.0
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.updates < 1 or self.n_lanes < 1:
            raise ConfigError("teacher updates and n_lanes must be >= 1")


@dataclass
class EvalSweepConfig:
    trials: int = 30  # independent trials per grid cell
    objects: tuple = (
        ObjectSpec("cylinder", (0.21, 0.40), 3.0),
        ObjectSpec("cylinder", (0.16, 0.40), 2.0),
        ObjectSpec("cuboid", (0.16, 0.16, 0.20), 3.0),
        ObjectSpec("sphere", (0.20,), 2.0),
    )

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("eval trials must be >= 1")
        if not self.objects:
            raise ConfigError("eval sweep needs at least one object")


@dataclass
class RunConfig:
    out_dir: str = "runs/default"
    seed: int = 0
    robot_path: str = ""  # empty -> built-in default humanoid
    sim: SimConfig = field(default_factory=SimConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    env: EmbraceConfig = field(default_factory=EmbraceConfig)
    nsdf: NsdfFitConfig = field(default_factory=NsdfFitConfig)
    teacher: TeacherTrainConfig = field(default_factory=TeacherTrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    task: TaskTrainConfig = field(default_factory=TaskTrainConfig)
    eval: EvalSweepConfig = field(default_factory=EvalSweepConfig)

    def __post_init__(self):
        if self.robot_path and not os.path.exists(self.robot_path):
            raise ConfigError(f"robot spec file not found: {self.robot_path}")


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _normalize(value):
    """YAML lists become tuples so dataclass equality survives a round trip."""
    if isinstance(value, list):
        return tuple(_normalize(v) for v in value)
    if isinstance(value, dict):
        return {k: _normalize(v) for k, v in value.items()}
    return value


def _build(cls, data, path):
    if cls is EvalSweepConfig:
        return _build_eval(data)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = (f.default_factory()
                   if f.default_factory is not dataclasses.MISSING else None)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = _normalize(value)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_dict(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_dict(cfg)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def _build_eval(data) -> EvalSweepConfig:
    if not isinstance(data, dict):
        raise ConfigError("eval: expected a mapping")
    unknown = set(data) - {"trials", "objects"}
    if unknown:
        raise ConfigError(f"eval: unknown keys {sorted(unknown)}")
    kwargs = {}
    if "trials" in data:
        kwargs["trials"] = data["trials"]
    if "objects" in data:
        objs = []
        for i, o in enumerate(data["objects"]):
            if not isinstance(o, dict) or set(o) - {"shape", "dims", "mass"}:
                raise ConfigError(f"eval.objects[{i}]: expected shape/dims/mass")
            objs.append(ObjectSpec(o["shape"], tuple(o["dims"]), o["mass"]))
        kwargs["objects"] = tuple(objs)
    return EvalSweepConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from e
    cfg = config_from_dict(data or {})
    override = os.environ.get(OUT_DIR_ENV_VAR)
    if override:
        cfg = dataclasses.replace(cfg, out_dir=override)
    return cfg


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)
