"""Experiment configuration: presets, strict YAML/JSON loading and hashing."""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
import copy
import math
from pathlib import Path

import yaml

from .io import config_hash

SCENARIOS = ("simulate", "reconstruct", "train", "evaluate", "initializer-study")
METHODS = ("wf", "awf", "pmace", "vit", "ptychodv", "ptychodv+pmace")


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or missing referenced paths."""


@dataclass
class DataSection:
    image_side: int = 32
    patch_side: int = 8
    patterns: list = field(default_factory=lambda: ["16:4", "9:8"])
    probe: str = "A"
    noise: object = 1e5
    max_scope: str = "global"
    count: int = 16

    @property
    def r_p(self):
        if self.noise is None or (isinstance(self.noise, str) and self.noise.lower() == "none"):
            return math.inf
        return float(self.noise)


@dataclass
class SolverSection:
    iterations: int = 100
    gamma: object = None
    kappa: float = 1.0
    rho: float = 0.5
    alpha: float = 0.5
    eps: float = 1e-12


@dataclass
class VitSection:
    d: int = 32
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    l_f: int = 10


@dataclass
class ModelSection:
    vit: VitSection = field(default_factory=VitSection)
    k: int = 2
    cnn_width: int = 32
    cnn_kernel: int = 3
    eps: float = 1e-8
    share_phi: bool = True


@dataclass
class TrainSection:
    n_train: int = 512
    n_val: int = 8
    lr: float = 1e-3
    epochs: int = 30
    lam: float = 1.0


@dataclass
class StudySection:
    iterations: int = 10
    full_iterations: int = 100
    probes: list = field(default_factory=lambda: ["A", "B"])


@dataclass
class ExperimentConfig:
    scenario: str = "simulate"
    preset: str = "desk"
    seed: int = 0
    out: str = "runs/desk"
    dataset: object = None
    checkpoint: object = None
    methods: list = field(default_factory=lambda: ["wf", "awf", "pmace", "vit", "ptychodv"])
    data: DataSection = field(default_factory=DataSection)
    solver: SolverSection = field(default_factory=SolverSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    study: StudySection = field(default_factory=StudySection)

    def to_dict(self):
        return asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


PRESETS = {
    "desk": {},
    "paper": {
        "data": {"image_side": 800, "patch_side": 256,
                 "patterns": ["256:5", "121:8", "64:11", "25:19", "16:27"],
                 "noise": 1e5, "count": 100},
        "model": {"vit": {"d": 64, "depth": 4, "heads": 4, "mlp_ratio": 2, "l_f": 10},
                  "k": 3, "cnn_width": 32},
        "train": {"n_train": 60000, "n_val": 100, "lr": 1e-5, "epochs": 30, "lam": 1.0},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {where + '.' if where else ''}{unknown[0]}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        sub = getattr(defaults, name)
        if is_dataclass(sub):
            value = _build(type(sub), value, f"{where}.{name}" if where else name)
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path=None, preset=None, overrides=None, check_paths=True):
    """Resolve preset defaults, the config file and explicit overrides.

    Keys not in the schema are rejected, naming the offending key.
    """
    raw = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    preset = preset or raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    merged = _merge(PRESETS[preset], raw)
    merged = _merge(merged, {k: v for k, v in (overrides or {}).items() if v is not None})
    merged["preset"] = preset
    cfg = _build(ExperimentConfig, merged, "")
    validate(cfg, check_paths)
    return cfg


def validate(cfg, check_paths=True):
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method {bad[0]!r}")
    if cfg.data.max_scope not in ("global", "pattern"):
        raise ConfigError("data.max_scope must be 'global' or 'pattern'")
    if check_paths:
        for key in ("dataset", "checkpoint"):
            p = getattr(cfg, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key} path does not exist: {p}")
