"""Run configuration: a JSON document validated on load.

Unknown keys are rejected with the dotted key path in the message. The
environment variable ``MSD_OUTPUT_DIR`` overrides ``output_dir``.

Schema (all sections optional, defaults shown by ``default_config()``)::

    {
      "data":      {num_classes, text_dim, image_dim, n_train, n_meta, n_test,
                    noise_sigma, confounder_prob, seed, fixed_dominance},
      "teacher":   {hidden, activation, epochs, batch_size, lr, weight_decay,
                    view_dropout, seed},
      "student":   {hidden, activation, optimizer, lr, weight_decay},
      "distill":   {tau, lam},
      "weighting": {population, grid, meta_hidden},
      "meta":      {alpha, beta, batch_size, meta_batch_size, iterations},
      "sweep":     {depths, width},
      "eval_interval": int,
      "seeds": [int, ...],
      "output_dir": str
    }
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import DataGenConfig
from .exceptions import ConfigError
from .meta import MetaOptConfig

OUTPUT_DIR_ENV = "MSD_OUTPUT_DIR"


def _from_dict(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown key '{section}.{key}'")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


@dataclass(frozen=True)
class TeacherConfig:
    hidden: tuple = (128, 128)
    activation: str = "relu"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    view_dropout: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h <= 0 for h in self.hidden):
            raise ConfigError("teacher.hidden widths must be > 0")
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ConfigError("teacher.epochs, batch_size and lr must be > 0")


@dataclass(frozen=True)
class StudentConfig:
    hidden: tuple = (16,)
    activation: str = "relu"
    optimizer: str = "adamw"    # non-meta methods; msd-meta always uses SGD
    lr: float = 1e-3
    weight_decay: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h <= 0 for h in self.hidden):
            raise ConfigError("student.hidden widths must be > 0")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigError("student.optimizer must be 'adamw' or 'sgd'")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError("student.lr must be > 0 and student.weight_decay >= 0")


@dataclass(frozen=True)
class DistillSection:
    tau: float = 4.0
    lam: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("distill.tau must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("distill.lam must lie in [0, 1]")


@dataclass(frozen=True)
class WeightingConfig:
    population: tuple = (1.0, 0.5, 0.5)
    grid: tuple = ((0.0, 0.5, 1.0), (0.0, 0.5, 1.0), (0.0, 0.5, 1.0))
    meta_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "population", tuple(float(v) for v in self.population))
        object.__setattr__(self, "grid", tuple(tuple(float(v) for v in g) for g in self.grid))
        if len(self.population) != 3 or any(not 0.0 <= v <= 1.0 for v in self.population):
            raise ConfigError("weighting.population must be three values in [0, 1]")
        if len(self.grid) != 3 or any(len(g) == 0 for g in self.grid):
            raise ConfigError("weighting.grid must hold three non-empty lists")
        if self.meta_hidden <= 0:
            raise ConfigError("weighting.meta_hidden must be > 0")


@dataclass(frozen=True)
class SweepConfig:
    depths: tuple = (1, 2, 3)
    width: int = 16

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if any(d < 0 for d in self.depths) or self.width <= 0:
            raise ConfigError("sweep.depths must be >= 0 and sweep.width > 0")


_SECTIONS = {
    "data": DataGenConfig,
    "teacher": TeacherConfig,
    "student": StudentConfig,
    "distill": DistillSection,
    "weighting": WeightingConfig,
    "meta": MetaOptConfig,
    "sweep": SweepConfig,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataGenConfig = field(default_factory=DataGenConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    meta: MetaOptConfig = field(default_factory=MetaOptConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    eval_interval: int = 50
    seeds: tuple = (1, 2, 3, 4, 5)
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d, env=None):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown key '{key}'")
        kwargs = {}
        for key, value in d.items():
            if key in _SECTIONS:
                kwargs[key] = _from_dict(_SECTIONS[key], value, key)
            else:
                kwargs[key] = value
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
            if not kwargs["seeds"]:
                raise ConfigError("seeds must be a non-empty list")
        if int(kwargs.get("eval_interval", 50)) <= 0:
            raise ConfigError("eval_interval must be > 0")
        env = os.environ if env is None else env
        if env.get(OUTPUT_DIR_ENV):
            kwargs["output_dir"] = env[OUTPUT_DIR_ENV]
        return cls(**kwargs)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def hash(self):
        """SHA-256 over the canonical JSON form (output_dir excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path, env=None):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(raw, env)


def default_config():
    return RunConfig()
