"""Run configuration and its flat ``key = value`` file format.

Lines look like ``lr = 0.05``; ``#`` starts a comment; tuples are
comma-separated (``milestones = 150, 180, 210``). Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .losses import Temperatures
from .models import AUX_TASKS
from .transforms import PRETEXTS

TEACHER_MODES = ("joint", "frozen_backbone")


@dataclass
class TrainConfig:
    # task
    pretext: str = "rotation4"
    aux_task: str = "ssad"
    tau_ce: float = 1.0
    tau_kd: float = 3.0
    kl_p_views: str = "all"
    teacher_mode: str = "joint"
    # optimisation
    lr: float = 0.05
    milestones: tuple = (150, 180, 210)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 240
    batch_size: int = 64
    seed: int = 0
    deterministic: bool = True
    augment: bool = True
    aug_pad: int = 4
    # networks
    backbone: str = "tiny_resnet"
    teacher_backbone: str = ""
    peers: int = 2
    # data
    dataset: str = "synth"
    data_dir: str = ""
    num_classes: int = 10
    synth_per_class: int = 50
    synth_test_per_class: int = 100
    synth_size: int = 16
    synth_noise: float = 0.35
    fewshot_fraction: float = 1.0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.pretext not in PRETEXTS:
            raise ValueError(f"pretext must be one of {PRETEXTS}, got {self.pretext!r}")
        if self.aux_task not in AUX_TASKS:
            raise ValueError(f"aux_task must be one of {AUX_TASKS}, got {self.aux_task!r}")
        if self.teacher_mode not in TEACHER_MODES:
            raise ValueError(f"teacher_mode must be one of {TEACHER_MODES}, got {self.teacher_mode!r}")
        if self.kl_p_views not in ("all", "first"):
            raise ValueError("kl_p_views must be 'all' or 'first'")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if self.milestones and self.milestones[-1] >= self.epochs:
            raise ValueError(f"milestones must be below epochs={self.epochs}: {self.milestones}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        Temperatures(self.tau_ce, self.tau_kd)

    @property
    def taus(self) -> Temperatures:
        return Temperatures(self.tau_ce, self.tau_kd)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["milestones"] = list(self.milestones)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _coerce(f: dataclasses.Field, text: str):
    default = f.default
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{f.name}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    known = {f.name: f for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        updates[key] = _coerce(known[key], value)
    base = base or TrainConfig()
    return base.replace(**updates)


def load_config(path, **overrides) -> TrainConfig:
    with open(path) as fh:
        cfg = parse_config_text(fh.read())
    return cfg.replace(**overrides) if overrides else cfg


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def desk_preset(epochs: int = 30, **kw) -> TrainConfig:
    """Paper schedule compressed to ``epochs``: decays at 150/240, 180/240, 210/240 of the run."""
    milestones = tuple(sorted({max(1, round(epochs * f)) for f in (150 / 240, 180 / 240, 210 / 240)}))
    milestones = tuple(m for m in milestones if m < epochs)
    return TrainConfig(epochs=epochs, milestones=milestones, **kw)
