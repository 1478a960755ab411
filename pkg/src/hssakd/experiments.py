"""Desk-scale comparison runs: auxiliary task, offline and online distillation.

Each arm is trained from the same seed on the same synthetic split and scored
by the deployed backbone's test top-1:

* ``baseline``  - plain cross-entropy training (no branches);
* ``ssad``      - single network with joint-label branches;
* ``teacher``   - wider joint-label teacher;
* ``student``   - baseline architecture distilled from that teacher;
* ``online``    - two baseline-architecture peers trained together (mean of the peers).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import TrainConfig, desk_preset
from .data import synth_dataset
from .distiller import seed_everything, train_online, train_single, train_student_offline, train_teacher
from .models import HierarchicalNet, tiny_resnet_spec

log = logging.getLogger(__name__)

ARMS = ("baseline", "ssad", "teacher", "student", "online")


@dataclass
class DeskSetup:
    num_classes: int = 10
    per_class: int = 30
    test_per_class: int = 100
    size: int = 16
    noise: float = 0.35
    distractors: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    student_width: tuple = (8, 16, 32)
    student_blocks: int = 1
    teacher_width: tuple = (16, 32, 32)
    teacher_blocks: int = 2
    data_seed: int = 0
    test_seed: int = 999

    def config(self, seed: int, **kw) -> TrainConfig:
        return desk_preset(self.epochs, seed=seed, batch_size=self.batch_size, lr=self.lr,
                           aug_pad=max(1, self.size // 8), num_classes=self.num_classes,
                           synth_per_class=self.per_class, synth_size=self.size,
                           synth_noise=self.noise, **kw)

    def datasets(self):
        kw = dict(N=self.num_classes, size=self.size, noise=self.noise, distractors=self.distractors)
        return (synth_dataset(self.data_seed, per_class=self.per_class, **kw),
                synth_dataset(self.test_seed, per_class=self.test_per_class, split="test", **kw))

    def student(self, aux: str = "ssad") -> HierarchicalNet:
        return HierarchicalNet(tiny_resnet_spec(self.num_classes, width=self.student_width,
                                                blocks=self.student_blocks, input_size=self.size,
                                                aux_task=aux))

    def teacher(self) -> HierarchicalNet:
        return HierarchicalNet(tiny_resnet_spec(self.num_classes, width=self.teacher_width,
                                                blocks=self.teacher_blocks, input_size=self.size))


def run_seed(setup: DeskSetup, seed: int, arms=ARMS) -> dict:
    """Train every requested arm once with ``seed``; returns ``{arm: test top-1}``."""
    train, test = setup.datasets()
    cfg = setup.config(seed)
    out = {}
    t0 = time.time()
    if "baseline" in arms:
        seed_everything(seed)
        ck, _ = train_single(setup.student("none"), train, cfg.replace(aux_task="none"), test)
        out["baseline"] = ck.manifest["metrics"]["test_top1"]
    if "ssad" in arms:
        seed_everything(seed)
        ck, _ = train_single(setup.student("ssad"), train, cfg, test)
        out["ssad"] = ck.manifest["metrics"]["test_top1"]
    if "teacher" in arms or "student" in arms:
        seed_everything(seed)
        teacher = setup.teacher()
        ck, _ = train_teacher(teacher, train, cfg, test)
        out["teacher"] = ck.manifest["metrics"]["test_top1"]
        if "student" in arms:
            seed_everything(seed)
            ck, _ = train_student_offline(setup.student("ssad"), teacher, train, cfg, test)
            out["student"] = ck.manifest["metrics"]["test_top1"]
    if "online" in arms:
        seed_everything(seed)
        ckpts, _ = train_online([setup.student("ssad"), setup.student("ssad")], train, cfg, test)
        out["online"] = float(np.mean([c.manifest["metrics"]["test_top1"] for c in ckpts]))
    log.info("seed %d: %s (%.0fs)", seed, out, time.time() - t0)
    return out


def run_desk(setup: DeskSetup = DeskSetup(), seeds=(0, 1, 2), arms=ARMS) -> dict:
    """Per-arm accuracies over ``seeds`` plus their means (in percentage points)."""
    per_seed = [run_seed(setup, s, arms) for s in seeds]
    means = {a: 100 * float(np.mean([r[a] for r in per_seed])) for a in per_seed[0]}
    return {"setup": asdict(setup), "seeds": list(seeds), "runs": per_seed, "mean_pct": means}
