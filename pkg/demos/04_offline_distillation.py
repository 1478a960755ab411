"""
Offline distillation on synthetic data
======================================

Train a wider teacher with joint-label branches, then distil it into a small
student. Takes a few minutes on one CPU core.
"""

import logging

import torch

from hssakd.config import desk_preset
from hssakd.data import synth_dataset
from hssakd.distiller import seed_everything, train_single, train_student_offline, train_teacher
from hssakd.models import HierarchicalNet, tiny_resnet_spec

logging.basicConfig(level=logging.WARNING)
torch.set_num_threads(1)

train, test = synth_dataset(0, N=10, per_class=30), synth_dataset(999, N=10, per_class=100, split="test")
cfg = desk_preset(60, batch_size=64, aug_pad=2)

seed_everything(0)
teacher = HierarchicalNet(tiny_resnet_spec(10, width=(16, 32, 32), blocks=2))
ck, _ = train_teacher(teacher, train, cfg, test)
print("teacher test top-1:", ck.manifest["metrics"]["test_top1"])

seed_everything(0)
ck, _ = train_single(HierarchicalNet(tiny_resnet_spec(10, aux_task="none")), train, cfg.replace(aux_task="none"), test)
print("student alone:", ck.manifest["metrics"]["test_top1"])

seed_everything(0)
ck, metrics = train_student_offline(HierarchicalNet(tiny_resnet_spec(10)), teacher, train, cfg, test)
print("distilled student:", ck.manifest["metrics"]["test_top1"])
last = [r for r in metrics.records if r["scope"] == "step"][-1]
print("last step losses:", {k: round(last[k], 4) for k in ("task", "kl_q", "kl_p", "loss")})
