"""
Online distillation of two peers
================================

Two small networks train together from scratch; each mimics the other's
detached joint and class distributions. Either backbone can be kept.
Takes a couple of minutes on one CPU core.
"""

import logging

import torch

from hssakd.config import desk_preset
from hssakd.data import synth_dataset
from hssakd.distiller import seed_everything, train_online
from hssakd.models import HierarchicalNet, tiny_resnet_spec

logging.basicConfig(level=logging.WARNING)
torch.set_num_threads(1)

train, test = synth_dataset(0, N=10, per_class=30), synth_dataset(999, N=10, per_class=100, split="test")
cfg = desk_preset(60, batch_size=64, aug_pad=2)

seed_everything(0)
peers = [HierarchicalNet(tiny_resnet_spec(10)) for _ in range(2)]
ckpts, metrics = train_online(peers, train, cfg, test)
for k, ck in enumerate(ckpts):
    print(f"peer {k} test top-1:", ck.manifest["metrics"]["test_top1"])

last = [r for r in metrics.records if r["scope"] == "step"][-1]
print("peer 0 terms:", {k.split("/")[0]: round(v, 4) for k, v in last.items() if k.endswith("/0")})
