"""
Representation checks: linear probe, embeddings, few-shot splits
================================================================

A trained backbone is frozen; a linear classifier on its pooled features
measures how transferable they are. The same features can be exported for
external plotting, and a stratified subset keeps every class represented.
"""

import logging
import tempfile
from pathlib import Path

import torch

from hssakd.config import desk_preset
from hssakd.data import fewshot_split, synth_dataset
from hssakd.distiller import seed_everything, train_single
from hssakd.evaluation import ProbeConfig, export_embeddings, linear_probe
from hssakd.models import HierarchicalNet, tiny_resnet_spec

logging.basicConfig(level=logging.WARNING)
torch.set_num_threads(1)

train, test = synth_dataset(0, N=10, per_class=30), synth_dataset(999, N=10, per_class=50, split="test")
seed_everything(0)
net = HierarchicalNet(tiny_resnet_spec(10))
train_single(net, train, desk_preset(10, aug_pad=2), test)

# few-shot: a quarter of every class, rounded up
small = fewshot_split(train, 0.25, seed=0)
print("few-shot class counts:", small.class_counts.tolist())

probe = linear_probe(net, small, test, ProbeConfig(epochs=30, milestones=(10, 20, 25)))
print("linear probe on the few-shot split:", probe)

with tempfile.TemporaryDirectory() as tmp:
    info = export_embeddings(net, test, Path(tmp) / "emb.csv")
    print("embedding export:", info)
