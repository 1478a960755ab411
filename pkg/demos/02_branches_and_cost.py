"""
Auxiliary branches and deployment cost
======================================

A branch is tapped after each backbone stage and repeats the remaining stages,
so every branch downsamples as much as the backbone does. Branches are only
used during training; deployment keeps the backbone alone.
"""

import torch

from hssakd.models import (build_reference_backbone, deployed_cost, deployed_copy, tiny_resnet_spec,
                           trace_downsampling, HierarchicalNet)
from hssakd.transforms import rotation_views

for name in ("resnet56_cifar", "wrn40_2_cifar"):
    net = build_reference_backbone(name, 100)
    cost = deployed_cost(net)
    total = sum(p.numel() for p in net.parameters())
    print(f"{name}: deployed {cost['params'] / 1e6:.2f}M params, {cost['macs'] / 1e6:.1f}M MACs; "
          f"with branches {total / 1e6:.2f}M params")
    print("  halvings (backbone and each branch):", trace_downsampling(net))

# the small network used for desk-scale runs
net = HierarchicalNet(tiny_resnet_spec(10))
bundle = net.forward_views(rotation_views(torch.randn(5, 3, 16, 16)))
print("p_logits", tuple(bundle.p_logits.shape), "q_logits", tuple(bundle.q_logits.shape))

small = deployed_copy(net)
print("deployed tiny network:", deployed_cost(small), "branches left:", len(small.branches))
