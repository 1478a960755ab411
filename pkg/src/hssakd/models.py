"""Staged CIFAR backbones with auxiliary branches tapped after every stage.

The branch after stage ``l`` replicates stages ``l+1 .. L`` (downsampling
included), so every branch ends at the backbone's final resolution. The branch
after the last stage is one extra copy of the final stage group at unchanged
resolution. Each branch ends in global average pooling and a linear head whose
width depends on the auxiliary task.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import LogitsBundle
from .transforms import ViewBatch

AUX_TASKS = ("none", "scpd", "sscpd", "multitask", "ssad")


@dataclass(frozen=True)
class StageSpec:
    block: str  # "basic" (post-activation ResNet) or "wide" (pre-activation WRN)
    num_blocks: int
    channels: int
    stride: int = 1


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    stem_channels: int
    stages: tuple
    num_classes: int
    in_channels: int = 3
    input_size: int = 32
    aux_task: str = "ssad"
    num_views: int = 4

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a network needs at least one stage")
        if self.aux_task not in AUX_TASKS:
            raise ValueError(f"unknown aux_task {self.aux_task!r}; expected one of {AUX_TASKS}")
        if self.num_classes < 1 or self.num_views < 1:
            raise ValueError("num_classes and num_views must be positive")

    @property
    def L(self) -> int:
        return len(self.stages)

    @property
    def embed_dim(self) -> int:
        return self.stages[-1].channels

    def head_dims(self) -> dict:
        N, M = self.num_classes, self.num_views
        return {"none": {}, "scpd": {"scpd": N}, "sscpd": {"mu": M},
                "multitask": {"scpd": N, "mu": M}, "ssad": {"q": N * M}}[self.aux_task]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["stages"] = tuple(StageSpec(**s) for s in d["stages"])
        return cls(**d)


class BasicBlock(nn.Module):
    """Post-activation residual block with a 1x1 projection shortcut when shapes change."""

    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False),
                                          nn.BatchNorm2d(out_ch))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class WideBlock(nn.Module):
    """Pre-activation wide-resnet block."""

    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.equal = in_ch == out_ch and stride == 1
        self.shortcut = None if self.equal else nn.Conv2d(in_ch, out_ch, 1, stride, bias=False)

    def forward(self, x):
        o = F.relu(self.bn1(x))
        y = self.conv2(F.relu(self.bn2(self.conv1(o))))
        return y + (x if self.equal else self.shortcut(o))


BLOCKS = {"basic": BasicBlock, "wide": WideBlock}


def make_stage(stage: StageSpec, in_ch: int) -> nn.Sequential:
    cls = BLOCKS[stage.block]
    layers = [cls(in_ch, stage.channels, stage.stride)]
    layers += [cls(stage.channels, stage.channels, 1) for _ in range(stage.num_blocks - 1)]
    return nn.Sequential(*layers)


def _post_norm(spec_stage: StageSpec, channels: int) -> nn.Module:
    # pre-activation nets need a final BN-ReLU before pooling
    if spec_stage.block == "wide":
        return nn.Sequential(nn.BatchNorm2d(channels), nn.ReLU())
    return nn.Identity()


def branch_stages(spec: NetworkSpec, tap: int) -> list[StageSpec]:
    """Stage descriptors replicated by the branch tapped after stage ``tap`` (0-based)."""
    if tap < spec.L - 1:
        return list(spec.stages[tap + 1:])
    return [replace(spec.stages[-1], stride=1)]


class AuxBranch(nn.Module):
    def __init__(self, spec: NetworkSpec, tap: int):
        super().__init__()
        self.tap = tap
        self.stage_specs = branch_stages(spec, tap)
        in_ch = spec.stages[tap].channels
        stages = []
        for s in self.stage_specs:
            stages.append(make_stage(s, in_ch))
            in_ch = s.channels
        self.features = nn.Sequential(*stages, _post_norm(spec.stages[-1], in_ch))
        self.heads = nn.ModuleDict({k: nn.Linear(in_ch, w) for k, w in spec.head_dims().items()})

    def embed(self, x):
        return F.adaptive_avg_pool2d(self.features(x), 1).flatten(1)


class HierarchicalNet(nn.Module):
    """Backbone plus one auxiliary branch per stage.

    ``forward(x)`` always runs the backbone alone and returns class logits.
    :meth:`forward_views` additionally feeds each stage's feature map into its
    branch. :meth:`deploy` drops the branches for good.
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        first = spec.stages[0]
        stem = [nn.Conv2d(spec.in_channels, spec.stem_channels, 3, 1, 1, bias=False)]
        if first.block == "basic":
            stem += [nn.BatchNorm2d(spec.stem_channels), nn.ReLU()]
        self.stem = nn.Sequential(*stem)
        stages, in_ch = [], spec.stem_channels
        for s in spec.stages:
            stages.append(make_stage(s, in_ch))
            in_ch = s.channels
        self.stages = nn.ModuleList(stages)
        self.post = _post_norm(spec.stages[-1], in_ch)
        self.fc = nn.Linear(in_ch, spec.num_classes)
        self.branches = nn.ModuleList()
        if spec.aux_task != "none":
            self.branches = nn.ModuleList(AuxBranch(spec, l) for l in range(spec.L))
        self.deploy_mode = False
        _init_weights(self)

    def stage_features(self, x) -> list[torch.Tensor]:
        feats = []
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return feats

    def embed_from(self, last_feature):
        return F.adaptive_avg_pool2d(self.post(last_feature), 1).flatten(1)

    def features(self, x) -> torch.Tensor:
        """Pooled penultimate embedding ``[B, d]``."""
        return self.embed_from(self.stage_features(x)[-1])

    def forward(self, x):
        return self.fc(self.features(x))

    def forward_views(self, views) -> LogitsBundle:
        if self.deploy_mode:
            raise RuntimeError("network is deployed; auxiliary branches were removed")
        if isinstance(views, ViewBatch):
            views = views.views
        M, B = views.shape[:2]
        if tuple(views.shape[2:]) != (self.spec.in_channels, self.spec.input_size, self.spec.input_size):
            raise ValueError(f"view shape {tuple(views.shape[2:])} does not match network input "
                             f"({self.spec.in_channels}, {self.spec.input_size}, {self.spec.input_size})")
        feats = self.stage_features(views.reshape((M * B,) + tuple(views.shape[2:])))
        p = self.fc(self.embed_from(feats[-1])).reshape(M, B, -1)
        out = {}
        task = self.spec.aux_task
        for l, branch in enumerate(self.branches):
            if task == "scpd":
                emb = branch.embed(feats[l][:B])
                out.setdefault("scpd", []).append(branch.heads["scpd"](emb))
                continue
            emb = branch.embed(feats[l])
            for key, head in branch.heads.items():
                if key == "scpd":
                    out.setdefault(key, []).append(head(emb[:B]))
                else:
                    out.setdefault(key, []).append(head(emb).reshape(M, B, -1))
        stacked = {k: torch.stack(v) for k, v in out.items()}
        return LogitsBundle(p, stacked.get("q"), stacked.get("mu"), stacked.get("scpd"))

    def deploy(self) -> "HierarchicalNet":
        """Discard every auxiliary branch; the result costs exactly the plain backbone."""
        self.branches = nn.ModuleList()
        self.deploy_mode = True
        return self

    def backbone_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("branches."):
                yield p

    def branch_parameters(self):
        return self.branches.parameters()


def _init_weights(net: nn.Module) -> None:
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.zeros_(m.bias)


def resnet_cifar_spec(depth: int, num_classes: int, width=(16, 32, 64), **kw) -> NetworkSpec:
    if (depth - 2) % 6:
        raise ValueError("CIFAR ResNet depth must be 6n+2")
    n = (depth - 2) // 6
    stages = tuple(StageSpec("basic", n, c, 1 if i == 0 else 2) for i, c in enumerate(width))
    return NetworkSpec(f"resnet{depth}_cifar", width[0], stages, num_classes, **kw)


def wrn_cifar_spec(depth: int, widen: int, num_classes: int, **kw) -> NetworkSpec:
    if (depth - 4) % 6:
        raise ValueError("WRN depth must be 6n+4")
    n = (depth - 4) // 6
    chans = (16 * widen, 32 * widen, 64 * widen)
    stages = tuple(StageSpec("wide", n, c, 1 if i == 0 else 2) for i, c in enumerate(chans))
    return NetworkSpec(f"wrn{depth}_{widen}_cifar", 16, stages, num_classes, **kw)


def tiny_resnet_spec(num_classes: int, width=(8, 16, 32), blocks: int = 1, input_size: int = 16,
                     **kw) -> NetworkSpec:
    if blocks > 2 or max(width) > 32:
        raise ValueError("tiny_resnet allows at most 2 blocks per stage and 32 channels")
    stages = tuple(StageSpec("basic", blocks, c, 1 if i == 0 else 2) for i, c in enumerate(width))
    return NetworkSpec("tiny_resnet", width[0], stages, num_classes, input_size=input_size, **kw)


REFERENCE_BACKBONES = ("resnet56_cifar", "wrn40_2_cifar", "tiny_resnet")


def reference_spec(name: str, num_classes: int, **kw) -> NetworkSpec:
    if name == "resnet56_cifar":
        return resnet_cifar_spec(56, num_classes, **kw)
    if name == "wrn40_2_cifar":
        return wrn_cifar_spec(40, 2, num_classes, **kw)
    if name == "tiny_resnet":
        return tiny_resnet_spec(num_classes, **kw)
    raise ValueError(f"unknown backbone {name!r}; expected one of {REFERENCE_BACKBONES}")


def build_reference_backbone(name: str, num_classes: int, **kw) -> HierarchicalNet:
    return HierarchicalNet(reference_spec(name, num_classes, **kw))


def build_network(spec: NetworkSpec) -> HierarchicalNet:
    return HierarchicalNet(spec)


def trace_downsampling(net: HierarchicalNet) -> dict:
    """Count spatial halvings along stem -> backbone end and stem -> tap -> branch end.

    Runs a zero input through the network and reads actual feature-map sizes.
    Keys: ``"backbone"`` and the 0-based branch index.
    """
    s = net.spec
    x = torch.zeros(1, s.in_channels, s.input_size, s.input_size,
                    dtype=next(net.parameters()).dtype)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        feats = net.stage_features(x)
        sizes = {"backbone": feats[-1].shape[-1]}
        for l, branch in enumerate(net.branches):
            sizes[l] = branch.features(feats[l]).shape[-1]
    net.train(was_training)
    return {k: int(round(math.log2(s.input_size / v))) for k, v in sizes.items()}


def count_macs(module: nn.Module, x: torch.Tensor) -> int:
    """Multiply-accumulates of conv and linear layers for one forward of ``x`` (per sample)."""
    total = 0

    def conv_hook(m, inp, out):
        nonlocal total
        k = m.kernel_size[0] * m.kernel_size[1] * (m.in_channels // m.groups)
        total += out[0].numel() * k

    def linear_hook(m, inp, out):
        nonlocal total
        total += m.in_features * m.out_features

    hooks = []
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            hooks.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            hooks.append(m.register_forward_hook(linear_hook))
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(x)
    finally:
        module.train(was_training)
        for h in hooks:
            h.remove()
    return total


def deployed_cost(net: HierarchicalNet) -> dict:
    """Parameter and MAC counts of the backbone alone at the network's input size."""
    s = net.spec
    params = sum(p.numel() for p in net.backbone_parameters())
    x = torch.zeros(1, s.in_channels, s.input_size, s.input_size,
                    dtype=next(net.parameters()).dtype)
    return {"params": params, "macs": count_macs(net, x)}


def deployed_copy(net: HierarchicalNet) -> HierarchicalNet:
    return copy.deepcopy(net).deploy()
