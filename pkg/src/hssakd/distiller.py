"""Training pipelines and checkpoint persistence.

Four pipelines share one loop skeleton:

* :func:`train_single` - backbone plus branches trained on task + auxiliary loss;
* :func:`train_teacher` - the same with the joint-label task, either end to end
  (``teacher_mode="joint"``) or backbone first and branches on the frozen
  backbone afterwards (``"frozen_backbone"``);
* :func:`train_student_offline` - student mimics a frozen teacher;
* :func:`train_online` - ``K`` peers mimic each other, all updated in one step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from . import joint_label
from .config import TrainConfig
from .data import Dataset, augment_batch
from .evaluation import evaluate_accuracy, topk_accuracy
from .losses import (loss_aux_multitask, loss_aux_scpd, loss_aux_ssad,
                     loss_aux_sscpd, loss_offline_student, loss_online, loss_task)
from .models import HierarchicalNet, NetworkSpec
from .transforms import get_family

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


class MetricsLog:
    """Append-only JSON-lines metrics stream.

    Every record carries ``run_id``, ``scope`` (``step``/``epoch``/``final``) and
    a monotone ``step`` index. Records are kept in memory and, if ``path`` is
    given, appended to that file as they arrive.
    """

    def __init__(self, run_id: str, path=None):
        self.run_id = run_id
        self.path = None if path is None else Path(path)
        self.records: list[dict] = []
        self.step = 0
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, scope: str, **scalars) -> dict:
        rec = {"run_id": self.run_id, "scope": scope, "step": self.step}
        rec.update({k: _to_float(v) for k, v in scalars.items()})
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    def dumps(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def _to_float(v):
    if isinstance(v, torch.Tensor):
        return v.item()
    return v


@dataclass
class Checkpoint:
    manifest: dict
    parameters: dict
    rng_state: Optional[torch.Tensor] = None

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec.from_dict(self.manifest["network"])


def make_checkpoint(net: HierarchicalNet, config: TrainConfig | None = None, epoch: int = 0,
                    metrics: dict | None = None) -> Checkpoint:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "network": net.spec.to_dict(),
        "deployed": bool(net.deploy_mode),
        "joint_label_ordering": joint_label.ORDERING,
        "config": None if config is None else config.to_dict(),
        "config_digest": None if config is None else config.digest(),
        "epoch": epoch,
        "metrics": metrics or {},
    }
    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return Checkpoint(manifest, state, torch.get_rng_state())


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write ``ckpt`` as a torch archive; the manifest is stored as JSON text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"manifest": json.dumps(ckpt.manifest, sort_keys=True),
                "parameters": ckpt.parameters, "rng_state": ckpt.rng_state}, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    return Checkpoint(json.loads(blob["manifest"]), blob["parameters"], blob.get("rng_state"))


def load_into(net: HierarchicalNet, ckpt: Checkpoint) -> HierarchicalNet:
    """Load checkpoint parameters into ``net``, refusing any structural mismatch."""
    if ckpt.manifest.get("joint_label_ordering") != joint_label.ORDERING:
        raise ValueError(f"checkpoint uses joint-label ordering "
                         f"{ckpt.manifest.get('joint_label_ordering')!r}, expected {joint_label.ORDERING!r}")
    if ckpt.spec != net.spec:
        raise ValueError(f"checkpoint network spec does not match: checkpoint {ckpt.spec} vs target {net.spec}")
    if ckpt.manifest.get("deployed") and not net.deploy_mode:
        net.deploy()
    own = net.state_dict()
    missing = sorted(set(own) - set(ckpt.parameters))
    extra = sorted(set(ckpt.parameters) - set(own))
    if missing or extra:
        raise ValueError(f"parameter names differ; missing {missing[:5]}, unexpected {extra[:5]}")
    for k, v in ckpt.parameters.items():
        if own[k].shape != v.shape:
            raise ValueError(f"shape mismatch for {k}: checkpoint {tuple(v.shape)} vs network {tuple(own[k].shape)}")
    net.load_state_dict(ckpt.parameters)
    return net


def restore_network(ckpt: Checkpoint) -> HierarchicalNet:
    net = HierarchicalNet(ckpt.spec)
    if ckpt.manifest.get("deployed"):
        net.deploy()
    return load_into(net, ckpt)


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- helpers

def _optimizer(params, config: TrainConfig):
    opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum,
                          weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(config.milestones), config.lr_decay)
    return opt, sched


def _batches(data: Dataset, config: TrainConfig, gen: torch.Generator, dtype):
    x_all, y_all = data.tensors()
    order = torch.randperm(len(data), generator=gen)
    for i in range(0, len(order), config.batch_size):
        idx = order[i:i + config.batch_size]
        x = x_all[idx]
        if config.augment:
            x = augment_batch(x, gen, config.aug_pad)
        yield x.to(dtype), y_all[idx]


def _views(x, y, config: TrainConfig, all_views: bool):
    family = get_family(config.pretext)
    if all_views:
        return family(x, y).views
    return x.unsqueeze(0)


def _dtype(net: nn.Module):
    return next(net.parameters()).dtype


def _run_id(kind: str, config: TrainConfig) -> str:
    return f"{kind}-{config.digest()}-s{config.seed}"


def _epoch_eval(nets, test: Optional[Dataset]) -> dict:
    if test is None:
        return {}
    out = {}
    for k, net in enumerate(nets):
        suffix = "" if len(nets) == 1 else f"/{k}"
        out["test_top1" + suffix] = evaluate_accuracy(net, test)["top1"]
    return out


def single_loss(net: HierarchicalNet, x, y, config: TrainConfig):
    """Task loss plus the auxiliary loss selected by the network's ``aux_task``."""
    task_kind = net.spec.aux_task
    taus = config.taus
    multi_view = task_kind in ("sscpd", "multitask", "ssad")
    bundle = net.forward_views(_views(x, y, config, multi_view))
    comps = {"task": loss_task(bundle.p_logits[0], y, taus)}
    if task_kind == "ssad":
        comps["aux"] = loss_aux_ssad(bundle.q_logits, y, net.spec.num_classes, bundle.M, taus)
    elif task_kind == "scpd":
        comps["aux"] = loss_aux_scpd(bundle.scpd_logits, y, taus)
    elif task_kind == "sscpd":
        comps["aux"] = loss_aux_sscpd(bundle.mu_logits, taus)
    elif task_kind == "multitask":
        comps["aux"] = loss_aux_multitask(bundle.scpd_logits, bundle.mu_logits, y, taus)
    return sum(comps.values()), comps, bundle


def _check_views(net: HierarchicalNet, config: TrainConfig):
    M = get_family(config.pretext).M
    if net.spec.aux_task != "none" and net.spec.num_views != M:
        raise ValueError(f"network built for {net.spec.num_views} views but pretext "
                         f"{config.pretext!r} produces {M}")


def _loop(kind: str, nets: Sequence[HierarchicalNet], params, data: Dataset, config: TrainConfig,
          step_fn, test: Optional[Dataset], metrics_path, train_modes=None) -> MetricsLog:
    metrics = MetricsLog(_run_id(kind, config), metrics_path)
    gen = torch.Generator().manual_seed(config.seed)
    opt, sched = _optimizer(params, config)
    dtype = _dtype(nets[0])
    for epoch in range(config.epochs):
        for net in nets:
            net.train()
        if train_modes is not None:
            train_modes()
        correct = [0.0] * len(nets)
        seen = 0
        for x, y in _batches(data, config, gen, dtype):
            total, comps, view0_logits = step_fn(x, y)
            opt.zero_grad()
            total.backward()
            opt.step()
            for k, logits in enumerate(view0_logits):
                correct[k] += topk_accuracy(logits.detach(), y) * len(y)
            seen += len(y)
            metrics.step += 1
            metrics.log("step", epoch=epoch, lr=opt.param_groups[0]["lr"], loss=total, **comps)
        sched.step()
        accs = {("train_top1" if len(nets) == 1 else f"train_top1/{k}"): c / seen
                for k, c in enumerate(correct)}
        rec = metrics.log("epoch", epoch=epoch, **accs, **_epoch_eval(nets, test))
        log.info("%s epoch %d %s", kind, epoch, rec)
    return metrics


# ---------------------------------------------------------------- pipelines

def train_single(net: HierarchicalNet, data: Dataset, config: TrainConfig,
                 test: Optional[Dataset] = None, metrics_path=None):
    """Train backbone and branches jointly; returns ``(checkpoint, metrics)``."""
    _check_views(net, config)

    def step(x, y):
        total, comps, bundle = single_loss(net, x, y, config)
        return total, comps, [bundle.p_logits[0]]

    metrics = _loop("single", [net], net.parameters(), data, config, step, test, metrics_path)
    final = _epoch_eval([net], test)
    metrics.log("final", **final)
    return make_checkpoint(net, config, config.epochs, final), metrics


def _freeze_backbone(net: HierarchicalNet):
    for p in net.backbone_parameters():
        p.requires_grad_(False)

    def modes():
        # backbone BN statistics stay fixed while the branches learn
        for m in (net.stem, net.stages, net.post):
            m.eval()
    return modes


def train_teacher(net: HierarchicalNet, data: Dataset, config: TrainConfig,
                  test: Optional[Dataset] = None, metrics_path=None):
    """Train a teacher with the joint-label auxiliary task.

    ``joint`` optimises task + auxiliary loss end to end. ``frozen_backbone``
    first trains the backbone on the task loss alone, then trains only the
    branches on the auxiliary loss with the backbone frozen; both phases use
    the full schedule of ``config``.
    """
    if net.spec.aux_task != "ssad":
        raise ValueError("a teacher needs joint-label (ssad) branches")
    _check_views(net, config)
    if config.teacher_mode == "joint":
        def step(x, y):
            total, comps, bundle = single_loss(net, x, y, config)
            return total, comps, [bundle.p_logits[0]]

        metrics = _loop("teacher", [net], net.parameters(), data, config, step, test, metrics_path)
    else:
        def step_backbone(x, y):
            logits = net(x)
            loss = loss_task(logits, y, config.taus)
            return loss, {"task": loss}, [logits]

        metrics = _loop("teacher-phase1", [net], list(net.backbone_parameters()), data, config,
                        step_backbone, test, metrics_path)
        phase2 = train_branches_frozen(net, data, config, test, metrics_path)
        metrics.records.extend(phase2.records)
    final = _epoch_eval([net], test)
    metrics.log("final", **final)
    return make_checkpoint(net, config, config.epochs, final), metrics


def train_branches_frozen(net: HierarchicalNet, data: Dataset, config: TrainConfig,
                          test: Optional[Dataset] = None, metrics_path=None) -> MetricsLog:
    """Train only the branches on the joint-label loss; backbone weights and BN statistics stay fixed."""
    modes = _freeze_backbone(net)

    def step(x, y):
        bundle = net.forward_views(_views(x, y, config, True))
        aux = loss_aux_ssad(bundle.q_logits, y, net.spec.num_classes, bundle.M, config.taus)
        return aux, {"aux": aux}, [bundle.p_logits[0]]

    try:
        return _loop("teacher-phase2", [net], list(net.branch_parameters()), data, config,
                     step, test, metrics_path, train_modes=modes)
    finally:
        for p in net.parameters():
            p.requires_grad_(True)


def _as_net(teacher) -> HierarchicalNet:
    if isinstance(teacher, Checkpoint):
        return restore_network(teacher)
    if isinstance(teacher, (str, Path)):
        return restore_network(load_checkpoint(teacher))
    return teacher


def train_student_offline(student: HierarchicalNet, teacher, data: Dataset, config: TrainConfig,
                          test: Optional[Dataset] = None, metrics_path=None):
    """Distil a frozen teacher (network, checkpoint or path) into ``student``."""
    teacher = _as_net(teacher)
    if teacher.deploy_mode:
        raise ValueError("teacher checkpoint is deployed; its branches are needed for distillation")
    ts, ss = teacher.spec, student.spec
    if (ts.L, ts.num_views, ts.num_classes) != (ss.L, ss.num_views, ss.num_classes):
        raise ValueError(f"teacher (L={ts.L}, M={ts.num_views}, N={ts.num_classes}) and student "
                         f"(L={ss.L}, M={ss.num_views}, N={ss.num_classes}) must match")
    if ts.aux_task != "ssad" or ss.aux_task != "ssad":
        raise ValueError("offline distillation needs joint-label branches on both networks")
    _check_views(student, config)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.to(_dtype(student))

    def step(x, y):
        views = _views(x, y, config, True)
        with torch.no_grad():
            bt = teacher.forward_views(views)
        bs = student.forward_views(views)
        total, comps = loss_offline_student(bs, bt, y, config.taus, config.kl_p_views)
        return total, comps, [bs.p_logits[0]]

    metrics = _loop("student", [student], student.parameters(), data, config, step, test, metrics_path,
                    train_modes=teacher.eval)
    final = _epoch_eval([student], test)
    metrics.log("final", **final)
    return make_checkpoint(student, config, config.epochs, final), metrics


def train_online(nets: Sequence[HierarchicalNet], data: Dataset, config: TrainConfig,
                 test: Optional[Dataset] = None, metrics_path=None):
    """Train ``K >= 2`` peers together; returns ``(checkpoints, metrics)``."""
    K = len(nets)
    if K < 2:
        raise ValueError(f"online distillation needs at least 2 networks, got {K}")
    first = nets[0].spec
    for n in nets:
        if (n.spec.L, n.spec.num_views, n.spec.num_classes) != (first.L, first.num_views, first.num_classes):
            raise ValueError("all peers must share N, M and the number of branches")
        if n.spec.aux_task != "ssad":
            raise ValueError("online distillation needs joint-label branches on every peer")
        _check_views(n, config)
    params = [p for n in nets for p in n.parameters()]

    def step(x, y):
        views = _views(x, y, config, True)
        bundles = [n.forward_views(views) for n in nets]
        total, per_net = loss_online(bundles, y, config.taus)
        comps = {f"{name}/{k}": v for k, c in enumerate(per_net) for name, v in c.items()}
        return total, comps, [b.p_logits[0] for b in bundles]

    metrics = _loop("online", nets, params, data, config, step, test, metrics_path)
    final = _epoch_eval(nets, test)
    metrics.log("final", **final)
    ckpts = [make_checkpoint(n, config, config.epochs,
                             {k.split("/")[0]: v for k, v in final.items() if k.endswith(f"/{i}")})
             for i, n in enumerate(nets)]
    return ckpts, metrics
