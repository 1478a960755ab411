"""Accuracy, linear-probe transfer and embedding export for deployed backbones."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import Dataset


def topk_accuracy(logits: torch.Tensor, labels: torch.Tensor, k: int = 1) -> float:
    """Fraction of rows whose label is among the ``k`` largest logits."""
    labels = torch.as_tensor(labels)
    top = logits.topk(k, dim=-1).indices
    return (top == labels.unsqueeze(-1)).any(dim=-1).float().mean().item()


@torch.no_grad()
def predict_logits(net: nn.Module, dataset: Dataset, batch_size: int = 256) -> torch.Tensor:
    was_training = net.training
    net.eval()
    dtype = next(net.parameters()).dtype
    x, _ = dataset.tensors()
    out = torch.cat([net(x[i:i + batch_size].to(dtype)) for i in range(0, len(x), batch_size)])
    net.train(was_training)
    return out


def evaluate_accuracy(net: nn.Module, dataset: Dataset, batch_size: int = 256) -> dict:
    """Top-1 (and top-5 when there are at least 5 classes) of the backbone's predictions."""
    n_out = net.fc.out_features
    if n_out != dataset.N:
        raise ValueError(f"network predicts {n_out} classes but the dataset has {dataset.N}")
    logits = predict_logits(net, dataset, batch_size)
    labels = torch.from_numpy(dataset.labels)
    result = {"top1": topk_accuracy(logits, labels, 1)}
    if dataset.N >= 5:
        result["top5"] = topk_accuracy(logits, labels, 5)
    return result


@torch.no_grad()
def extract_features(net: nn.Module, dataset: Dataset, batch_size: int = 256) -> torch.Tensor:
    was_training = net.training
    net.eval()
    dtype = next(net.parameters()).dtype
    x, _ = dataset.tensors()
    feats = torch.cat([net.features(x[i:i + batch_size].to(dtype)) for i in range(0, len(x), batch_size)])
    net.train(was_training)
    return feats


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.1
    milestones: tuple = (30, 60, 90)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    seed: int = 0


def fit_linear_probe(train_feats, train_labels, test_feats, test_labels, num_classes: int,
                     config: ProbeConfig = ProbeConfig()) -> dict:
    """Train a ``d x N`` linear map on fixed features; return train/test top-1."""
    train_feats, test_feats = torch.as_tensor(train_feats), torch.as_tensor(test_feats)
    if train_feats.shape[1] != test_feats.shape[1]:
        raise ValueError(f"feature width mismatch: train {train_feats.shape[1]} vs test {test_feats.shape[1]}")
    train_labels, test_labels = torch.as_tensor(train_labels), torch.as_tensor(test_labels)
    gen = torch.Generator().manual_seed(config.seed)
    head = nn.Linear(train_feats.shape[1], num_classes).to(train_feats.dtype)
    with torch.no_grad():
        head.weight.normal_(0, 0.01, generator=gen)
        head.bias.zero_()
    opt = torch.optim.SGD(head.parameters(), lr=config.lr, momentum=config.momentum,
                          weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(config.milestones), config.lr_decay)
    n = len(train_labels)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss = nn.functional.cross_entropy(head(train_feats[idx]), train_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    with torch.no_grad():
        return {"train_top1": topk_accuracy(head(train_feats), train_labels),
                "test_top1": topk_accuracy(head(test_feats), test_labels)}


def linear_probe(frozen_net: nn.Module, train_set: Dataset, test_set: Dataset,
                 config: ProbeConfig = ProbeConfig()) -> dict:
    """Linear classification on the frozen network's pooled features.

    The network is only read: features are extracted once under ``no_grad``
    in inference mode. Test images are used without augmentation.
    """
    if train_set.N != test_set.N:
        raise ValueError("train and test sets must share the class count")
    tr = extract_features(frozen_net, train_set)
    te = extract_features(frozen_net, test_set)
    return fit_linear_probe(tr, train_set.labels, te, test_set.labels, train_set.N, config)


def recall_at_k(features, labels, k: int = 1) -> float:
    """Share of points with at least one same-class point among their ``k`` nearest neighbours.

    Euclidean distance; a point is never its own neighbour.
    """
    f = torch.as_tensor(features, dtype=torch.float64)
    y = torch.as_tensor(labels)
    if len(f) < 2:
        return 0.0
    d = torch.cdist(f, f)
    d.fill_diagonal_(float("inf"))
    nn_idx = d.topk(min(k, len(f) - 1), largest=False).indices
    return (y[nn_idx] == y.unsqueeze(1)).any(dim=1).double().mean().item()


def write_embeddings_csv(path, features, labels) -> None:
    """CSV with header ``label,f0,...,f{d-1}`` and one row per sample."""
    features = np.asarray(features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(features.shape[1])])
        for lab, row in zip(np.asarray(labels), features):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def read_embeddings_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:], data[:, 0].astype(np.int64)


def export_embeddings(net: nn.Module, dataset: Dataset, path) -> dict:
    """Write pooled penultimate features to ``path`` and report Recall@1."""
    feats = extract_features(net, dataset)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_embeddings_csv(path, feats.numpy(), dataset.labels)
    return {"path": str(path), "n": len(dataset), "dim": feats.shape[1],
            "recall_at_1": recall_at_k(feats, dataset.labels, 1)}
