"""Datasets: synthetic generator, CIFAR binary batches, stratified subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

CIFAR_IMAGE_BYTES = 3 * 32 * 32
CIFAR_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR_STD = (0.2673, 0.2564, 0.2762)


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, H, W] float32
    labels: np.ndarray  # [n] int64
    N: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be [n, C, H, W] with one label per image")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.N):
            raise ValueError(f"labels must lie in [0, {self.N})")

    def __len__(self):
        return len(self.labels)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.N)

    def subset(self, idx) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])

    def tensors(self):
        return torch.from_numpy(self.images), torch.from_numpy(self.labels)


def synth_dataset(seed: int, N: int = 10, per_class: int = 50, size: int = 16,
                  noise: float = 0.35, split: str = "train", class_seed: int = 1234,
                  distractors: int = 0) -> Dataset:
    """Orientation-bearing class patterns.

    Each class owns a fixed template: a few coloured strokes at class-specific
    angles and positions on top of a top-lit vertical gradient, so that every
    image has a canonical "up" and its rotations are distinguishable. Samples
    jitter the template (translation, stroke position, contrast), may add
    ``distractors`` random strokes that carry no class information, and add
    Gaussian noise. ``class_seed`` fixes the templates, so train and test draws
    with different ``seed`` share classes.
    """
    if N < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    if size < 8 or size % 2:
        raise ValueError("size must be even and at least 8")
    crng = np.random.default_rng(class_seed)
    rng = np.random.default_rng(seed)
    templates = []
    for _ in range(N):
        strokes = []
        for _ in range(3):
            strokes.append(dict(
                angle=crng.uniform(0, np.pi),
                cx=crng.uniform(0.25, 0.75) * size, cy=crng.uniform(0.2, 0.8) * size,
                length=crng.uniform(0.25, 0.5) * size,
                color=crng.uniform(0.2, 1.0, size=3),
            ))
        templates.append(strokes)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    light = np.linspace(0.6, -0.2, size)[:, None] * np.ones((1, size))
    images = np.empty((N * per_class, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(N), per_class)
    def stroke(cx, cy, angle, length):
        ux, uy = np.cos(angle), np.sin(angle)
        along = (xx - cx) * ux + (yy - cy) * uy
        across = -(xx - cx) * uy + (yy - cy) * ux
        return np.exp(-across ** 2 / 1.2) * (np.abs(along) <= length / 2)

    for i, y in enumerate(labels):
        img = np.repeat(light[None], 3, axis=0).copy()
        dx, dy = rng.integers(-2, 3, size=2)
        for st in templates[y]:
            mask = stroke(st["cx"] + dx + rng.normal(0, 0.7), st["cy"] + dy + rng.normal(0, 0.7),
                          st["angle"] + rng.normal(0, 0.1), st["length"])
            img += rng.uniform(0.7, 1.3) * st["color"][:, None, None] * mask[None]
        for _ in range(distractors):
            mask = stroke(*rng.uniform(0.15, 0.85, size=2) * size, rng.uniform(0, np.pi),
                          rng.uniform(0.2, 0.4) * size)
            img += rng.uniform(0.2, 1.0, size=3)[:, None, None] * mask[None]
        img += rng.normal(0, noise, size=img.shape)
        images[i] = img
    return Dataset(images, labels, N, split)


def cifar_record_size(label_bytes: int) -> int:
    return label_bytes + CIFAR_IMAGE_BYTES


def read_cifar_bin(path, label_bytes: int = 1, label_index: int = -1):
    """Parse one CIFAR binary batch file into ``(uint8 images [n,3,32,32], labels)``.

    CIFAR-10 rows are ``<label><3072 pixel bytes>``; CIFAR-100 rows carry two
    label bytes (coarse, fine) and ``label_index=-1`` picks the fine label.
    """
    raw = Path(path).read_bytes()
    rec = cifar_record_size(label_bytes)
    if len(raw) % rec:
        n_full = len(raw) // rec
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of the {rec}-byte record; "
                         f"trailing partial record starts at byte offset {n_full * rec}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, :label_bytes][:, label_index].astype(np.int64)
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def write_cifar_bin(path, images, labels, label_bytes: int = 1) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), CIFAR_IMAGE_BYTES)
    lab = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    lab = np.repeat(lab, label_bytes, axis=1)
    Path(path).write_bytes(np.concatenate([lab, images], axis=1).tobytes())


def _cifar_files(directory: Path, split: str):
    train10 = [directory / f"data_batch_{i}.bin" for i in range(1, 6)]
    if split == "train" and any(p.exists() for p in train10):
        return [p for p in train10 if p.exists()], 1, 10
    if split == "test" and (directory / "test_batch.bin").exists():
        return [directory / "test_batch.bin"], 1, 10
    if (directory / f"{split}.bin").exists():
        return [directory / f"{split}.bin"], 2, 100
    raise FileNotFoundError(f"no CIFAR {split} batches found in {directory}")


def ingest_cifar(directory, split: str = "train", normalize: bool = True,
                 mean=CIFAR_MEAN, std=CIFAR_STD, classes=None) -> Dataset:
    """Load CIFAR-10 or CIFAR-100 binary batches from ``directory``.

    Pixels are scaled to [0, 1] and, if ``normalize``, standardised per channel.
    ``classes`` keeps only the listed classes and relabels them ``0..len-1``.
    Augmentation is applied per batch at training time (see :func:`augment_batch`).
    """
    files, label_bytes, N = _cifar_files(Path(directory), split)
    parts = [read_cifar_bin(f, label_bytes) for f in files]
    images = np.concatenate([p[0] for p in parts]).astype(np.float32) / 255.0
    labels = np.concatenate([p[1] for p in parts])
    if normalize:
        images = (images - np.asarray(mean, np.float32)[:, None, None]) / np.asarray(std, np.float32)[:, None, None]
    if classes is not None:
        classes = list(classes)
        keep = np.isin(labels, classes)
        remap = {c: i for i, c in enumerate(classes)}
        images, labels = images[keep], np.array([remap[c] for c in labels[keep]], dtype=np.int64)
        N = len(classes)
    return Dataset(images, labels, N, split)


def augment_batch(x: torch.Tensor, generator: torch.Generator, pad: int = 4) -> torch.Tensor:
    """Zero-pad, random crop back to size, random horizontal flip (per sample)."""
    B, C, H, W = x.shape
    padded = torch.nn.functional.pad(x, (pad, pad, pad, pad))
    offs = torch.randint(0, 2 * pad + 1, (B, 2), generator=generator)
    flips = torch.rand(B, generator=generator) < 0.5
    out = torch.empty_like(x)
    for i in range(B):
        oy, ox = int(offs[i, 0]), int(offs[i, 1])
        crop = padded[i, :, oy:oy + H, ox:ox + W]
        out[i] = crop.flip(-1) if flips[i] else crop
    return out


def fewshot_split(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Stratified subsample keeping ``ceil(fraction * count)`` images of every class.

    Kept images stay in their original order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    counts = dataset.class_counts
    if np.any(counts == 0):
        raise ValueError(f"classes {np.flatnonzero(counts == 0).tolist()} have no samples")
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.N):
        idx = np.flatnonzero(dataset.labels == c)
        k = math.ceil(fraction * len(idx) - 1e-9)
        if k < 1:
            raise ValueError(f"class {c} would be empty after the split")
        keep.append(rng.permutation(idx)[:k])
    return dataset.subset(np.sort(np.concatenate(keep)))
