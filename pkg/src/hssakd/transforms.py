"""Self-supervised view generators (rotation, jigsaw, colour permutation).

Every family returns the identity view first, so ``views[0]`` is the input batch
untouched. Views are pure pixel/channel permutations; nothing is interpolated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch

PRETEXTS = ("rotation4", "jigsaw4", "color_perm6")

# RGB, RBG, GRB, GBR, BRG, BGR
COLOR_PERMUTATIONS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


@dataclass
class ViewBatch:
    """``M`` transformed copies of a batch.

    ``views`` has shape ``[M, B, C, H, W]``; ``ss_labels[j] == j`` is the
    transform index of view ``j``.
    """

    views: torch.Tensor
    ss_labels: torch.Tensor
    source_labels: Optional[torch.Tensor] = None

    @property
    def M(self) -> int:
        return self.views.shape[0]

    @property
    def B(self) -> int:
        return self.views.shape[1]

    def flat(self) -> torch.Tensor:
        """Views stacked along the batch axis, ``[M*B, C, H, W]``."""
        return self.views.reshape((-1,) + tuple(self.views.shape[2:]))


def _as_batch(batch) -> torch.Tensor:
    x = torch.as_tensor(batch)
    if x.ndim != 4:
        raise ValueError(f"expected a [B, C, H, W] batch, got shape {tuple(x.shape)}")
    return x


def _pack(views: Sequence[torch.Tensor], labels) -> ViewBatch:
    stacked = torch.stack(list(views), dim=0)
    ss = torch.arange(len(views), dtype=torch.long)
    src = None if labels is None else torch.as_tensor(labels, dtype=torch.long)
    return ViewBatch(stacked, ss, src)


def rotate(x: torch.Tensor, quarter_turns: int) -> torch.Tensor:
    """Rotate the last two axes counter-clockwise by ``quarter_turns * 90`` degrees."""
    return torch.rot90(x, quarter_turns % 4, dims=(-2, -1))


def rotation_views(batch, labels=None) -> ViewBatch:
    x = _as_batch(batch)
    if x.shape[-1] != x.shape[-2]:
        raise ValueError(f"rotation views need square images, got {x.shape[-2]}x{x.shape[-1]}")
    return _pack([x if k == 0 else rotate(x, k) for k in range(4)], labels)


def hamming(p: Sequence[int], q: Sequence[int]) -> int:
    return sum(a != b for a, b in zip(p, q))


def select_max_hamming_permutations(n_items: int = 4, k: int = 4) -> list[tuple[int, ...]]:
    """Pick ``k`` permutations of ``range(n_items)`` that are mutually far apart.

    The identity always comes first. For ``n_items! <= 24`` all k-subsets that
    contain the identity are searched and the one with the largest minimum
    pairwise Hamming distance wins (ties: larger total distance, then
    lexicographic order). Larger problems use greedy farthest-point selection
    seeded at the identity.
    """
    if n_items < 1 or k < 1:
        raise ValueError("n_items and k must be positive")
    total = math.factorial(n_items)
    if k > total:
        raise ValueError(f"cannot pick {k} distinct permutations of {n_items} items ({total} exist)")
    perms = list(itertools.permutations(range(n_items)))
    identity, rest = perms[0], perms[1:]
    if k == 1:
        return [identity]

    if total <= 24:
        best, best_key = None, None
        for combo in itertools.combinations(rest, k - 1):
            chosen = (identity,) + combo
            dists = [hamming(a, b) for a, b in itertools.combinations(chosen, 2)]
            key = (min(dists), sum(dists))
            if best_key is None or key > best_key:
                best, best_key = chosen, key
        return list(best)

    chosen = [identity]
    mind = {p: hamming(identity, p) for p in rest}
    while len(chosen) < k:
        # max() keeps the first maximum, i.e. the lexicographically smallest
        nxt = max(mind, key=lambda p: mind[p])
        chosen.append(nxt)
        del mind[nxt]
        for p in mind:
            mind[p] = min(mind[p], hamming(nxt, p))
    return chosen


def permute_patches(x: torch.Tensor, perm: Sequence[int]) -> torch.Tensor:
    """Rearrange the 2x2 grid of quadrants: output slot ``i`` gets input patch ``perm[i]``.

    Patches are numbered row-major: 0 top-left, 1 top-right, 2 bottom-left,
    3 bottom-right.
    """
    H, W = x.shape[-2], x.shape[-1]
    if H % 2 or W % 2:
        raise ValueError(f"jigsaw views need even height and width, got {H}x{W}")
    h, w = H // 2, W // 2
    patches = [x[..., r * h:(r + 1) * h, c * w:(c + 1) * w] for r in (0, 1) for c in (0, 1)]
    out = [patches[i] for i in perm]
    top = torch.cat(out[0:2], dim=-1)
    bottom = torch.cat(out[2:4], dim=-1)
    return torch.cat([top, bottom], dim=-2)


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def jigsaw_views(batch, labels=None, permutations=None) -> ViewBatch:
    x = _as_batch(batch)
    perms = permutations if permutations is not None else select_max_hamming_permutations(4, 4)
    views = [x if tuple(p) == (0, 1, 2, 3) else permute_patches(x, p) for p in perms]
    return _pack(views, labels)


def color_permutation_views(batch, labels=None) -> ViewBatch:
    x = _as_batch(batch)
    if x.shape[1] != 3:
        raise ValueError(f"colour permutation needs 3 channels, got {x.shape[1]}")
    views = [x if p == (0, 1, 2) else x[:, list(p)] for p in COLOR_PERMUTATIONS]
    return _pack(views, labels)


@dataclass(frozen=True)
class TransformFamily:
    kind: str
    descriptors: tuple = field(default=())

    @property
    def M(self) -> int:
        return len(self.descriptors)

    def __call__(self, batch, labels=None) -> ViewBatch:
        if self.kind == "rotation4":
            return rotation_views(batch, labels)
        if self.kind == "jigsaw4":
            return jigsaw_views(batch, labels, self.descriptors)
        return color_permutation_views(batch, labels)

    def apply_one(self, x: torch.Tensor, j: int) -> torch.Tensor:
        d = self.descriptors[j]
        if self.kind == "rotation4":
            return rotate(x, d)
        if self.kind == "jigsaw4":
            return permute_patches(x, d)
        return x[:, list(d)]

    def invert(self, x: torch.Tensor, j: int) -> torch.Tensor:
        """Undo view ``j`` so that ``invert(apply_one(x, j), j) == x``."""
        d = self.descriptors[j]
        if self.kind == "rotation4":
            return rotate(x, -d)
        if self.kind == "jigsaw4":
            return permute_patches(x, inverse_permutation(d))
        return x[:, list(inverse_permutation(d))]


def get_family(kind: str) -> TransformFamily:
    if kind == "rotation4":
        return TransformFamily(kind, (0, 1, 2, 3))
    if kind == "jigsaw4":
        return TransformFamily(kind, tuple(select_max_hamming_permutations(4, 4)))
    if kind == "color_perm6":
        return TransformFamily(kind, COLOR_PERMUTATIONS)
    raise ValueError(f"unknown pretext {kind!r}; expected one of {PRETEXTS}")
