"""Probability, cross-entropy and distillation losses.

Conventions used throughout:

* every per-sample loss is averaged over the batch; sums over branches ``l``
  and views ``j`` are taken as written, with the ``1/M`` view average where the
  method prescribes it;
* KL terms are ``D_KL(target || student)`` scaled by ``tau**2``; the target side
  is detached, so no gradient reaches whatever produced it;
* all loss terms carry weight 1;
* losses are evaluated in float64 whatever the logits' dtype, so the returned
  scalars are double.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from . import joint_label


@dataclass(frozen=True)
class Temperatures:
    tau_ce: float = 1.0
    tau_kd: float = 3.0

    def __post_init__(self):
        if not (self.tau_ce > 0 and self.tau_kd > 0):
            raise ValueError(f"temperatures must be positive, got {self}")


@dataclass
class LogitsBundle:
    """Raw logits from one forward pass over all views.

    p_logits:    ``[M, B, N]`` backbone logits for each view.
    q_logits:    ``[L, M, B, N*M]`` joint-label logits from each branch.
    mu_logits:   ``[L, M, B, M]`` transform logits (self-supervised ablation).
    scpd_logits: ``[L, B, N]`` class logits on the identity view (supervised ablation).
    """

    p_logits: torch.Tensor
    q_logits: Optional[torch.Tensor] = None
    mu_logits: Optional[torch.Tensor] = None
    scpd_logits: Optional[torch.Tensor] = None

    @property
    def M(self) -> int:
        return self.p_logits.shape[0]

    @property
    def N(self) -> int:
        return self.p_logits.shape[-1]

    @property
    def L(self) -> int:
        for t in (self.q_logits, self.mu_logits, self.scpd_logits):
            if t is not None:
                return t.shape[0]
        return 0

    def detach(self) -> "LogitsBundle":
        return LogitsBundle(*(None if t is None else t.detach() for t in
                              (self.p_logits, self.q_logits, self.mu_logits, self.scpd_logits)))


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _check_finite(logits: torch.Tensor) -> None:
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain NaN or Inf")


def tempered_softmax(logits: torch.Tensor, tau: float) -> torch.Tensor:
    _check_tau(tau)
    _check_finite(logits)
    return torch.softmax(logits / tau, dim=-1)


def tempered_log_softmax(logits: torch.Tensor, tau: float) -> torch.Tensor:
    _check_tau(tau)
    _check_finite(logits)
    return torch.log_softmax(logits / tau, dim=-1)


def cross_entropy(logits: torch.Tensor, labels, tau: float = 1.0) -> torch.Tensor:
    """Batch-mean of ``-log softmax(logits / tau)[label]``."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    K = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    logp = tempered_log_softmax(logits.double(), tau)
    return -logp.gather(-1, labels.unsqueeze(-1)).mean()


def kl_unweighted(teacher_logits: torch.Tensor, student_logits: torch.Tensor, tau: float) -> torch.Tensor:
    """Batch-mean ``D_KL(p_T || p_S)`` at temperature ``tau``, without the ``tau**2`` factor."""
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(f"shape mismatch: teacher {tuple(teacher_logits.shape)} "
                         f"vs student {tuple(student_logits.shape)}")
    log_t = tempered_log_softmax(teacher_logits.detach().double(), tau)
    log_s = tempered_log_softmax(student_logits.double(), tau)
    per_sample = (log_t.exp() * (log_t - log_s)).sum(dim=-1)
    return per_sample.mean()


def kd_kl(teacher_logits: torch.Tensor, student_logits: torch.Tensor, tau: float) -> torch.Tensor:
    """``tau**2 * D_KL(teacher || student)``; teacher logits act as constants."""
    return tau ** 2 * kl_unweighted(teacher_logits, student_logits, tau)


def loss_task(p_logits_view0: torch.Tensor, labels, taus: Temperatures = Temperatures()) -> torch.Tensor:
    """Cross-entropy of the backbone on the untransformed view only."""
    return cross_entropy(p_logits_view0, labels, taus.tau_ce)


def loss_aux_ssad(q_logits: torch.Tensor, labels, N: int, M: int,
                  taus: Temperatures = Temperatures()) -> torch.Tensor:
    """Joint-label cross-entropy summed over branches, averaged over views."""
    if q_logits.ndim != 4 or q_logits.shape[1] != M or q_logits.shape[-1] != N * M:
        raise ValueError(f"q_logits must be [L, {M}, B, {N * M}], got {tuple(q_logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long, device=q_logits.device)
    total = q_logits.new_zeros(())
    for j in range(M):
        target = joint_label.encode(labels, torch.full_like(labels, j), N, M)
        for l in range(q_logits.shape[0]):
            total = total + cross_entropy(q_logits[l, j], target, taus.tau_ce)
    return total / M


def loss_aux_scpd(scpd_logits: torch.Tensor, labels, taus: Temperatures = Temperatures()) -> torch.Tensor:
    return sum(cross_entropy(scpd_logits[l], labels, taus.tau_ce) for l in range(scpd_logits.shape[0]))


def loss_aux_sscpd(mu_logits: torch.Tensor, taus: Temperatures = Temperatures()) -> torch.Tensor:
    L, M, B, K = mu_logits.shape
    if K != M:
        raise ValueError(f"mu_logits last dimension {K} must equal the number of views {M}")
    total = mu_logits.new_zeros(())
    for j in range(M):
        target = torch.full((B,), j, dtype=torch.long, device=mu_logits.device)
        for l in range(L):
            total = total + cross_entropy(mu_logits[l, j], target, taus.tau_ce)
    return total / M


def loss_aux_multitask(scpd_logits, mu_logits, labels, taus: Temperatures = Temperatures()) -> torch.Tensor:
    return loss_aux_scpd(scpd_logits, labels, taus) + loss_aux_sscpd(mu_logits, taus)


def loss_kl_q_offline(q_T: torch.Tensor, q_S: torch.Tensor, taus: Temperatures = Temperatures()) -> torch.Tensor:
    """Branch ``l`` of the student mimics branch ``l`` of the teacher on every view."""
    if q_T.shape[:2] != q_S.shape[:2]:
        raise ValueError(f"branch/view mismatch: teacher {tuple(q_T.shape[:2])} vs student {tuple(q_S.shape[:2])}")
    L, M = q_S.shape[:2]
    total = q_S.new_zeros(())
    for j in range(M):
        for l in range(L):
            total = total + kd_kl(q_T[l, j], q_S[l, j], taus.tau_kd)
    return total / M


def loss_kl_p_offline(p_T: torch.Tensor, p_S: torch.Tensor, taus: Temperatures = Temperatures(),
                      views: str = "all") -> torch.Tensor:
    """Backbone class-distribution mimicry.

    ``views="all"`` averages over every transformed view; ``views="first"``
    keeps only the identity view, which is the plain logit-distillation term.
    """
    if p_T.shape[0] != p_S.shape[0]:
        raise ValueError(f"view count mismatch: {p_T.shape[0]} vs {p_S.shape[0]}")
    if views == "first":
        return kd_kl(p_T[0], p_S[0], taus.tau_kd)
    if views != "all":
        raise ValueError(f"views must be 'all' or 'first', got {views!r}")
    M = p_S.shape[0]
    return sum(kd_kl(p_T[j], p_S[j], taus.tau_kd) for j in range(M)) / M


def loss_offline_student(bundle_S: LogitsBundle, bundle_T: LogitsBundle, labels,
                         taus: Temperatures = Temperatures(), kl_p_views: str = "all"):
    """Student objective: task + joint-distribution mimicry + class-distribution mimicry.

    Returns ``(total, components)`` with components ``task``, ``kl_q``, ``kl_p``.
    """
    if bundle_S.L != bundle_T.L or bundle_S.M != bundle_T.M:
        raise ValueError(f"teacher (L={bundle_T.L}, M={bundle_T.M}) and student "
                         f"(L={bundle_S.L}, M={bundle_S.M}) must match")
    comps = {
        "task": loss_task(bundle_S.p_logits[0], labels, taus),
        "kl_q": loss_kl_q_offline(bundle_T.q_logits, bundle_S.q_logits, taus),
        "kl_p": loss_kl_p_offline(bundle_T.p_logits, bundle_S.p_logits, taus, kl_p_views),
    }
    return comps["task"] + comps["kl_q"] + comps["kl_p"], comps


def directed_pairs(K: int) -> list[tuple[int, int]]:
    """Ordered ``(student, target)`` pairs: both directions of every unordered pair."""
    return [(a, b) for a in range(K) for b in range(K) if a != b]


def loss_mimicry(student: LogitsBundle, target: LogitsBundle, taus: Temperatures = Temperatures()):
    """One directed mimicry ``student -> target``; target logits are constants."""
    return (loss_kl_q_offline(target.q_logits, student.q_logits, taus),
            loss_kl_p_offline(target.p_logits, student.p_logits, taus))


def loss_online(bundles: Sequence[LogitsBundle], labels, taus: Temperatures = Temperatures()):
    """Cohort objective for ``K >= 2`` peers trained together.

    Each peer contributes its task and joint-label losses; every directed pair
    ``a -> b`` adds ``a``'s mimicry of ``b`` with ``b`` held constant.
    Returns ``(total, components)`` where ``components[k]`` holds the terms
    whose gradients land on peer ``k``.
    """
    K = len(bundles)
    if K < 2:
        raise ValueError(f"online distillation needs at least 2 networks, got {K}")
    N, M, L = bundles[0].N, bundles[0].M, bundles[0].L
    for b in bundles[1:]:
        if (b.N, b.M, b.L) != (N, M, L):
            raise ValueError("all peers must share N, M and the number of branches")

    comps = []
    for bundle in bundles:
        comps.append({
            "task": loss_task(bundle.p_logits[0], labels, taus),
            "aux_ssad": loss_aux_ssad(bundle.q_logits, labels, N, M, taus),
            "kl_q": bundle.p_logits.new_zeros(()),
            "kl_p": bundle.p_logits.new_zeros(()),
        })
    for a, b in directed_pairs(K):
        kl_q, kl_p = loss_mimicry(bundles[a], bundles[b], taus)
        comps[a]["kl_q"] = comps[a]["kl_q"] + kl_q
        comps[a]["kl_p"] = comps[a]["kl_p"] + kl_p
    total = sum(sum(c.values()) for c in comps)
    return total, comps
