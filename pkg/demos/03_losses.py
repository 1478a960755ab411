"""
Loss assembly
=============

Single-network training adds the joint-label loss to the task loss. A student
additionally mimics the teacher's joint and class distributions with
temperature-scaled KL terms, and online peers mimic each other.
"""

import torch

from hssakd import losses as Lo
from hssakd.losses import LogitsBundle, Temperatures

torch.manual_seed(0)
L, M, B, N = 3, 4, 8, 10
taus = Temperatures(tau_ce=1.0, tau_kd=3.0)
y = torch.randint(0, N, (B,))


def bundle():
    return LogitsBundle(torch.randn(M, B, N), torch.randn(L, M, B, N * M))


S, T = bundle(), bundle()
print("task:", Lo.loss_task(S.p_logits[0], y, taus).item())
print("joint-label aux:", Lo.loss_aux_ssad(S.q_logits, y, N, M, taus).item())

total, parts = Lo.loss_offline_student(S, T, y, taus)
print("offline student:", {k: round(v.item(), 4) for k, v in parts.items()}, "total", total.item())

# the KL terms are scaled by tau^2 so their gradients keep their size as tau grows
for tau in (1, 3, 5):
    print(f"tau={tau}: kd_kl / KL =", (Lo.kd_kl(T.p_logits[0], S.p_logits[0], tau)
                                      / Lo.kl_unweighted(T.p_logits[0], S.p_logits[0], tau)).item())

# online: each peer learns from the other's detached distributions
total, per_peer = Lo.loss_online([S, T], y, taus)
print("online total:", total.item(), "directed pairs:", Lo.directed_pairs(2))
