import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from hssakd import losses as Lo
from hssakd.losses import LogitsBundle, Temperatures

import oracles

TAUS = Temperatures(1.0, 3.0)


def rnd(*shape, seed=0, scale=2.0):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(*shape, generator=g, dtype=torch.float64) * scale)


def labels(B, N, seed=0):
    return torch.randint(0, N, (B,), generator=torch.Generator().manual_seed(seed + 100))


def central_diff(f, x, step=1e-4):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = f(x).item()
        flat[i] = orig - step
        lo = f(x).item()
        flat[i] = orig
        grad.view(-1)[i] = (hi - lo) / (2 * step)
    return grad


def max_rel_err(a, b):
    return ((a - b).abs().max() / b.abs().max().clamp_min(1e-12)).item()


# ---------------------------------------------------------------- softmax / CE / KL

def test_tempered_softmax_examples():
    assert Lo.tempered_softmax(torch.zeros(5), 1.0).tolist() == pytest.approx([0.2] * 5)
    x = torch.tensor([0.0, math.log(4)], dtype=torch.float64)
    assert Lo.tempered_softmax(x, 1.0).tolist() == pytest.approx([0.2, 0.8], abs=1e-12)
    assert Lo.tempered_softmax(x, 2.0).tolist() == pytest.approx([1 / 3, 2 / 3], abs=1e-12)


def test_tempered_softmax_shift_invariance():
    x = rnd(3, 7)
    a = Lo.tempered_softmax(x, 2.5)
    b = Lo.tempered_softmax(x + 123.0, 2.5)
    torch.testing.assert_close(a, b, rtol=0, atol=1e-12)
    torch.testing.assert_close(a.sum(-1), torch.ones(3, dtype=torch.float64))


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_tempered_softmax_rejects_bad_tau(tau):
    with pytest.raises(ValueError):
        Lo.tempered_softmax(torch.zeros(3), tau)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_tempered_softmax_rejects_nonfinite(bad):
    with pytest.raises(ValueError):
        Lo.tempered_softmax(torch.tensor([0.0, bad]), 1.0)


def test_cross_entropy_examples():
    assert Lo.cross_entropy(torch.zeros(1, 2), [0], 1.0).item() == pytest.approx(math.log(2))
    assert Lo.cross_entropy(torch.tensor([[1000.0, 0.0, 0.0]]), [0], 1.0).item() == pytest.approx(0, abs=1e-9)
    x, y = rnd(3, 5), labels(3, 5)
    assert Lo.cross_entropy(x, y, 1.7).item() == pytest.approx(oracles.ce(x.tolist(), y.tolist(), 1.7),
                                                                rel=1e-9)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        Lo.cross_entropy(torch.zeros(2, 3), [0, 3], 1.0)


def test_kd_kl_examples():
    x = rnd(4, 6)
    assert Lo.kd_kl(x, x.clone(), 3.0).item() == pytest.approx(0, abs=1e-12)
    t = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    s = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    e = math.e
    assert Lo.kd_kl(t, s, 1.0).item() == pytest.approx((e - 1) / (e + 1), abs=1e-12)
    assert Lo.kd_kl(t, s, 1.0).item() == pytest.approx(0.462117, abs=1e-6)
    a, b = rnd(3, 5, seed=1), rnd(3, 5, seed=2)
    assert Lo.kd_kl(a, b, 3.0).item() == pytest.approx(9 * Lo.kl_unweighted(a, b, 3.0).item(), rel=1e-12)
    assert Lo.kd_kl(a, b, 3.0).item() == pytest.approx(oracles.kd(a.tolist(), b.tolist(), 3.0), rel=1e-9)


def test_kd_kl_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        Lo.kd_kl(torch.zeros(2, 3), torch.zeros(2, 4), 1.0)


def test_kd_kl_teacher_gets_no_gradient():
    t = rnd(3, 5, seed=3).requires_grad_()
    s = rnd(3, 5, seed=4).requires_grad_()
    loss = Lo.kd_kl(t, s, 3.0)
    gt, gs = torch.autograd.grad(loss, [t, s], allow_unused=True)
    assert gt is None or torch.count_nonzero(gt) == 0
    assert torch.count_nonzero(gs) > 0


def test_large_logits_stay_finite():
    t = torch.tensor([[5000.0, -5000.0, 0.0]])
    s = torch.tensor([[-5000.0, 5000.0, 0.0]])
    assert math.isfinite(Lo.kd_kl(t, s, 1.0).item())
    assert math.isfinite(Lo.cross_entropy(s, [0], 1.0).item())


# ---------------------------------------------------------------- auxiliary losses

def test_ssad_degenerate_is_plain_ce():
    x, y = rnd(1, 1, 4, 5), labels(4, 5)
    assert Lo.loss_aux_ssad(x, y, 5, 1, TAUS).item() == pytest.approx(Lo.cross_entropy(x[0, 0], y).item(),
                                                                       rel=1e-12)


def test_ssad_zero_logits():
    v = Lo.loss_aux_ssad(torch.zeros(2, 4, 3, 12, dtype=torch.float64), labels(3, 3), 3, 4, TAUS).item()
    q = [[[[0.0] * 12 for _ in range(3)] for _ in range(4)] for _ in range(2)]
    assert v == pytest.approx(oracles.ssad(q, labels(3, 3).tolist(), 3, 4, 1.0), rel=1e-12)
    assert v == pytest.approx(2 * math.log(12), rel=1e-12)


def test_ssad_random_matches_oracle():
    L, M, B, N = 3, 4, 2, 5
    q, y = rnd(L, M, B, N * M, seed=5), labels(B, N, seed=5)
    assert Lo.loss_aux_ssad(q, y, N, M, Temperatures(1.3, 3)).item() == pytest.approx(
        oracles.ssad(q.tolist(), y.tolist(), N, M, 1.3), rel=1e-9)


def test_ssad_rejects_bad_width():
    with pytest.raises(ValueError):
        Lo.loss_aux_ssad(torch.zeros(1, 4, 2, 11), [0, 1], 3, 4)


def test_scpd_examples():
    x, y = rnd(1, 3, 4), labels(3, 4)
    assert Lo.loss_aux_scpd(x, y).item() == pytest.approx(Lo.cross_entropy(x[0], y).item())
    assert Lo.loss_aux_scpd(torch.zeros(3, 2, 4), [0, 3]).item() == pytest.approx(3 * math.log(4))
    x = rnd(3, 4, 5, seed=6)
    y = labels(4, 5, seed=6)
    assert Lo.loss_aux_scpd(x, y).item() == pytest.approx(oracles.scpd(x.tolist(), y.tolist(), 1.0), rel=1e-9)


def test_sscpd_examples():
    x = rnd(1, 1, 3, 1)
    assert Lo.loss_aux_sscpd(x).item() == pytest.approx(Lo.cross_entropy(x[0, 0], [0, 0, 0]).item())
    assert Lo.loss_aux_sscpd(torch.zeros(2, 4, 3, 4)).item() == pytest.approx(2 * math.log(4))
    x = rnd(2, 4, 3, 4, seed=7)
    assert Lo.loss_aux_sscpd(x).item() == pytest.approx(oracles.sscpd(x.tolist(), 1.0), rel=1e-9)
    with pytest.raises(ValueError):
        Lo.loss_aux_sscpd(torch.zeros(2, 4, 3, 5))


def test_multitask_is_sum():
    s, mu, y = rnd(2, 3, 5, seed=8), rnd(2, 4, 3, 4, seed=9), labels(3, 5, seed=8)
    total = Lo.loss_aux_multitask(s, mu, y).item()
    assert total == pytest.approx(Lo.loss_aux_scpd(s, y).item() + Lo.loss_aux_sscpd(mu).item(), abs=1e-12)
    zero = Lo.loss_aux_multitask(torch.zeros(3, 2, 4), torch.zeros(2, 4, 2, 4), [0, 1]).item()
    assert zero == pytest.approx(3 * math.log(4) + 2 * math.log(4))


# ---------------------------------------------------------------- mimicry

def test_kl_q_offline():
    q = rnd(2, 4, 3, 8, seed=10)
    assert Lo.loss_kl_q_offline(q, q.clone(), TAUS).item() == pytest.approx(0, abs=1e-12)
    a, b = rnd(1, 1, 3, 8, seed=11), rnd(1, 1, 3, 8, seed=12)
    assert Lo.loss_kl_q_offline(a, b, TAUS).item() == pytest.approx(Lo.kd_kl(a[0, 0], b[0, 0], 3.0).item())
    qT, qS = rnd(2, 4, 3, 8, seed=13), rnd(2, 4, 3, 8, seed=14)
    assert Lo.loss_kl_q_offline(qT, qS, TAUS).item() == pytest.approx(oracles.kl_q(qT.tolist(), qS.tolist(), 3.0),
                                                                       rel=1e-9)
    with pytest.raises(ValueError):
        Lo.loss_kl_q_offline(rnd(2, 4, 3, 8), rnd(3, 4, 3, 8))


def test_kl_p_offline():
    p = rnd(4, 3, 5, seed=15)
    assert Lo.loss_kl_p_offline(p, p.clone(), TAUS).item() == pytest.approx(0, abs=1e-12)
    a, b = rnd(1, 3, 5, seed=16), rnd(1, 3, 5, seed=17)
    # with a single view this is the plain logit-distillation term
    assert Lo.loss_kl_p_offline(a, b, TAUS).item() == pytest.approx(Lo.kd_kl(a[0], b[0], 3.0).item())
    pT, pS = rnd(4, 3, 5, seed=18), rnd(4, 3, 5, seed=19)
    assert Lo.loss_kl_p_offline(pT, pS, TAUS).item() == pytest.approx(oracles.kl_p(pT.tolist(), pS.tolist(), 3.0),
                                                                       rel=1e-9)


def make_bundle(L, M, B, N, seed):
    return LogitsBundle(rnd(M, B, N, seed=seed), rnd(L, M, B, N * M, seed=seed + 1))


def test_offline_student_examples():
    L, M, B, N = 2, 4, 3, 5
    S, T = make_bundle(L, M, B, N, 20), make_bundle(L, M, B, N, 30)
    y = labels(B, N)
    total, comps = Lo.loss_offline_student(S, S.detach(), y, TAUS)
    assert total.item() == pytest.approx(Lo.loss_task(S.p_logits[0], y).item(), abs=1e-12)
    total, comps = Lo.loss_offline_student(S, T, y, TAUS)
    assert total.item() == pytest.approx(sum(c.item() for c in comps.values()), abs=1e-12)
    expect = oracles.offline_student(S.p_logits.tolist(), S.q_logits.tolist(), T.p_logits.tolist(),
                                     T.q_logits.tolist(), y.tolist(), 1.0, 3.0)
    assert total.item() == pytest.approx(expect, rel=1e-9)


def test_offline_student_first_view_is_vanilla_kd_assembly():
    S, T = make_bundle(2, 4, 3, 5, 40), make_bundle(2, 4, 3, 5, 50)
    y = labels(3, 5)
    total, _ = Lo.loss_offline_student(S, T, y, TAUS, kl_p_views="first")
    expect = (Lo.loss_task(S.p_logits[0], y) + Lo.loss_kl_q_offline(T.q_logits, S.q_logits, TAUS)
              + Lo.kd_kl(T.p_logits[0], S.p_logits[0], 3.0))
    assert total.item() == expect.item()


def test_offline_student_rejects_mismatch():
    with pytest.raises(ValueError):
        Lo.loss_offline_student(make_bundle(2, 4, 3, 5, 1), make_bundle(3, 4, 3, 5, 2), labels(3, 5))


def test_online_examples():
    b = make_bundle(2, 4, 3, 5, 60)
    y = labels(3, 5)
    total, comps = Lo.loss_online([b, LogitsBundle(b.p_logits.clone(), b.q_logits.clone())], y, TAUS)
    single = Lo.loss_task(b.p_logits[0], y) + Lo.loss_aux_ssad(b.q_logits, y, 5, 4, TAUS)
    assert total.item() == pytest.approx(2 * single.item(), rel=1e-12)
    for c in comps:
        assert c["kl_q"].item() == pytest.approx(0, abs=1e-12)
        assert c["kl_p"].item() == pytest.approx(0, abs=1e-12)


def test_online_matches_oracle():
    K, L, M, B, N = 3, 2, 4, 2, 3
    bundles = [make_bundle(L, M, B, N, 70 + 10 * k) for k in range(K)]
    y = labels(B, N)
    total, comps = Lo.loss_online(bundles, y, TAUS)
    expect = oracles.online([b.p_logits.tolist() for b in bundles], [b.q_logits.tolist() for b in bundles],
                            y.tolist(), N, M, 1.0, 3.0)
    assert total.item() == pytest.approx(expect, rel=1e-9)
    assert total.item() == pytest.approx(sum(v.item() for c in comps for v in c.values()), rel=1e-12)


def test_online_term_count(monkeypatch):
    calls = []
    real = Lo.kd_kl

    def counting(t, s, tau):
        calls.append(t.shape[-1])
        return real(t, s, tau)

    monkeypatch.setattr(Lo, "kd_kl", counting)
    K, L, M, B, N = 3, 2, 4, 2, 3
    Lo.loss_online([make_bundle(L, M, B, N, k) for k in range(K)], labels(B, N), TAUS)
    directed = 2 * math.comb(K, 2)
    assert sum(1 for w in calls if w == N * M) == L * M * directed
    assert sum(1 for w in calls if w == N) == M * directed
    assert len(Lo.directed_pairs(K)) == directed


def test_online_rejects_bad_cohorts():
    b = make_bundle(2, 4, 3, 5, 1)
    with pytest.raises(ValueError):
        Lo.loss_online([b], labels(3, 5))
    with pytest.raises(ValueError):
        Lo.loss_online([b, make_bundle(1, 4, 3, 5, 2)], labels(3, 5))
    with pytest.raises(ValueError):
        Lo.loss_online([b, make_bundle(2, 4, 3, 4, 2)], labels(3, 5))


def test_online_target_gets_no_gradient_from_directed_term():
    a, b = make_bundle(2, 4, 3, 5, 80), make_bundle(2, 4, 3, 5, 90)
    for t in (a.p_logits, a.q_logits, b.p_logits, b.q_logits):
        t.requires_grad_()
    kl_q, kl_p = Lo.loss_mimicry(a, b, TAUS)
    grads = torch.autograd.grad(kl_q + kl_p, [b.p_logits, b.q_logits, a.p_logits, a.q_logits],
                                allow_unused=True, retain_graph=True)
    assert all(g is None or torch.count_nonzero(g) == 0 for g in grads[:2])
    assert torch.count_nonzero(grads[2]) > 0 and torch.count_nonzero(grads[3]) > 0
    # perturbing the target changes the value
    bumped = b.p_logits.detach().clone()
    bumped[..., 0] += 0.5
    b2 = LogitsBundle(bumped, b.q_logits.detach())
    assert Lo.loss_mimicry(a, b2, TAUS)[1].item() != pytest.approx(kl_p.item())


def test_online_peer_gradient_comes_only_from_its_own_terms():
    a, b = make_bundle(2, 4, 3, 5, 100), make_bundle(2, 4, 3, 5, 110)
    y = labels(3, 5)
    for t in (b.p_logits, b.q_logits):
        t.requires_grad_()
    total, comps = Lo.loss_online([a, b], y, TAUS)
    g_total = torch.autograd.grad(total, [b.p_logits, b.q_logits], retain_graph=True)
    own = sum(comps[1].values())
    g_own = torch.autograd.grad(own, [b.p_logits, b.q_logits])
    for x, z in zip(g_total, g_own):
        torch.testing.assert_close(x, z, rtol=0, atol=0)


# ---------------------------------------------------------------- gradients

def test_offline_student_gradient_matches_finite_differences():
    L, M, B, N = 2, 4, 2, 3
    T = make_bundle(L, M, B, N, 120)
    pS, qS = rnd(M, B, N, seed=130), rnd(L, M, B, N * M, seed=131)
    y = labels(B, N)

    def f_p(p):
        return Lo.loss_offline_student(LogitsBundle(p, qS), T, y, TAUS)[0]

    def f_q(q):
        return Lo.loss_offline_student(LogitsBundle(pS, q), T, y, TAUS)[0]

    for f, x in ((f_p, pS), (f_q, qS)):
        xg = x.clone().requires_grad_()
        (g,) = torch.autograd.grad(f(xg), [xg])
        assert max_rel_err(g, central_diff(f, x.clone())) < 1e-4


def test_ssad_and_ce_gradients_match_finite_differences():
    q, y = rnd(2, 4, 2, 12, seed=140), labels(2, 3)

    def f(x):
        return Lo.loss_aux_ssad(x, y, 3, 4, Temperatures(1.5, 3.0))

    xg = q.clone().requires_grad_()
    (g,) = torch.autograd.grad(f(xg), [xg])
    assert max_rel_err(g, central_diff(f, q.clone())) < 1e-4


@settings(max_examples=20, deadline=None)
@given(L=st.integers(1, 3), M=st.integers(1, 6), B=st.integers(1, 4), N=st.integers(1, 5),
       seed=st.integers(0, 10_000))
def test_losses_finite_and_nonnegative(L, M, B, N, seed):
    S, T = make_bundle(L, M, B, N, seed), make_bundle(L, M, B, N, seed + 7)
    y = labels(B, N, seed)
    total, comps = Lo.loss_offline_student(S, T, y, TAUS)
    assert math.isfinite(total.item()) and all(c.item() >= -1e-12 for c in comps.values())
    total, _ = Lo.loss_online([S, T], y, TAUS)
    assert math.isfinite(total.item()) and total.item() >= 0
