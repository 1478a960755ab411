import pytest
import torch

from hssakd import models as Mo
from hssakd.transforms import rotation_views


def tiny(aux="ssad", **kw):
    torch.manual_seed(0)
    return Mo.HierarchicalNet(Mo.tiny_resnet_spec(10, aux_task=aux, **kw))


def conv(cin, cout, k):
    return cin * cout * k * k


def hand_params_tiny_resnet(widths=(8, 16, 32), N=10, cin=3):
    """Layer-by-layer count for one post-activation block per stage."""
    total = conv(cin, widths[0], 3) + 2 * widths[0]
    prev = widths[0]
    for w in widths:
        total += conv(prev, w, 3) + conv(w, w, 3) + 4 * w
        if prev != w:
            total += conv(prev, w, 1) + 2 * w
        prev = w
    return total + prev * N + N


def hand_macs_tiny_resnet(widths=(8, 16, 32), N=10, cin=3, size=16):
    s = size
    total = s * s * conv(cin, widths[0], 3)
    prev = widths[0]
    for i, w in enumerate(widths):
        if i > 0:
            s //= 2
        total += s * s * (conv(prev, w, 3) + conv(w, w, 3))
        if prev != w:
            total += s * s * conv(prev, w, 1)
        prev = w
    return total + prev * N


def test_tiny_cost_matches_hand_count():
    cost = Mo.deployed_cost(tiny())
    assert cost["params"] == hand_params_tiny_resnet() == 19954
    assert cost["macs"] == hand_macs_tiny_resnet() == 809280


def test_branch_construction_rule():
    net = tiny()
    spec = net.spec
    assert spec.L == 3 and len(net.branches) == 3
    assert Mo.branch_stages(spec, 0) == list(spec.stages[1:])
    assert Mo.branch_stages(spec, 1) == [spec.stages[2]]
    last = Mo.branch_stages(spec, 2)
    assert len(last) == 1 and last[0].stride == 1 and last[0].channels == spec.stages[-1].channels
    assert last[0].num_blocks == spec.stages[-1].num_blocks


@pytest.mark.parametrize("name", Mo.REFERENCE_BACKBONES)
def test_downsampling_trace(name):
    net = Mo.build_reference_backbone(name, 10)
    trace = Mo.trace_downsampling(net)
    assert set(trace) == {"backbone", 0, 1, 2}
    assert all(v == trace["backbone"] for v in trace.values())


def test_forward_views_shapes_and_finite():
    net = tiny()
    x = torch.randn(5, 3, 16, 16)
    b = net.forward_views(rotation_views(x))
    assert b.p_logits.shape == (4, 5, 10)
    assert b.q_logits.shape == (3, 4, 5, 40)
    assert torch.isfinite(b.p_logits).all() and torch.isfinite(b.q_logits).all()


@pytest.mark.parametrize("aux,key,shape", [
    ("scpd", "scpd_logits", (3, 5, 10)),
    ("sscpd", "mu_logits", (3, 4, 5, 4)),
    ("multitask", "mu_logits", (3, 4, 5, 4)),
])
def test_ablation_heads(aux, key, shape):
    net = tiny(aux)
    b = net.forward_views(rotation_views(torch.randn(5, 3, 16, 16)))
    assert getattr(b, key).shape == shape
    if aux == "multitask":
        assert b.scpd_logits.shape == (3, 5, 10)


def test_aux_task_changes_only_heads():
    shapes = {}
    for aux in ("scpd", "sscpd", "ssad"):
        net = tiny(aux)
        shapes[aux] = {k: v.shape for k, v in net.branches.state_dict().items() if ".heads." not in k}
    assert shapes["scpd"] == shapes["sscpd"] == shapes["ssad"]
    assert tiny("ssad").branches[0].heads["q"].out_features == 40


def test_deploy_forward_matches_view0_slice():
    net = tiny().double().eval()
    x = torch.randn(3, 3, 16, 16, dtype=torch.float64)
    b = net.forward_views(rotation_views(x))
    # same computation; CPU kernels block by batch size, so allow 1-ulp drift
    torch.testing.assert_close(net(x), b.p_logits[0], rtol=1e-12, atol=1e-12)


def test_deployed_cost_ignores_branches():
    with_b = Mo.deployed_cost(tiny("ssad"))
    without = Mo.deployed_cost(tiny("none"))
    assert with_b == without
    deployed = Mo.deployed_copy(tiny("ssad"))
    assert not any(k.startswith("branches.") for k in deployed.state_dict())
    assert Mo.deployed_cost(deployed) == without


def test_deployed_network_rejects_views():
    net = tiny().deploy()
    with pytest.raises(RuntimeError):
        net.forward_views(rotation_views(torch.randn(1, 3, 16, 16)))


def test_view_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        tiny().forward_views(rotation_views(torch.randn(1, 3, 8, 8)))


def test_unknown_backbone():
    with pytest.raises(ValueError):
        Mo.build_reference_backbone("vgg13", 100)


def test_tiny_limits():
    with pytest.raises(ValueError):
        Mo.tiny_resnet_spec(10, width=(16, 32, 64))


def test_spec_roundtrip():
    spec = Mo.reference_spec("wrn40_2_cifar", 100)
    assert Mo.NetworkSpec.from_dict(spec.to_dict()) == spec


def test_wrn_and_resnet_param_counts():
    assert round(Mo.deployed_cost(Mo.build_reference_backbone("resnet56_cifar", 100))["params"] / 1e6, 2) == 0.86
    wrn = Mo.deployed_cost(Mo.build_reference_backbone("wrn40_2_cifar", 100))
    assert round(wrn["params"] / 1e6, 2) == 2.26
    assert abs(wrn["macs"] - 330e6) / 330e6 < 0.10
