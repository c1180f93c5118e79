import numpy as np
import pytest

from dinstyle import checkpoint
from dinstyle.autodiff import ShapeError, Tape, Tensor, backward
from dinstyle.losses import total_loss
from dinstyle.stylenet import (
    ArchitectureMismatch,
    LossNetwork,
    StyleCode,
    StyleNet,
    StyleNetConfig,
    apply_style,
    build_default_network,
    forward_stylize,
    precompute_style,
)


@pytest.fixture(scope="module")
def net():
    return StyleNet(seed=0)


def _img(seed, h, w, n=1):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, size=(n, 3, h, w)))


@pytest.mark.parametrize("hw", [32, 64, 96, 128])
def test_resolution_invariance(net, hw):
    out = forward_stylize(_img(1, hw, hw), _img(2, 48, 80), net)
    assert out.shape == (1, 3, hw, hw)
    assert np.all(np.isfinite(out.data))


def test_non_square_content(net):
    assert net.stylize(_img(0, 32, 48), _img(1, 40, 40)).shape == (1, 3, 32, 48)


def test_content_constraints(net):
    with pytest.raises(ShapeError, match="divisible by 4"):
        net.stylize(_img(0, 34, 32), _img(1, 32, 32))
    with pytest.raises(ShapeError, match="at least 32"):
        net.stylize(_img(0, 28, 28), _img(1, 32, 32))


def test_precompute_then_apply_equals_direct(net):
    c, s = _img(3, 32, 32), _img(4, 64, 64)
    code = precompute_style(s, net, "x")
    np.testing.assert_array_equal(apply_style(c, code, net).data, net.stylize(c, s).data)


def test_style_code_round_trip(net, tmp_path):
    code = net.precompute(_img(5, 32, 32), "s")
    code.save(tmp_path / "c.dinc")
    back = StyleCode.load(tmp_path / "c.dinc")
    assert back.style_id == "s" and len(back.levels) == 3
    narrowed = code.narrowed()
    for a, b in zip(back.levels, narrowed.levels):
        np.testing.assert_array_equal(a.weight.data, b.weight.data)
        np.testing.assert_array_equal(a.bias.data, b.bias.data)


def test_style_code_rejects_weights_file(net):
    with pytest.raises(checkpoint.CheckpointError):
        StyleCode.from_tensors(net.state_tensors())


def test_state_round_trip(net, tmp_path):
    checkpoint.save(tmp_path / "w.dinc", net.state_tensors())
    other = StyleNet.from_tensors(checkpoint.load(tmp_path / "w.dinc"))
    for k, t in net.params.items():
        np.testing.assert_array_equal(other.params[k].data, checkpoint.narrow(t.data))


def test_architecture_mismatch(net):
    tensors = net.state_tensors()
    with pytest.raises(ArchitectureMismatch):
        StyleNet.from_tensors(tensors, StyleNetConfig(base_width=16))
    del tensors["meta.arch"]
    with pytest.raises(ArchitectureMismatch):
        StyleNet.from_tensors(tensors)
    broken = net.state_tensors()
    broken["enc.conv_in.bias"] = np.zeros(5)
    with pytest.raises(ArchitectureMismatch):
        StyleNet.from_tensors(broken)


def test_seeded_init_is_deterministic():
    a, b = StyleNet(StyleNetConfig(base_width=8), seed=3), StyleNet(StyleNetConfig(base_width=8), seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


@pytest.mark.parametrize("cfg", [
    StyleNetConfig(base_width=8, conv_type="deformable", din_kernel=3),
    StyleNetConfig(base_width=8, conv_type="spatially_adaptive"),
    StyleNetConfig(base_width=8, din_kernel=3),
    StyleNetConfig(base_width=8, din_levels=1),
    StyleNetConfig(base_width=8, mode="adain"),
    StyleNetConfig(base_width=8, style_encoder="vgg"),
])
def test_variants_run_and_propagate_gradients(cfg):
    net = StyleNet(cfg, seed=1)
    loss_net = LossNetwork(seed=2)
    c, s = _img(6, 32, 32, n=2), _img(7, 40, 40, n=2)
    with Tape() as tape:
        loss = total_loss(c, s, net.stylize(c, s), loss_net)
    backward(loss, tape)
    assert np.isfinite(loss.item())
    # every generator parameter receives gradient through the style path
    for name, p in net.params.items():
        if name.startswith("gen"):
            assert p.grad is not None and np.any(p.grad != 0), name


def test_autoencode_ignores_style(net):
    assert net.autoencode(_img(8, 32, 32)).shape == (1, 3, 32, 32)


def test_config_validation():
    for bad in (dict(base_width=0), dict(din_levels=4), dict(conv_type="x"), dict(din_kernel=2),
                dict(mode="adain", style_encoder="vgg")):
        with pytest.raises(ValueError):
            build_default_network(StyleNetConfig(**bad))


def test_param_count_is_small(net):
    assert sum(p.size for p in net.params.values()) < 5_000_000
