import numpy as np
import pytest

from dinstyle.autodiff import ShapeError, Tensor, channel_stats
from dinstyle.normalization import (
    AffineParams,
    DinParams,
    GeneratorNet,
    OffsetHead,
    adain,
    adain_params,
    cin,
    diagonal_params,
    din,
    generate_din_params,
    identity_params,
    instance_norm,
    odd_ceil,
)

from oracles import instance_norm_naive


def _rand(rng, *shape, scale=1.0, shift=0.0):
    return Tensor(rng.normal(shift, scale, size=shape))


def test_instance_norm_matches_naive():
    x = np.random.default_rng(0).normal(2.0, 3.0, size=(2, 3, 5, 4))
    np.testing.assert_allclose(instance_norm(Tensor(x)).data, instance_norm_naive(x), atol=1e-12)


def test_instance_norm_uniform_channel_is_zero():
    x = Tensor(np.full((1, 2, 4, 4), 7.5))
    np.testing.assert_array_equal(instance_norm(x).data, 0.0)


@pytest.mark.parametrize("k", [1, 3])
def test_identity_din_is_instance_norm(k):
    rng = np.random.default_rng(k)
    x = _rand(rng, 2, 4, 6, 6, scale=2.0, shift=1.0)
    np.testing.assert_allclose(din(x, identity_params(4, k)).data, instance_norm(x).data, atol=1e-12)


def test_diagonal_din_is_cin():
    rng = np.random.default_rng(1)
    x = _rand(rng, 2, 3, 5, 5)
    gamma, beta = _rand(rng, 3), _rand(rng, 3)
    got = din(x, diagonal_params(gamma, beta)).data
    np.testing.assert_array_equal(got, cin(x, AffineParams(gamma, beta)).data)


def test_stat_diagonal_din_is_adain():
    rng = np.random.default_rng(2)
    fc, fs = _rand(rng, 2, 3, 5, 5), _rand(rng, 2, 3, 7, 7, scale=3.0, shift=-1.0)
    np.testing.assert_allclose(din(fc, adain_params(fs)).data, adain(fc, fs).data, atol=1e-9)


def test_adain_output_carries_style_stats():
    rng = np.random.default_rng(3)
    fc, fs = _rand(rng, 1, 2, 8, 8), _rand(rng, 1, 2, 6, 6, scale=4.0, shift=2.0)
    mu_o, sd_o = channel_stats(adain(fc, fs), eps=0.0)
    mu_s, sd_s = channel_stats(fs, eps=1e-5)
    np.testing.assert_allclose(mu_o.data, mu_s.data, atol=1e-10)
    np.testing.assert_allclose(sd_o.data, sd_s.data, rtol=1e-5)


def test_din_channel_mismatch():
    with pytest.raises(ShapeError):
        din(Tensor(np.zeros((1, 3, 4, 4))), identity_params(4))


def test_din_params_validation():
    with pytest.raises(ShapeError):
        DinParams(Tensor(np.zeros((3, 2, 1, 1))), Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        DinParams(Tensor(np.zeros((3, 3, 1, 1))), Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        DinParams(Tensor(np.zeros((3, 3, 1, 1))), Tensor(np.zeros(3)), "bogus")


def test_batch_one_params_broadcast():
    rng = np.random.default_rng(4)
    x = _rand(rng, 3, 2, 4, 4)
    p = DinParams(_rand(rng, 1, 2, 2, 1, 1), _rand(rng, 1, 2))
    shared = DinParams(Tensor(p.weight.data[0]), Tensor(p.bias.data[0]))
    np.testing.assert_allclose(din(x, p).data, din(x, shared).data, atol=1e-14)


def test_deformable_zero_offsets_equal_standard():
    rng = np.random.default_rng(5)
    x = _rand(rng, 2, 3, 6, 6)
    w, b = _rand(rng, 3, 3, 3, 3), _rand(rng, 3)
    std = din(x, DinParams(w, b, "standard")).data
    # reflection vs zero padding differ at the border; compare the interior
    dfm = din(x, DinParams(w, b, "deformable")).data
    np.testing.assert_allclose(dfm[..., 1:-1, 1:-1], std[..., 1:-1, 1:-1], atol=1e-12)
    w1, b1 = _rand(rng, 3, 3, 1, 1), _rand(rng, 3)
    np.testing.assert_allclose(din(x, DinParams(w1, b1, "deformable")).data,
                               din(x, DinParams(w1, b1)).data, atol=1e-12)


def test_odd_ceil():
    assert [odd_ceil(n) for n in (1, 2, 7, 8)] == [1, 3, 7, 9]


def _uniform_region_map():
    # channel 0 is a random map whose centre block equals the channel mean,
    # so instance norm is exactly zero there
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 2, 16, 16))
    region = (slice(4, 12), slice(4, 12))
    for c in range(2):
        ch = x[0, c]
        mask = np.zeros_like(ch, dtype=bool)
        mask[region] = True
        outside = ch[~mask]
        ch[mask] = outside.mean()
    return Tensor(x), region


def test_standard_din_zero_on_uniform_region():
    x, region = _uniform_region_map()
    rng = np.random.default_rng(7)
    p = DinParams(_rand(rng, 2, 2, 1, 1), Tensor(np.zeros(2)))
    y = din(x, p).data
    np.testing.assert_allclose(y[0][:, region[0], region[1]], 0.0, atol=1e-12)


def test_spatially_adaptive_din_varies_on_uniform_region():
    x, region = _uniform_region_map()
    rng = np.random.default_rng(8)
    p = DinParams(_rand(rng, 2, 1, 4, 4), Tensor(np.zeros(2)), "spatially_adaptive")
    y = din(x, p).data
    assert y[0][:, region[0], region[1]].var(axis=(1, 2)).min() > 1e-6


def test_spatially_adaptive_constant_kernel_on_uniform_channel():
    x = Tensor(np.full((1, 2, 8, 8), 3.0))
    p = DinParams(Tensor(np.ones((2, 1, 4, 4))), Tensor(np.array([0.5, -1.0])), "spatially_adaptive")
    y = din(x, p).data
    np.testing.assert_allclose(y[0, 0], 0.5)
    np.testing.assert_allclose(y[0, 1], -1.0)


def test_spatially_adaptive_kernel_resized_to_map():
    rng = np.random.default_rng(9)
    p = DinParams(_rand(rng, 1, 3, 1, 4, 4), _rand(rng, 1, 3), "spatially_adaptive")
    fitted = p.fit_spatial(10, 10)
    assert fitted.kernel_size == (11, 11)
    assert din(_rand(rng, 1, 3, 10, 10), p).shape == (1, 3, 10, 10)


@pytest.mark.parametrize("conv_type,k", [("standard", 1), ("standard", 3), ("deformable", 3), ("spatially_adaptive", 1)])
def test_generator_shapes(conv_type, k):
    rng = np.random.default_rng(10)
    gen = GeneratorNet("g", in_channels=5, channels=4, conv_type=conv_type, kernel=k)
    gen.init_params(rng)
    assert set(gen.params) == set(gen.param_shapes())
    p = gen(_rand(rng, 2, 5, 9, 7))
    if conv_type == "spatially_adaptive":
        assert p.weight.shape == (2, 4, 1, 4, 4)
    else:
        assert p.weight.shape == (2, 4, 4, k, k)
    assert p.bias.shape == (2, 4)


def test_generator_starts_near_identity():
    rng = np.random.default_rng(11)
    gen = GeneratorNet("g", in_channels=3, channels=3)
    gen.init_params(rng)
    p = gen(_rand(rng, 1, 3, 8, 8))
    np.testing.assert_allclose(p.weight.data[0, :, :, 0, 0], np.eye(3), atol=0.1)


def test_generator_input_validation():
    gen = GeneratorNet("g", in_channels=3, channels=3)
    gen.init_params(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        generate_din_params(Tensor(np.zeros((1, 4, 8, 8))), gen)
    with pytest.raises(ShapeError):
        generate_din_params(Tensor(np.zeros((1, 3, 3, 3))), gen)


def test_offset_head_bounded_and_zero_at_init():
    rng = np.random.default_rng(12)
    head = OffsetHead("o", channels=2, kernel=3)
    head.init_params(rng)
    x = _rand(rng, 1, 2, 5, 5)
    np.testing.assert_array_equal(head(x).data, 0.0)
    for t in head.params.values():
        t.data[...] = rng.normal(size=t.shape) * 50
    assert np.abs(head(x).data).max() <= 3.0
