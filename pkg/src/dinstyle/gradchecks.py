"""Registered finite-difference gradient checks, grouped by scope."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import (
    GradCheckReport,
    Tensor,
    channel_stats,
    grad_check,
    mean,
    relu,
    reshape,
    sqrt,
    square,
    tanh,
)
from .losses import LossConfig, content_loss, loss_terms, style_loss
from .normalization import (
    AffineParams,
    DinParams,
    GeneratorNet,
    OffsetHead,
    adain,
    cin,
    din,
    instance_norm,
)
from .ops import (
    ConvWeight,
    adaptive_avg_pool,
    bilinear_resize,
    conv2d,
    deformable_conv2d,
    depthwise_separable,
    max_pool2d,
    pad2d,
)
from .stylenet import LossNetwork, StyleNet, StyleNetConfig

OPS_TOL = 1e-4
END2END_TOL = 1e-3
# smaller probe for the full network: thousands of ReLUs sit near their kinks
END2END_STEP = 1e-7
# with that probe, round-off in the central difference is about eps * loss / step ~ 2e-8,
# so gradients below END2END_SMALL are judged on absolute error instead
END2END_SMALL = 1e-4
END2END_ABS = 1e-6

Check = Callable[[np.random.Generator], GradCheckReport]
REGISTRY: dict[str, dict[str, Check]] = {"ops": {}, "normalization": {}, "end2end": {}}


def register(scope: str, name: str):
    def deco(fn: Check) -> Check:
        REGISTRY[scope][name] = fn
        return fn

    return deco


def _t(rng, *shape, low=None, high=None) -> Tensor:
    if low is not None:
        return Tensor(rng.uniform(low, high, size=shape))
    return Tensor(rng.normal(size=shape))


def _proj(rng, shape) -> np.ndarray:
    # random projection turns an array output into a generic scalar
    return rng.normal(size=shape)


def _scalar(y: Tensor, w: np.ndarray) -> Tensor:
    return (y * Tensor(w)).sum()


def _check(rng, name, fn, inputs, tol=OPS_TOL) -> GradCheckReport:
    with_proj = {}

    def wrapped(*xs):
        y = fn(*xs)
        if y.size == 1:
            return y.sum()
        if "w" not in with_proj:
            with_proj["w"] = _proj(rng, y.shape)
        return _scalar(y, with_proj["w"])

    return grad_check(wrapped, inputs, rel_tol=tol, name=name)


# ---------------------------------------------------------------------------
# ops


@register("ops", "add_sub_broadcast")
def _(rng):
    return _check(rng, "add_sub_broadcast", lambda a, b: (a + b) * (a - b), [_t(rng, 2, 3, 4), _t(rng, 1, 3, 1)])


@register("ops", "mul_div")
def _(rng):
    return _check(rng, "mul_div", lambda a, b: a * b / b * a / (b * b + Tensor(1.0)),
                  [_t(rng, 2, 3), _t(rng, 2, 3, low=0.5, high=2.0)])


@register("ops", "unary")
def _(rng):
    return _check(rng, "unary", lambda a: tanh(a) + square(a) + sqrt(a * a + Tensor(1.0)) + relu(a - Tensor(0.5)),
                  [_t(rng, 3, 5)])


@register("ops", "mean_reshape")
def _(rng):
    return _check(rng, "mean_reshape", lambda a: mean(reshape(a, (6, 4)), axis=1, keepdims=True) * Tensor(3.0),
                  [_t(rng, 2, 3, 4)])


@register("ops", "channel_stats")
def _(rng):
    def fn(x):
        mu, sd = channel_stats(x)
        return mu * sd + square(sd)
    return _check(rng, "channel_stats", fn, [_t(rng, 2, 3, 4, 5)])


@register("ops", "pad_reflect")
def _(rng):
    return _check(rng, "pad_reflect", lambda x: pad2d(x, 2, "reflect"), [_t(rng, 1, 2, 4, 5)])


@register("ops", "conv2d")
def _(rng):
    return _check(rng, "conv2d", lambda x, k, b: conv2d(x, ConvWeight(k, b, stride=2, padding=1, padding_mode="reflect")),
                  [_t(rng, 2, 4, 6, 6), _t(rng, 5, 4, 3, 3), _t(rng, 5)])


@register("ops", "conv2d_grouped")
def _(rng):
    return _check(rng, "conv2d_grouped", lambda x, k: conv2d(x, ConvWeight(k, groups=2, padding=1)),
                  [_t(rng, 2, 4, 5, 5), _t(rng, 4, 2, 3, 3)])


@register("ops", "conv2d_per_sample")
def _(rng):
    return _check(rng, "conv2d_per_sample", lambda x, k, b: conv2d(x, ConvWeight(k, b, padding=1, padding_mode="reflect")),
                  [_t(rng, 2, 3, 5, 5), _t(rng, 2, 3, 3, 3, 3), _t(rng, 2, 3)])


@register("ops", "depthwise_separable")
def _(rng):
    def fn(x, kd, bd, kp, bp):
        return depthwise_separable(x, ConvWeight(kd, bd, stride=2, padding=1, groups=4), ConvWeight(kp, bp))
    return _check(rng, "depthwise_separable", fn,
                  [_t(rng, 2, 4, 7, 7), _t(rng, 4, 1, 3, 3), _t(rng, 4), _t(rng, 6, 4, 1, 1), _t(rng, 6)])


@register("ops", "deformable_conv2d")
def _(rng):
    # offsets kept away from integer values where bilinear weights have kinks
    off = rng.uniform(-1.4, 1.4, size=(2, 18, 5, 5))
    off = np.where(np.abs(off - np.rint(off)) < 0.05, off + 0.1, off)
    return _check(rng, "deformable_conv2d", lambda x, k, b, o: deformable_conv2d(x, ConvWeight(k, b, padding=1), o),
                  [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4), Tensor(off)])


@register("ops", "bilinear_resize")
def _(rng):
    return _check(rng, "bilinear_resize", lambda x: bilinear_resize(x, 7, 11), [_t(rng, 1, 2, 4, 5)])


@register("ops", "adaptive_avg_pool")
def _(rng):
    return _check(rng, "adaptive_avg_pool", lambda x: adaptive_avg_pool(x, 3, 4), [_t(rng, 2, 2, 7, 9)])


@register("ops", "max_pool2d")
def _(rng):
    return _check(rng, "max_pool2d", max_pool2d, [_t(rng, 1, 2, 6, 6)])


# ---------------------------------------------------------------------------
# normalization family and losses


@register("normalization", "instance_norm")
def _(rng):
    return _check(rng, "instance_norm", instance_norm, [_t(rng, 2, 3, 4, 4)])


@register("normalization", "cin")
def _(rng):
    return _check(rng, "cin", lambda f, g, b: cin(f, AffineParams(g, b)), [_t(rng, 2, 3, 4, 4), _t(rng, 3), _t(rng, 3)])


@register("normalization", "adain")
def _(rng):
    return _check(rng, "adain", adain, [_t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 5, 5)])


@register("normalization", "din_standard")
def _(rng):
    return _check(rng, "din_standard", lambda f, w, b: din(f, DinParams(w, b)),
                  [_t(rng, 2, 3, 5, 5), _t(rng, 2, 3, 3, 3, 3), _t(rng, 2, 3)])


@register("normalization", "din_deformable")
def _(rng):
    off = rng.uniform(-0.8, 0.8, size=(1, 2, 4, 4))
    return _check(rng, "din_deformable", lambda f, w, b, o: din(f, DinParams(w, b, "deformable"), o),
                  [_t(rng, 1, 3, 4, 4), _t(rng, 3, 3, 1, 1), _t(rng, 3), Tensor(off)])


@register("normalization", "din_spatially_adaptive")
def _(rng):
    return _check(rng, "din_spatially_adaptive", lambda f, w, b: din(f, DinParams(w, b, "spatially_adaptive")),
                  [_t(rng, 2, 2, 6, 6), _t(rng, 2, 2, 1, 4, 4), _t(rng, 2, 2)])


@register("normalization", "generator")
def _(rng):
    gen = GeneratorNet("g", in_channels=3, channels=2, kernel=3, hidden=4)
    gen.init_params(rng)
    for t in gen.params.values():
        t.data[...] = rng.normal(size=t.shape) * 0.5
    names = sorted(gen.params)

    def fn(fs, *ps):
        p = gen(fs)
        return reshape(p.weight, (2, -1)).sum() * Tensor(0.3) + square(p.bias).sum()

    return grad_check(fn, [_t(rng, 2, 3, 6, 6)] + [gen.params[n] for n in names], rel_tol=OPS_TOL, name="generator")


@register("normalization", "offset_head")
def _(rng):
    head = OffsetHead("o", channels=2, kernel=1)
    head.init_params(rng)
    for t in head.params.values():
        t.data[...] = rng.normal(size=t.shape) * 0.3
    w = _proj(rng, (1, 2, 4, 4))
    return grad_check(lambda x, *ps: _scalar(head(x), w), [_t(rng, 1, 2, 4, 4)] + list(head.params.values()),
                      rel_tol=OPS_TOL, name="offset_head")


@register("normalization", "content_loss")
def _(rng):
    return _check(rng, "content_loss", content_loss, [_t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)])


@register("normalization", "style_loss")
def _(rng):
    return _check(rng, "style_loss", lambda a, b, c, d: style_loss([a, b], [c, d]),
                  [_t(rng, 2, 3, 4, 4), _t(rng, 2, 5, 2, 2), _t(rng, 2, 3, 6, 6), _t(rng, 2, 5, 3, 3)])


# ---------------------------------------------------------------------------
# end to end


def end2end_check(rng: np.random.Generator, per_tensor: int = 2, size: int = 32,
                  config: StyleNetConfig | None = None) -> GradCheckReport:
    """Total loss of a freshly initialized network at ``size`` x ``size``.

    Every network parameter tensor is checked at ``per_tensor`` random
    positions, as are the content and style images.
    """
    config = config or StyleNetConfig()
    net = StyleNet(config, seed=int(rng.integers(2**31)))
    for name, p in net.params.items():
        # zero-initialized offsets sample exactly on the grid, where bilinear
        # interpolation has a kink; move them to generic positions
        if ".offset." in name:
            p.data[...] = rng.normal(0.0, 0.05, size=p.shape)
    loss_net = LossNetwork(seed=int(rng.integers(2**31)))
    content = Tensor(rng.uniform(0, 1, size=(1, 3, size, size)))
    style = Tensor(rng.uniform(0, 1, size=(1, 3, size, size)))
    names = sorted(net.params)
    xs = [net.params[n] for n in names] + [content, style]
    idx = [rng.choice(x.size, size=min(per_tensor, x.size), replace=False) for x in xs]
    cfg = LossConfig()

    def fn(*_):
        return loss_terms(content, style, net.stylize(content, style), loss_net, cfg).total

    return grad_check(fn, xs, rel_tol=END2END_TOL, indices=idx,
                      name=f"end2end_{config.conv_type}_w{config.base_width}_{size}x{size}", step=END2END_STEP,
                      small=END2END_SMALL, abs_tol=END2END_ABS)


@register("end2end", "stylenet_total_loss")
def _(rng):
    return end2end_check(rng)


@register("end2end", "deformable_narrow")
def _(rng):
    return end2end_check(rng, config=StyleNetConfig(base_width=8, conv_type="deformable", din_kernel=3), per_tensor=1)


@register("end2end", "spatially_adaptive_narrow")
def _(rng):
    return end2end_check(rng, config=StyleNetConfig(base_width=8, conv_type="spatially_adaptive"), per_tensor=1)


def run_scope(scope: str, seed: int = 0) -> list[GradCheckReport]:
    if scope not in REGISTRY:
        raise KeyError(f"unknown gradcheck scope {scope!r}; choose from {sorted(REGISTRY)}")
    reports = []
    for i, (name, check) in enumerate(REGISTRY[scope].items()):
        reports.append(check(np.random.default_rng([seed, i])))
    return reports
