"""Instance-normalization family: IN, CIN, AdaIN and dynamic IN (DIN).

DIN normalizes the content features and then applies a convolution whose
kernel and bias come from a style-conditioned generator. IN, CIN and AdaIN
fall out of DIN for particular kernels, which the test-suite checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import DEFAULT_EPS, ShapeError, Tensor, channel_stats, make_op, relu, reshape, tanh
from .ops import ConvWeight, adaptive_avg_pool, bilinear_resize, conv2d, deformable_conv2d

CONV_TYPES = ("standard", "deformable", "spatially_adaptive")


def instance_norm(f: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    mu, sd = channel_stats(f, eps)
    return (f - mu) / sd


@dataclass
class AffineParams:
    gamma: Tensor
    beta: Tensor

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError("gamma and beta must be 1-D of equal length")


def cin(f: Tensor, params: AffineParams, eps: float = DEFAULT_EPS) -> Tensor:
    c = f.shape[1]
    if params.gamma.shape[0] != c:
        raise ShapeError(f"affine params have {params.gamma.shape[0]} channels, features have {c}")
    g = reshape(params.gamma, (1, c, 1, 1))
    b = reshape(params.beta, (1, c, 1, 1))
    return g * instance_norm(f, eps) + b


def adain(f_c: Tensor, f_s: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    if f_c.shape[1] != f_s.shape[1]:
        raise ShapeError(f"content has {f_c.shape[1]} channels, style has {f_s.shape[1]}")
    mu, sd = channel_stats(f_s, eps)
    return sd * instance_norm(f_c, eps) + mu


# ---------------------------------------------------------------------------
# dynamic parameters


def odd_ceil(n: int) -> int:
    return n if n % 2 else n + 1


@dataclass
class DinParams:
    """Generated kernel and bias for one DIN layer.

    ``weight`` is shared (4-D) or per-sample (5-D, leading batch axis); bias
    follows suit as ``[C]`` or ``[N, C]``. Spatially-adaptive kernels are
    depthwise, ``[.., C, 1, kH, kW]``.
    """

    weight: Tensor
    bias: Tensor
    conv_type: str = "standard"

    def __post_init__(self):
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"unknown conv_type {self.conv_type!r}")
        if self.weight.ndim not in (4, 5):
            raise ShapeError(f"DIN weight must be 4-D or 5-D, got {self.weight.shape}")
        if self.bias.ndim != self.weight.ndim - 3:
            raise ShapeError(f"DIN bias {self.bias.shape} does not match weight {self.weight.shape}")
        cout, cg = self.weight.shape[-4:-2]
        if self.bias.shape[-1] != cout:
            raise ShapeError("bias length must equal the kernel's output channels")
        if self.conv_type == "spatially_adaptive" and cg != 1:
            raise ShapeError("spatially-adaptive kernels are depthwise ([C, 1, kH, kW])")
        if self.conv_type != "spatially_adaptive" and cg != cout:
            raise ShapeError("standard/deformable DIN kernels must be [C, C, k, k]")

    @property
    def channels(self) -> int:
        return self.weight.shape[-4]

    @property
    def batched(self) -> bool:
        return self.weight.ndim == 5

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[-2], self.weight.shape[-1]

    def expand(self, n: int) -> "DinParams":
        """Broadcast single-style params over a batch of ``n`` contents."""
        if not self.batched:
            return self
        if self.weight.shape[0] == n:
            return self
        if self.weight.shape[0] != 1:
            raise ShapeError(f"params batch {self.weight.shape[0]} cannot serve {n} inputs")
        return DinParams(_repeat_batch(self.weight, n), _repeat_batch(self.bias, n), self.conv_type)

    def fit_spatial(self, h: int, w: int) -> "DinParams":
        """Resize a spatially-adaptive base kernel to cover an ``h x w`` map."""
        kh, kw = odd_ceil(h), odd_ceil(w)
        if self.kernel_size == (kh, kw):
            return self
        wt = self.weight
        shape = wt.shape
        flat = reshape(wt, (-1, shape[-4], shape[-2], shape[-1]))
        flat = bilinear_resize(flat, kh, kw)
        return DinParams(reshape(flat, shape[:-2] + (kh, kw)), self.bias, self.conv_type)

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def _repeat_batch(t: Tensor, n: int) -> Tensor:
    reps = (n,) + (1,) * (t.ndim - 1)
    return make_op("repeat_batch", np.tile(t.data, reps), (t,), lambda g: (g.sum(axis=0, keepdims=True),))


def identity_params(channels: int, kernel: int = 1) -> DinParams:
    w = np.zeros((channels, channels, kernel, kernel))
    w[np.arange(channels), np.arange(channels), kernel // 2, kernel // 2] = 1.0
    return DinParams(Tensor(w), Tensor(np.zeros(channels)))


def diagonal_params(scale: Tensor, shift: Tensor) -> DinParams:
    """1x1 kernel with ``scale`` on the diagonal.

    Accepts ``[C]`` (shared) or ``[N, C]`` (per-sample) inputs; the result is
    the CIN (constant) or AdaIN (style statistics) special case of DIN.
    """
    c = scale.shape[-1]
    eye = np.eye(c)
    if scale.ndim == 1:
        w = make_op(
            "diag", eye * scale.data[None, :], (scale,), lambda g: (np.diagonal(g).copy(),)
        )
        return DinParams(reshape(w, (c, c, 1, 1)), shift)
    n = scale.shape[0]
    w = make_op(
        "diag",
        eye[None] * scale.data[:, None, :],
        (scale,),
        lambda g: (np.diagonal(g, axis1=1, axis2=2).copy(),),
    )
    return DinParams(reshape(w, (n, c, c, 1, 1)), shift)


def adain_params(f_s: Tensor, eps: float = DEFAULT_EPS) -> DinParams:
    mu, sd = channel_stats(f_s, eps)
    n, c = f_s.shape[:2]
    return diagonal_params(reshape(sd, (n, c)), reshape(mu, (n, c)))


# ---------------------------------------------------------------------------
# DIN application


def _standard_din(x: Tensor, params: DinParams) -> Tensor:
    k = params.kernel_size[0]
    return conv2d(x, ConvWeight(params.weight, params.bias, padding=(k - 1) // 2, padding_mode="reflect"))


def spatially_adaptive_din(f_c: Tensor, params: DinParams, eps: float = DEFAULT_EPS) -> Tensor:
    """DIN with a depthwise kernel as large as the feature map itself.

    The kernel must be ``odd_ceil(H) x odd_ceil(W)``; reflection padding keeps
    the output the same size as the input.
    """
    h, w = f_c.shape[2:]
    kh, kw = params.kernel_size
    if params.conv_type != "spatially_adaptive":
        raise ValueError(f"expected spatially_adaptive params, got {params.conv_type}")
    if (kh, kw) != (odd_ceil(h), odd_ceil(w)):
        raise ShapeError(f"kernel {kh}x{kw} does not match feature map {h}x{w} (needs {odd_ceil(h)}x{odd_ceil(w)})")
    if kh != kw:
        raise ShapeError("spatially-adaptive DIN needs a square feature map")
    x = instance_norm(f_c, eps)
    params = params.expand(f_c.shape[0])
    cw = ConvWeight(params.weight, params.bias, padding=(kh - 1) // 2, padding_mode="reflect", groups=f_c.shape[1])
    return conv2d(x, cw)


def din(
    f_c: Tensor,
    params: DinParams,
    offsets: Optional[Tensor] = None,
    eps: float = DEFAULT_EPS,
) -> Tensor:
    """Instance-normalize ``f_c`` then apply the dynamic convolution in ``params``."""
    if f_c.shape[1] != params.channels:
        raise ShapeError(f"features have {f_c.shape[1]} channels, params expect {params.channels}")
    if params.conv_type == "spatially_adaptive":
        return spatially_adaptive_din(f_c, params.fit_spatial(*f_c.shape[2:]), eps)
    params = params.expand(f_c.shape[0])
    x = instance_norm(f_c, eps)
    if params.conv_type == "standard":
        if offsets is not None:
            raise ValueError("offsets are only meaningful for deformable DIN")
        return _standard_din(x, params)
    k = params.kernel_size[0]
    n, _, h, w = f_c.shape
    if offsets is None:
        offsets = Tensor(np.zeros((n, 2 * k * k, h, w)))
    return deformable_conv2d(x, ConvWeight(params.weight, params.bias, padding=(k - 1) // 2), offsets)


# ---------------------------------------------------------------------------
# weight / bias generators


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class GeneratorNet:
    """Weight and bias networks producing :class:`DinParams` for one DIN level.

    Each network pools the style features to a fixed 4x4 grid, applies a 3x3
    conv + ReLU, and ends in a 1x1 head sized for the target parameters.
    Parameters live in the shared ``params`` mapping under ``prefix``.
    """

    prefix: str
    in_channels: int
    channels: int
    conv_type: str = "standard"
    kernel: int = 1
    hidden: Optional[int] = None
    grid: int = 4
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"unknown conv_type {self.conv_type!r}")
        if self.hidden is None:
            self.hidden = self.channels
        if self.conv_type == "spatially_adaptive":
            self.kernel = self.grid

    @property
    def weight_elems(self) -> int:
        if self.conv_type == "spatially_adaptive":
            return self.channels
        return self.channels * self.channels * self.kernel * self.kernel

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h, c = self.hidden, self.channels
        shapes = {}
        for net, head in (("weight_net", self.weight_elems), ("bias_net", c)):
            shapes[f"{self.prefix}.{net}.conv.weight"] = (h, self.in_channels, 3, 3)
            shapes[f"{self.prefix}.{net}.conv.bias"] = (h,)
            shapes[f"{self.prefix}.{net}.head.weight"] = (head, h, 1, 1)
            shapes[f"{self.prefix}.{net}.head.bias"] = (head,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        h, c, k = self.hidden, self.channels, self.kernel
        out = {}
        for net in ("weight_net", "bias_net"):
            p = f"{self.prefix}.{net}"
            out[f"{p}.conv.weight"] = _he(rng, (h, self.in_channels, 3, 3), self.in_channels * 9)
            out[f"{p}.conv.bias"] = np.zeros(h)
        # heads start small so the generated layer begins near its base value
        out[f"{self.prefix}.weight_net.head.weight"] = rng.normal(0.0, 0.01 / np.sqrt(h), size=(self.weight_elems, h, 1, 1))
        out[f"{self.prefix}.bias_net.head.weight"] = rng.normal(0.0, 0.01 / np.sqrt(h), size=(c, h, 1, 1))
        out[f"{self.prefix}.bias_net.head.bias"] = np.zeros(c)
        if self.conv_type == "spatially_adaptive":
            out[f"{self.prefix}.weight_net.head.bias"] = np.zeros(c)
        else:
            out[f"{self.prefix}.weight_net.head.bias"] = identity_params(c, k).weight.data.reshape(-1)
        tensors = {name: Tensor(v, requires_grad=True) for name, v in out.items()}
        self.params.update(tensors)
        return tensors

    def _run(self, net: str, f_s: Tensor, pool_to_one: bool) -> Tensor:
        p = self.params
        pre = f"{self.prefix}.{net}"
        x = adaptive_avg_pool(f_s, self.grid, self.grid)
        x = relu(conv2d(x, ConvWeight(p[f"{pre}.conv.weight"], p[f"{pre}.conv.bias"], padding=1, padding_mode="reflect")))
        if pool_to_one:
            x = adaptive_avg_pool(x, 1, 1)
        return conv2d(x, ConvWeight(p[f"{pre}.head.weight"], p[f"{pre}.head.bias"]))

    def __call__(self, f_s: Tensor) -> DinParams:
        return generate_din_params(f_s, self, self.conv_type)


def generate_din_params(f_s: Tensor, gen: GeneratorNet, conv_type: Optional[str] = None) -> DinParams:
    """Run the weight and bias networks of ``gen`` on style features ``f_s``."""
    conv_type = conv_type or gen.conv_type
    if conv_type != gen.conv_type:
        raise ValueError(f"generator was built for {gen.conv_type}, asked for {conv_type}")
    if f_s.ndim != 4 or f_s.shape[1] != gen.in_channels:
        raise ShapeError(f"style features {f_s.shape} do not match generator input channels {gen.in_channels}")
    if f_s.shape[2] < gen.grid or f_s.shape[3] < gen.grid:
        raise ShapeError(f"style features {f_s.shape[2]}x{f_s.shape[3]} smaller than the {gen.grid}x{gen.grid} pooling grid")
    n, c, k = f_s.shape[0], gen.channels, gen.kernel
    bias = reshape(gen._run("bias_net", f_s, True), (n, c))
    if conv_type == "spatially_adaptive":
        w = gen._run("weight_net", f_s, False)  # [N, C, grid, grid]
        weight = reshape(w, (n, c, 1, gen.grid, gen.grid))
    else:
        weight = reshape(gen._run("weight_net", f_s, True), (n, c, c, k, k))
    return DinParams(weight, bias, conv_type)


@dataclass
class OffsetHead:
    """Content-driven offset field for deformable DIN, bounded by ``tanh``."""

    prefix: str
    channels: int
    kernel: int
    params: dict = field(default_factory=dict, repr=False)

    @property
    def out_channels(self) -> int:
        return 2 * self.kernel * self.kernel

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            f"{self.prefix}.weight": (self.out_channels, self.channels, 3, 3),
            f"{self.prefix}.bias": (self.out_channels,),
        }

    def init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        # zero weights: deformation starts switched off
        t = {
            f"{self.prefix}.weight": Tensor(np.zeros((self.out_channels, self.channels, 3, 3)), requires_grad=True),
            f"{self.prefix}.bias": Tensor(np.zeros(self.out_channels), requires_grad=True),
        }
        self.params.update(t)
        return t

    def __call__(self, normalized: Tensor) -> Tensor:
        p = self.params
        raw = conv2d(normalized, ConvWeight(p[f"{self.prefix}.weight"], p[f"{self.prefix}.bias"], padding=1, padding_mode="reflect"))
        return tanh(raw) * float(self.kernel)
