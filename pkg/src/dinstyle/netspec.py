"""Declarative layer lists and the interpreter that runs them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .autodiff import ShapeError, Tensor, relu
from .normalization import instance_norm
from .ops import ConvWeight, adaptive_avg_pool, bilinear_upsample, conv2d, max_pool2d

LAYER_KINDS = (
    "input",
    "conv",
    "ds_block",
    "residual_block",
    "upsample",
    "din_slot",
    "relu",
    "maxpool",
    "instance_norm",
    "adaptive_pool",
)


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str
    in_ch: int
    out_ch: int
    kernel: int = 1
    stride: int = 1
    padding: str = "reflect"
    norm: bool = False
    relu: bool = False
    tap: Optional[str] = None
    # din_slot: level index, conv type and the addition scale
    level: Optional[int] = None
    variant: str = ""
    scale: float = 1.0
    # input: where the section's features come from
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class NetworkSpec:
    """Named sections of layers; each section runs front to back."""

    name: str
    sections: dict[str, tuple[Layer, ...]]
    in_channels: int = 3
    meta: dict = field(default_factory=dict)

    def layers(self, section: Optional[str] = None) -> tuple[Layer, ...]:
        if section is not None:
            return self.sections[section]
        return tuple(l for sec in self.sections.values() for l in sec)

    def din_slots(self) -> list[Layer]:
        return [l for l in self.layers() if l.kind == "din_slot"]

    def validate(self) -> None:
        for sec, layers in self.sections.items():
            ch = None
            for layer in layers:
                if layer.kind == "input":
                    ch = layer.out_ch
                    continue
                if ch is not None and layer.in_ch != ch:
                    raise ShapeError(f"{sec}/{layer.name}: expects {layer.in_ch} channels, receives {ch}")
                ch = layer.out_ch
        levels = [l.level for l in self.din_slots()]
        if len(levels) != len(set(levels)):
            raise ShapeError("each DIN level must appear in exactly one slot")


def conv_padding(layer: Layer) -> int:
    return (layer.kernel - 1) // 2


def param_shapes(layers, prefix: str) -> dict[str, tuple[int, ...]]:
    """Static parameters needed by a layer list (DIN slots are dynamic)."""
    shapes: dict[str, tuple[int, ...]] = {}

    def ds(name, cin, cout, k):
        shapes[f"{name}.dw.weight"] = (cin, 1, k, k)
        shapes[f"{name}.dw.bias"] = (cin,)
        shapes[f"{name}.pw.weight"] = (cout, cin, 1, 1)
        shapes[f"{name}.pw.bias"] = (cout,)

    for l in layers:
        name = f"{prefix}.{l.name}"
        if l.kind == "conv":
            shapes[f"{name}.weight"] = (l.out_ch, l.in_ch, l.kernel, l.kernel)
            shapes[f"{name}.bias"] = (l.out_ch,)
        elif l.kind == "ds_block":
            ds(name, l.in_ch, l.out_ch, l.kernel)
        elif l.kind == "residual_block":
            ds(f"{name}.conv1", l.in_ch, l.out_ch, l.kernel)
            ds(f"{name}.conv2", l.out_ch, l.out_ch, l.kernel)
    return shapes


def init_params(shapes: Mapping[str, tuple[int, ...]], rng: np.random.Generator, gains: Optional[Mapping[str, float]] = None) -> dict[str, Tensor]:
    """He-normal kernels, zero biases."""
    out = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 1.0
            for key, g in (gains or {}).items():
                if name.startswith(key):
                    gain = g
            arr = rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)
        out[name] = Tensor(arr, requires_grad=True)
    return out


DinHook = Callable[[Layer, Tensor], Tensor]


def run_layers(
    layers,
    x: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    taps: Optional[dict] = None,
    din_hook: Optional[DinHook] = None,
    stop_after: Optional[str] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Run ``layers`` on ``x``.

    ``din_hook(layer, feature)`` returns the term added at a DIN slot; without
    a hook the slot is skipped. Outputs of layers with a ``tap`` name are
    stored in ``taps``.
    """

    def conv(name, inp, cin, cout, k, stride, padding, groups=1):
        w = ConvWeight(params[f"{name}.weight"], params[f"{name}.bias"], stride=stride,
                       padding=(k - 1) // 2, padding_mode="reflect" if padding == "reflect" else "zero", groups=groups)
        return conv2d(inp, w)

    def ds(name, inp, l, cin, cout, stride, act):
        h = conv(f"{name}.dw", inp, cin, cin, l.kernel, stride, l.padding, groups=cin)
        h = conv(f"{name}.pw", h, cin, cout, 1, 1, l.padding)
        if l.norm:
            h = instance_norm(h, eps)
        return relu(h) if act else h

    for l in layers:
        name = f"{prefix}.{l.name}"
        if l.kind == "input":
            if x.shape[1] != l.out_ch:
                raise ShapeError(f"{name}: expected {l.out_ch} input channels, got {x.shape[1]}")
        elif l.kind == "conv":
            x = conv(name, x, l.in_ch, l.out_ch, l.kernel, l.stride, l.padding)
            if l.norm:
                x = instance_norm(x, eps)
            if l.relu:
                x = relu(x)
        elif l.kind == "ds_block":
            x = ds(name, x, l, l.in_ch, l.out_ch, l.stride, l.relu)
        elif l.kind == "residual_block":
            h = ds(f"{name}.conv1", x, l, l.in_ch, l.out_ch, 1, True)
            h = ds(f"{name}.conv2", h, l, l.out_ch, l.out_ch, 1, False)
            x = x + h
        elif l.kind == "upsample":
            x = bilinear_upsample(x, l.stride)
        elif l.kind == "din_slot":
            if din_hook is not None:
                x = x + din_hook(l, x)
        elif l.kind == "relu":
            x = relu(x)
        elif l.kind == "maxpool":
            x = max_pool2d(x, l.kernel)
        elif l.kind == "instance_norm":
            x = instance_norm(x, eps)
        elif l.kind == "adaptive_pool":
            x = adaptive_avg_pool(x, l.kernel, l.kernel)
        if l.tap and taps is not None:
            taps[l.tap] = x
        if stop_after is not None and l.tap == stop_after:
            break
    return x
