"""Static FLOP accounting for :class:`NetworkSpec` layer lists.

Convention: one multiply-accumulate counts as one FLOP and bias additions
are folded in. Pooling, upsampling, activations and residual additions cost
one FLOP per output element; instance normalization costs four.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .autodiff import ShapeError
from .netspec import Layer, NetworkSpec
from .normalization import odd_ceil

NORM_COST = 4


@dataclass(frozen=True)
class FlopRow:
    section: str
    name: str
    kind: str
    c: int
    h: int
    w: int
    macs: int
    other: int

    @property
    def flops(self) -> int:
        return self.macs + self.other


@dataclass
class FlopReport:
    input_hw: tuple[int, int]
    rows: list[FlopRow] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.flops for r in self.rows)

    def section_total(self, section: str) -> int:
        return sum(r.flops for r in self.rows if r.section == section)

    @property
    def sections(self) -> list[str]:
        return list(dict.fromkeys(r.section for r in self.rows))

    def to_csv(self) -> str:
        lines = ["name,kind,h,w,c,flops"]
        lines += [f"{r.section}/{r.name},{r.kind},{r.h},{r.w},{r.c},{r.flops}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self, title: str = "") -> str:
        buf = io.StringIO()
        h, w = self.input_hw
        buf.write(f"{title or 'FLOP report'} @ {h}x{w}\n")
        buf.write(f"{'layer':<34} {'kind':<15} {'output':>16} {'MFLOPs':>12}\n")
        for r in self.rows:
            shape = f"{r.c}x{r.h}x{r.w}"
            buf.write(f"{r.section + '/' + r.name:<34} {r.kind:<15} {shape:>16} {r.flops / 1e6:>12.2f}\n")
        for sec in self.sections:
            buf.write(f"{'total ' + sec:<66} {self.section_total(sec) / 1e9:>10.4f} G\n")
        buf.write(f"{'total':<66} {self.total / 1e9:>10.4f} G\n")
        return buf.getvalue()


def _out(size: int, k: int, stride: int) -> int:
    return (size + 2 * ((k - 1) // 2) - k) // stride + 1


def _layer_cost(layer: Layer, c: int, h: int, w: int) -> tuple[int, int, int, int, int]:
    """Return (out_c, out_h, out_w, macs, other) for one layer."""
    k, s = layer.kernel, layer.stride
    if layer.kind == "input":
        return c, h, w, 0, 0
    if layer.kind == "conv":
        ho, wo = _out(h, k, s), _out(w, k, s)
        n = layer.out_ch * ho * wo
        macs = k * k * layer.in_ch * n
        other = NORM_COST * n * layer.norm + n * layer.relu
        return layer.out_ch, ho, wo, macs, other
    if layer.kind == "ds_block":
        ho, wo = _out(h, k, s), _out(w, k, s)
        n = layer.out_ch * ho * wo
        macs = k * k * layer.in_ch * ho * wo + layer.in_ch * n
        other = NORM_COST * n * layer.norm + n * layer.relu
        return layer.out_ch, ho, wo, macs, other
    if layer.kind == "residual_block":
        n = layer.out_ch * h * w
        one = k * k * layer.in_ch * h * w + layer.in_ch * n
        other = 2 * NORM_COST * n * layer.norm + n + n  # relu + skip addition
        return layer.out_ch, h, w, 2 * one, other
    if layer.kind == "upsample":
        ho, wo = h * s, w * s
        return c, ho, wo, 0, c * ho * wo
    if layer.kind == "maxpool":
        ho, wo = h // k, w // k
        return c, ho, wo, 0, c * ho * wo
    if layer.kind == "adaptive_pool":
        return c, k, k, 0, c * k * k
    if layer.kind == "relu":
        return c, h, w, 0, c * h * w
    if layer.kind == "instance_norm":
        return c, h, w, 0, NORM_COST * c * h * w
    if layer.kind == "din_slot":
        n = c * h * w
        other = NORM_COST * n + n  # normalize, add into the stream
        if layer.scale != 1.0:
            other += n
        if layer.variant == "spatially_adaptive":
            kk = odd_ceil(h) * odd_ceil(w)
            macs = kk * n
        elif layer.variant == "deformable":
            taps = k * k
            macs = taps * c * n + 9 * c * 2 * taps * h * w  # dynamic conv + offset head
            other += 4 * taps * n + 2 * 2 * taps * h * w  # bilinear sampling, bounded offsets
        else:
            macs = k * k * c * n
        return c, h, w, macs, other
    raise ShapeError(f"cannot count FLOPs for layer kind {layer.kind!r}")


def count_flops(spec: NetworkSpec, input_hw: tuple[int, int]) -> FlopReport:
    h0, w0 = input_hw
    if h0 < 1 or w0 < 1:
        raise ShapeError("input size must be positive")
    report = FlopReport((h0, w0))
    for section, layers in spec.sections.items():
        c, h, w = spec.in_channels, h0, w0
        if section == "decoder":
            # decoder input is the encoder output
            enc = [r for r in report.rows if r.section == "encoder"]
            if enc:
                c, h, w = enc[-1].c, enc[-1].h, enc[-1].w
        for layer in layers:
            if layer.kind == "input":
                c, h, w = layer.out_ch, h0 // layer.stride, w0 // layer.stride
            elif layer.in_ch != c:
                raise ShapeError(f"{section}/{layer.name}: expects {layer.in_ch} channels, receives {c}")
            c, h, w, macs, other = _layer_cost(layer, c, h, w)
            if h < 1 or w < 1:
                raise ShapeError(f"{section}/{layer.name}: spatial size collapses at input {h0}x{w0}")
            report.rows.append(FlopRow(section, layer.name, layer.kind, c, h, w, macs, other))
    return report


@dataclass
class Comparison:
    input_hw: tuple[int, int]
    totals: dict[str, int]
    section: str

    def ratios(self) -> list[tuple[str, str, float]]:
        names = list(self.totals)
        return [(a, b, self.totals[a] / self.totals[b]) for i, a in enumerate(names) for b in names[i + 1 :]]

    def rows(self) -> list[tuple[str, int]]:
        return list(self.totals.items())

    def to_text(self) -> str:
        h, w = self.input_hw
        out = [f"{self.section} GFLOPs @ {h}x{w}"]
        width = max(len(n) for n in self.totals) + 2
        for name, flops in self.totals.items():
            out.append(f"{name:<{width}}{flops / 1e9:>10.4f}")
        for a, b, r in self.ratios():
            out.append(f"{'ratio ' + a + '/' + b:<{width}}{r:>10.2f}")
        return "\n".join(out) + "\n"


def compare_architectures(
    specs: Mapping[str, NetworkSpec] | Sequence[tuple[str, NetworkSpec]],
    input_hw: tuple[int, int],
    section: str = "encoder",
) -> Comparison:
    items = list(specs.items()) if isinstance(specs, Mapping) else list(specs)
    if len(items) < 2:
        raise ValueError("need at least two architectures to compare")
    totals = {}
    for name, spec in items:
        report = count_flops(spec, input_hw)
        totals[name] = report.section_total(section) if section in spec.sections else report.total
    return Comparison(tuple(input_hw), totals, section)
