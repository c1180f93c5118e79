"""Lightweight encoder/decoder with hierarchical DIN, plus the VGG-19 slice.

The content encoder is a 9x9 conv, two stride-2 depthwise-separable blocks
and two residual blocks. The decoder mirrors it with bilinear upsampling and
receives one DIN addition per level::

    decoder_feature <- decoder_feature + scale * DIN(decoder_feature, level params)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import checkpoint
from .autodiff import DEFAULT_EPS, ShapeError, Tensor
from .netspec import Layer, NetworkSpec, init_params, param_shapes, run_layers
from .normalization import (
    CONV_TYPES,
    DinParams,
    GeneratorNet,
    OffsetHead,
    adain_params,
    din,
    instance_norm,
)

VGG_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")


class ArchitectureMismatch(ShapeError):
    """Stored weights do not fit the configured architecture."""


@dataclass
class StyleNetConfig:
    base_width: int = 32
    din_levels: int = 3
    conv_type: str = "standard"
    din_kernel: int = 1
    din_scale: float = 1.0
    style_encoder: str = "light"
    mode: str = "din"
    eps: float = DEFAULT_EPS

    def validate(self) -> None:
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if not 1 <= self.din_levels <= 3:
            raise ValueError("din_levels must be 1, 2 or 3")
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"conv_type must be one of {CONV_TYPES}")
        if self.din_kernel < 1 or self.din_kernel % 2 == 0:
            raise ValueError("din_kernel must be a positive odd integer")
        if self.style_encoder not in ("light", "vgg"):
            raise ValueError("style_encoder must be 'light' or 'vgg'")
        if self.mode not in ("din", "adain"):
            raise ValueError("mode must be 'din' or 'adain'")
        if self.mode == "adain" and self.style_encoder != "light":
            raise ValueError("adain mode needs style taps as wide as the decoder levels (light encoder)")

    def level_widths(self) -> list[int]:
        w = self.base_width
        return [4 * w, 2 * w, w][: self.din_levels]


# ---------------------------------------------------------------------------
# architecture descriptions


def _encoder_layers(w: int) -> tuple[Layer, ...]:
    return (
        Layer("conv_in", "conv", 3, w, kernel=9, norm=True, relu=True, tap="e0"),
        Layer("down1", "ds_block", w, 2 * w, kernel=3, stride=2, norm=True, relu=True, tap="e1"),
        Layer("down2", "ds_block", 2 * w, 4 * w, kernel=3, stride=2, norm=True, relu=True),
        Layer("res1", "residual_block", 4 * w, 4 * w, kernel=3, norm=True),
        Layer("res2", "residual_block", 4 * w, 4 * w, kernel=3, norm=True, tap="e2"),
    )


def _decoder_layers(cfg: StyleNetConfig) -> tuple[Layer, ...]:
    w = cfg.base_width
    k, v, s = cfg.din_kernel, cfg.conv_type, cfg.din_scale

    def slot(level, ch):
        if level >= cfg.din_levels:
            return ()
        return (Layer(f"din{level}", "din_slot", ch, ch, kernel=k, level=level, variant=v, scale=s),)

    return (
        Layer("res1", "residual_block", 4 * w, 4 * w, kernel=3),
        Layer("res2", "residual_block", 4 * w, 4 * w, kernel=3),
        *slot(0, 4 * w),
        Layer("up1", "ds_block", 4 * w, 2 * w, kernel=3, relu=True),
        Layer("upsample1", "upsample", 2 * w, 2 * w, stride=2),
        *slot(1, 2 * w),
        Layer("up2", "ds_block", 2 * w, w, kernel=3, relu=True),
        Layer("upsample2", "upsample", w, w, stride=2),
        *slot(2, w),
        Layer("conv_out", "conv", w, 3, kernel=9),
    )


def build_vgg_slice(upto_layer: str = "relu4_1") -> NetworkSpec:
    """VGG-19 prefix (3x3 convs, 2x2 max-pools) ending at ``upto_layer``."""
    if upto_layer not in VGG_TAPS:
        raise ValueError(f"unknown VGG layer {upto_layer!r}; expected one of {VGG_TAPS}")
    blocks = [(64, 2), (128, 2), (256, 4), (512, 4)]
    layers, cin = [], 3
    for b, (ch, reps) in enumerate(blocks, start=1):
        if b > 1:
            layers.append(Layer(f"pool{b - 1}", "maxpool", cin, cin, kernel=2, stride=2))
        for r in range(1, reps + 1):
            tap = f"relu{b}_{r}" if r == 1 else None
            layers.append(Layer(f"conv{b}_{r}", "conv", cin, ch, kernel=3, padding="zero", relu=True, tap=tap))
            cin = ch
            if tap == upto_layer:
                return NetworkSpec(f"vgg19-{upto_layer}", {"encoder": tuple(layers)})
    raise AssertionError("unreachable")


def _style_taps(cfg: StyleNetConfig) -> list[tuple[str, int, int]]:
    """(tap name, channels, downsampling) feeding each DIN level."""
    w = cfg.base_width
    if cfg.style_encoder == "vgg":
        taps = [("relu3_1", 256, 4), ("relu2_1", 128, 2), ("relu1_1", 64, 1)]
    else:
        taps = [("e2", 4 * w, 4), ("e1", 2 * w, 2), ("e0", w, 1)]
    return taps[: cfg.din_levels]


def _generator_layers(gen: GeneratorNet, source: str, down: int) -> tuple[Layer, ...]:
    out = []
    for net, head in (("weight_net", gen.weight_elems), ("bias_net", gen.channels)):
        spatial = net == "weight_net" and gen.conv_type == "spatially_adaptive"
        out += [
            Layer(f"{gen.prefix}.{net}.input", "input", gen.in_channels, gen.in_channels, stride=down, source=source),
            Layer(f"{gen.prefix}.{net}.pool", "adaptive_pool", gen.in_channels, gen.in_channels, kernel=gen.grid),
            Layer(f"{gen.prefix}.{net}.conv", "conv", gen.in_channels, gen.hidden, kernel=3, relu=True),
        ]
        if not spatial:
            out.append(Layer(f"{gen.prefix}.{net}.pool1", "adaptive_pool", gen.hidden, gen.hidden, kernel=1))
        out.append(Layer(f"{gen.prefix}.{net}.head", "conv", gen.hidden, head, kernel=1))
    return tuple(out)


def _make_generators(cfg: StyleNetConfig, params: dict) -> list[GeneratorNet]:
    gens = []
    for level, ((tap, ch, _), width) in enumerate(zip(_style_taps(cfg), cfg.level_widths())):
        gens.append(GeneratorNet(f"gen{level}", ch, width, cfg.conv_type, cfg.din_kernel, params=params))
    return gens


def build_default_network(config: Optional[StyleNetConfig] = None) -> NetworkSpec:
    cfg = config or StyleNetConfig()
    cfg.validate()
    if cfg.style_encoder == "vgg":
        style_layers = build_vgg_slice("relu3_1").sections["encoder"]
    else:
        style_layers = _encoder_layers(cfg.base_width)
    gen_layers: tuple[Layer, ...] = ()
    if cfg.mode == "din":
        for gen, (tap, _, down) in zip(_make_generators(cfg, {}), _style_taps(cfg)):
            gen_layers += _generator_layers(gen, f"style_encoder:{tap}", down)
    spec = NetworkSpec(
        "dinstyle",
        {
            "encoder": _encoder_layers(cfg.base_width),
            "decoder": _decoder_layers(cfg),
            "style_encoder": style_layers,
            "generators": gen_layers,
        },
        meta={"config": asdict(cfg)},
    )
    spec.validate()
    check_mirror(spec)
    return spec


def check_mirror(spec: NetworkSpec) -> None:
    down = sum(1 for l in spec.sections["encoder"] if l.stride == 2)
    up = sum(1 for l in spec.sections["decoder"] if l.kind == "upsample")
    if down != up:
        raise ShapeError(f"encoder downsamples {down} times but decoder upsamples {up} times")


# ---------------------------------------------------------------------------
# style codes


@dataclass
class StyleCode:
    """Per-level DIN parameters for one style, usable without the style encoder."""

    levels: list[DinParams]
    style_id: str = ""
    meta: dict = field(default_factory=dict)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "meta.levels": np.array([len(self.levels)], dtype=np.float64),
            "meta.style_id": checkpoint.encode_text(self.style_id),
        }
        for key in sorted(self.meta):
            out[f"meta.{key}"] = checkpoint.encode_text(str(self.meta[key]))
        for k, p in enumerate(self.levels):
            out[f"level{k}.conv_type"] = np.array([CONV_TYPES.index(p.conv_type)], dtype=np.float64)
            out[f"level{k}.weight"] = p.weight.data
            out[f"level{k}.bias"] = p.bias.data
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "StyleCode":
        try:
            n = int(tensors["meta.levels"][0])
            levels = [
                DinParams(
                    Tensor(tensors[f"level{k}.weight"]),
                    Tensor(tensors[f"level{k}.bias"]),
                    CONV_TYPES[int(tensors[f"level{k}.conv_type"][0])],
                )
                for k in range(n)
            ]
            style_id = checkpoint.decode_text(tensors["meta.style_id"])
        except (KeyError, IndexError, ValueError) as exc:
            raise checkpoint.CheckpointError(f"not a style code: {exc}") from exc
        meta = {
            k[5:]: checkpoint.decode_text(v)
            for k, v in tensors.items()
            if k.startswith("meta.") and k not in ("meta.levels", "meta.style_id")
        }
        return cls(levels, style_id, meta)

    def narrowed(self) -> "StyleCode":
        """The code exactly as it will read back from a checkpoint file."""
        return StyleCode.from_tensors({k: checkpoint.narrow(v) for k, v in self.to_tensors().items()})

    def save(self, path) -> None:
        checkpoint.save(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "StyleCode":
        return cls.from_tensors(checkpoint.load(path))


# ---------------------------------------------------------------------------
# the network


def _check_image(x: Tensor, what: str, need_div4: bool) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"{what} must be [N,3,H,W], got {x.shape}")
    h, w = x.shape[2:]
    if h < 32 or w < 32:
        raise ShapeError(f"{what} must be at least 32x32, got {h}x{w}")
    if need_div4 and (h % 4 or w % 4):
        raise ShapeError(f"{what} height and width must be divisible by 4, got {h}x{w}")


class StyleNet:
    """Weights plus forward passes for the hierarchical DIN stylization network.

    All parameters sit in one flat ``params`` dict keyed by dotted names
    (``enc.*``, ``dec.*``, ``senc.*``, ``gen<k>.*``). Generators and offset
    heads hold a reference to the same dict, so rebinding an entry is visible
    everywhere.
    """

    def __init__(self, config: Optional[StyleNetConfig] = None, params: Optional[Mapping] = None, seed: int = 0):
        self.config = config or StyleNetConfig()
        self.spec = build_default_network(self.config)
        self.params: dict[str, Tensor] = {}
        cfg = self.config
        self.generators = _make_generators(cfg, self.params) if cfg.mode == "din" else []
        self.offset_heads: dict[int, OffsetHead] = {}
        if cfg.conv_type == "deformable" and cfg.mode == "din":
            for level, width in enumerate(cfg.level_widths()):
                self.offset_heads[level] = OffsetHead(f"dec.din{level}.offset", width, cfg.din_kernel, params=self.params)
        if params is None:
            self.init_params(seed)
        else:
            self.load_params(params)

    # parameters ------------------------------------------------------------

    def _static_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        shapes.update(param_shapes(self.spec.sections["encoder"], "enc"))
        shapes.update(param_shapes(self.spec.sections["decoder"], "dec"))
        shapes.update(param_shapes(self.spec.sections["style_encoder"], "senc"))
        return shapes

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = self._static_shapes()
        for gen in self.generators:
            shapes.update(gen.param_shapes())
        for head in self.offset_heads.values():
            shapes.update(head.param_shapes())
        return shapes

    def init_params(self, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.params.clear()
        # un-normalized decoder: damp residual branches and the output conv so
        # the first images sit near mid-grey instead of blowing up
        gains = {"dec.res1.conv2.pw": 0.1, "dec.res2.conv2.pw": 0.1, "dec.conv_out": 0.1}
        self.params.update(init_params(self._static_shapes(), rng, gains=gains))
        for gen in self.generators:
            gen.init_params(rng)
        for head in self.offset_heads.values():
            head.init_params(rng)
        self.params["dec.conv_out.bias"].data[:] = 0.5

    def load_params(self, tensors: Mapping) -> None:
        shapes = self.param_shapes()
        tensors = {k: v for k, v in tensors.items() if not k.startswith(("meta.", "adam."))}
        missing = sorted(set(shapes) - set(tensors))
        extra = sorted(set(tensors) - set(shapes))
        if missing or extra:
            raise ArchitectureMismatch(
                f"weights do not match architecture (missing: {missing[:3]}, unexpected: {extra[:3]})"
            )
        self.params.clear()
        for name, shape in shapes.items():
            arr = np.asarray(getattr(tensors[name], "data", tensors[name]), dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ArchitectureMismatch(f"{name}: stored shape {arr.shape}, expected {tuple(shape)}")
            self.params[name] = Tensor(arr, requires_grad=True)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Weights plus architecture metadata, ready for :func:`checkpoint.save`."""
        cfg = self.config
        out = {
            "meta.arch": np.array(
                [cfg.base_width, cfg.din_levels, CONV_TYPES.index(cfg.conv_type), cfg.din_kernel], dtype=np.float64
            ),
            "meta.options": checkpoint.encode_text(f"{cfg.style_encoder}/{cfg.mode}/{cfg.din_scale!r}"),
        }
        out.update({k: self.params[k].data for k in sorted(self.params)})
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], config: Optional[StyleNetConfig] = None) -> "StyleNet":
        if config is None:
            config = config_from_tensors(tensors)
        elif "meta.arch" in tensors and config_from_tensors(tensors) != config:
            raise ArchitectureMismatch("weights were saved for a different architecture configuration")
        return cls(config, params=tensors)

    def group_multipliers(self, generator_mult: float = 10.0) -> dict[str, float]:
        """Learning-rate multiplier per parameter: generator-side weights learn faster."""
        return {
            name: generator_mult if (name.startswith("gen") or ".offset." in name) else 1.0
            for name in self.params
        }

    # forward passes -------------------------------------------------------

    def encode(self, content: Tensor) -> Tensor:
        return run_layers(self.spec.sections["encoder"], content, self.params, "enc", eps=self.config.eps)

    def style_taps(self, style: Tensor) -> dict[str, Tensor]:
        taps: dict[str, Tensor] = {}
        needed = [t for t, _, _ in _style_taps(self.config)]
        last = needed[0]  # the deepest tap
        run_layers(self.spec.sections["style_encoder"], style, self.params, "senc", taps=taps,
                   stop_after=last, eps=self.config.eps)
        return {t: taps[t] for t in needed}

    def precompute(self, style: Tensor, style_id: str = "") -> StyleCode:
        _check_image(style, "style", need_div4=False)
        taps = self.style_taps(style)
        names = [t for t, _, _ in _style_taps(self.config)]
        if self.config.mode == "adain":
            levels = [adain_params(taps[t], self.config.eps) for t in names]
        else:
            levels = [gen(taps[t]) for gen, t in zip(self.generators, names)]
        return StyleCode(levels, style_id, {"conv_type": self.config.conv_type})

    def decode(self, features: Tensor, levels: Optional[list[DinParams]] = None) -> Tensor:
        hook = None
        if levels is not None:
            if len(levels) != self.config.din_levels:
                raise ShapeError(f"style code has {len(levels)} levels, network has {self.config.din_levels}")

            def hook(layer: Layer, x: Tensor) -> Tensor:
                params = levels[layer.level]
                offsets = None
                if params.conv_type == "deformable" and layer.level in self.offset_heads:
                    offsets = self.offset_heads[layer.level](instance_norm(x, self.config.eps))
                y = din(x, params, offsets, eps=self.config.eps)
                return y if layer.scale == 1.0 else y * layer.scale

        return run_layers(self.spec.sections["decoder"], features, self.params, "dec", din_hook=hook,
                          eps=self.config.eps)

    def apply_style(self, content: Tensor, code: StyleCode) -> Tensor:
        _check_image(content, "content", need_div4=True)
        return self.decode(self.encode(content), code.levels)

    def stylize(self, content: Tensor, style: Tensor) -> Tensor:
        _check_image(content, "content", need_div4=True)
        return self.apply_style(content, self.precompute(style))

    def autoencode(self, content: Tensor) -> Tensor:
        """Decoder output with every DIN slot switched off."""
        _check_image(content, "content", need_div4=True)
        return self.decode(self.encode(content), None)


def config_from_tensors(tensors: Mapping[str, np.ndarray]) -> StyleNetConfig:
    if "meta.arch" not in tensors:
        raise ArchitectureMismatch("weights file carries no architecture metadata")
    width, levels, ctype, kernel = (int(v) for v in tensors["meta.arch"])
    cfg = StyleNetConfig(base_width=width, din_levels=levels, conv_type=CONV_TYPES[ctype], din_kernel=kernel)
    if "meta.options" in tensors:
        enc, mode, scale = checkpoint.decode_text(tensors["meta.options"]).split("/")
        cfg.style_encoder, cfg.mode, cfg.din_scale = enc, mode, float(scale)
    return cfg


def forward_stylize(content: Tensor, style: Tensor, net: StyleNet) -> Tensor:
    return net.stylize(content, style)


def precompute_style(style: Tensor, net: StyleNet, style_id: str = "") -> StyleCode:
    return net.precompute(style, style_id)


def apply_style(content: Tensor, code: StyleCode, net: StyleNet) -> Tensor:
    return net.apply_style(content, code)


# ---------------------------------------------------------------------------
# loss network


class LossNetwork:
    """VGG-19 slice used as a fixed feature extractor."""

    def __init__(self, upto_layer: str = "relu4_1", params: Optional[Mapping] = None, seed: int = 0):
        self.spec = build_vgg_slice(upto_layer)
        shapes = param_shapes(self.spec.sections["encoder"], "vgg")
        if params is None:
            self.params = init_params(shapes, np.random.default_rng(seed))
        else:
            self.params = {}
            for name, shape in shapes.items():
                if name not in params:
                    raise ArchitectureMismatch(f"loss network weights missing {name}")
                arr = np.asarray(getattr(params[name], "data", params[name]), dtype=np.float64)
                if arr.shape != shape:
                    raise ArchitectureMismatch(f"{name}: stored shape {arr.shape}, expected {shape}")
                self.params[name] = Tensor(arr)
        for t in self.params.values():
            t.requires_grad = False

    def features(self, img: Tensor, layers=VGG_TAPS) -> dict[str, Tensor]:
        taps: dict[str, Tensor] = {}
        last = max(layers, key=VGG_TAPS.index)
        run_layers(self.spec.sections["encoder"], img, self.params, "vgg", taps=taps, stop_after=last)
        return {k: taps[k] for k in layers}
