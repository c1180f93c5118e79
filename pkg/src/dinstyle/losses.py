"""Perceptual content loss and BN-statistic style loss on VGG features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .autodiff import DEFAULT_EPS, ShapeError, Tensor, channel_stats, mean, square
from .stylenet import VGG_TAPS, LossNetwork


@dataclass
class LossConfig:
    content_layer: str = "relu4_1"
    style_layers: tuple[str, ...] = VGG_TAPS
    style_weight: float = 10.0
    eps: float = DEFAULT_EPS

    def validate(self) -> None:
        if self.style_weight < 0:
            raise ValueError("style_weight must be non-negative")
        for name in (self.content_layer, *self.style_layers):
            if name not in VGG_TAPS:
                raise ValueError(f"unknown loss layer {name!r}")
        self.style_layers = tuple(self.style_layers)


def content_loss(f_out: Tensor, f_target: Tensor) -> Tensor:
    if f_out.shape != f_target.shape:
        raise ShapeError(f"content features differ in shape: {f_out.shape} vs {f_target.shape}")
    return mean(square(f_out - f_target))


def style_loss(feats_out: Sequence[Tensor], feats_style: Sequence[Tensor], eps: float = DEFAULT_EPS) -> Tensor:
    """Sum over layers of the mean squared gap in channel means plus channel stds."""
    if len(feats_out) != len(feats_style):
        raise ShapeError(f"{len(feats_out)} output layers vs {len(feats_style)} style layers")
    total = None
    for fo, fs in zip(feats_out, feats_style):
        if fo.shape[1] != fs.shape[1]:
            raise ShapeError(f"channel mismatch {fo.shape[1]} vs {fs.shape[1]}")
        mo, so = channel_stats(fo, eps)
        ms, ss = channel_stats(fs, eps)
        term = mean(square(mo - ms)) + mean(square(so - ss))
        total = term if total is None else total + term
    if total is None:
        raise ShapeError("style loss needs at least one layer")
    return total


@dataclass
class LossTerms:
    content: Tensor
    style: Tensor
    total: Tensor

    def values(self) -> tuple[float, float, float]:
        return self.content.item(), self.style.item(), self.total.item()


def loss_terms(
    content_img: Tensor,
    style_img: Tensor,
    stylized_img: Tensor,
    loss_net: LossNetwork,
    cfg: LossConfig | None = None,
) -> LossTerms:
    cfg = cfg or LossConfig()
    layers = tuple(dict.fromkeys((cfg.content_layer, *cfg.style_layers)))
    fo = loss_net.features(stylized_img, layers)
    fc = loss_net.features(content_img, (cfg.content_layer,))
    fs = loss_net.features(style_img, cfg.style_layers)
    lc = content_loss(fo[cfg.content_layer], fc[cfg.content_layer])
    ls = style_loss([fo[l] for l in cfg.style_layers], [fs[l] for l in cfg.style_layers], cfg.eps)
    return LossTerms(lc, ls, lc + ls * cfg.style_weight)


def total_loss(content_img, style_img, stylized_img, loss_net: LossNetwork, cfg: LossConfig | None = None) -> Tensor:
    return loss_terms(content_img, style_img, stylized_img, loss_net, cfg or LossConfig()).total
