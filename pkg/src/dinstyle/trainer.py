"""Adam optimisation and the deterministic toy-scale training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from PIL import Image

from . import checkpoint
from .autodiff import ShapeError, Tape, Tensor, backward
from .images import ImageError, list_pngs, open_rgb
from .losses import LossConfig, loss_terms
from .stylenet import LossNetwork, StyleNet, StyleNetConfig

log = logging.getLogger(__name__)

# the step counter is stored as float32 in checkpoints
MAX_STEP = 2**24


class NonFiniteLossError(FloatingPointError):
    pass


class DataError(ValueError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    multipliers: dict[str, float] = field(default_factory=dict)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([float(self.step)])}
        for name in sorted(self.m):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_tensors(self, tensors: Mapping[str, np.ndarray]) -> None:
        self.step = int(tensors["adam.step"][0])
        self.m = {k[len("adam.m."):]: np.array(v) for k, v in tensors.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(v) for k, v in tensors.items() if k.startswith("adam.v.")}


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> dict[str, Tensor]:
    """One bias-corrected Adam update.

    Returns fresh parameter tensors (with empty grads); ``state`` is updated in
    place. Gradients are read, never modified.
    """
    if state.step + 1 > MAX_STEP:
        raise OverflowError(f"Adam step counter would exceed {MAX_STEP}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = {}
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        elif m.shape != p.shape:
            raise ShapeError(f"{name}: moment shape {m.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        lr = state.lr * state.multipliers.get(name, 1.0)
        mhat = m / c1
        vhat = v / c2
        out[name] = Tensor(p.data - lr * mhat / (np.sqrt(vhat) + state.eps), requires_grad=True)
        state.m[name] = m
        state.v[name] = v
    state.step = t
    return out


# ---------------------------------------------------------------------------
# configuration and data


@dataclass
class TrainConfig:
    content_dir: str = "content"
    style_dir: str = "style"
    out_dir: str = "run"
    batch_size: int = 2
    crop_size: int = 32
    steps: int = 200
    seed: int = 0
    checkpoint_interval: int = 100
    lr: float = 1e-4
    generator_lr_mult: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_seed: int = 0
    loss_net_seed: int = 0
    loss_net_weights: Optional[str] = None
    resume_from: Optional[str] = None
    loss: LossConfig = field(default_factory=LossConfig)
    network: StyleNetConfig = field(default_factory=StyleNetConfig)

    def validate(self) -> None:
        if self.crop_size % 4 or self.crop_size < 32:
            raise ValueError("crop_size must be a multiple of 4 and at least 32")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.checkpoint_interval <= 0:
            raise ValueError("checkpoint_interval must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        self.loss.validate()
        self.network.validate()


class ImageSet:
    """Decoded images sampled with random square crops resized to ``crop``."""

    def __init__(self, directory: str):
        try:
            paths = list_pngs(directory)
        except ImageError as exc:
            raise DataError(str(exc)) from exc
        if not paths:
            raise DataError(f"{directory}: no PNG images")
        try:
            self.images = [open_rgb(p) for p in paths]
        except ImageError as exc:
            raise DataError(str(exc)) from exc
        self.paths = paths

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, rng: np.random.Generator, crop: int) -> np.ndarray:
        im = self.images[int(rng.integers(len(self.images)))]
        w, h = im.size
        short = min(w, h)
        side = int(rng.integers((short + 1) // 2, short + 1))
        x0 = int(rng.integers(0, w - side + 1))
        y0 = int(rng.integers(0, h - side + 1))
        patch = im.crop((x0, y0, x0 + side, y0 + side)).resize((crop, crop), Image.BILINEAR)
        return np.asarray(patch, dtype=np.float64).transpose(2, 0, 1) / 255.0


def sample_batch(contents: ImageSet, styles: ImageSet, seed: int, step: int, batch: int, crop: int):
    """Batch for ``step``; depends only on (seed, step) so resumed runs line up."""
    rng = np.random.default_rng([seed, step])
    c = np.stack([contents.sample(rng, crop) for _ in range(batch)])
    s = np.stack([styles.sample(rng, crop) for _ in range(batch)])
    return Tensor(c), Tensor(s)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    log: list[tuple[int, float, float, float]]
    checkpoints: list[str]
    net: StyleNet
    state: AdamState


def format_log_line(step: int, content: float, style: float, total: float) -> str:
    return f"{step}\t{content!r}\t{style!r}\t{total!r}\n"


def parse_log(text: str) -> list[tuple[int, float, float, float]]:
    rows = []
    for line in text.splitlines():
        if line.strip():
            s, c, st, t = line.split("\t")
            rows.append((int(s), float(c), float(st), float(t)))
    return rows


def snap_to_storage(net: StyleNet, state: AdamState) -> None:
    """Round weights and moments to checkpoint precision, in place.

    Done at every checkpoint so an uninterrupted run and a run resumed from
    that checkpoint carry identical state.
    """
    for name, p in net.params.items():
        net.params[name] = Tensor(checkpoint.narrow(p.data), requires_grad=True)
    for d in (state.m, state.v):
        for name in d:
            d[name] = checkpoint.narrow(d[name])


def checkpoint_tensors(net: StyleNet, state: AdamState) -> dict[str, np.ndarray]:
    out = net.state_tensors()
    out.update(state.to_tensors())
    return out


def train(
    config: TrainConfig,
    net: Optional[StyleNet] = None,
    loss_net: Optional[LossNetwork] = None,
    before_backward: Optional[Callable[[int, Mapping[str, Tensor]], None]] = None,
) -> TrainResult:
    """Run ``config.steps`` Adam steps, logging and checkpointing as configured.

    Output files in ``config.out_dir``: ``loss.log`` (one tab-separated line
    per step) and ``ckpt_<step>.dinc`` every ``checkpoint_interval`` steps and
    at the end.
    """
    config.validate()
    contents = ImageSet(config.content_dir)
    styles = ImageSet(config.style_dir)
    os.makedirs(config.out_dir, exist_ok=True)
    log_path = os.path.join(config.out_dir, "loss.log")

    state = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
    if config.resume_from:
        tensors = checkpoint.load(config.resume_from)
        net = StyleNet.from_tensors(tensors, config.network)
        state.load_tensors(tensors)
    elif net is None:
        net = StyleNet(config.network, seed=config.init_seed)
    if loss_net is None:
        weights = checkpoint.load(config.loss_net_weights) if config.loss_net_weights else None
        loss_net = LossNetwork(params=weights, seed=config.loss_net_seed)
    state.multipliers = net.group_multipliers(config.generator_lr_mult)

    if not config.resume_from and os.path.exists(log_path):
        os.remove(log_path)
    history: list[tuple[int, float, float, float]] = []
    saved: list[str] = []
    start = state.step
    for step in range(start + 1, config.steps + 1):
        content, style = sample_batch(contents, styles, config.seed, step, config.batch_size, config.crop_size)
        with Tape() as tape:
            stylized = net.stylize(content, style)
            terms = loss_terms(content, style, stylized, loss_net, config.loss)
        values = terms.values()
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteLossError(f"non-finite loss at step {step}: content={values[0]} style={values[1]}")
        if before_backward is not None:
            before_backward(step, net.params)
        backward(terms.total, tape)
        del tape
        grads = {name: (p.grad if p.grad is not None else np.zeros(p.shape)) for name, p in net.params.items()}
        net.params.update(adam_step(net.params, grads, state))

        row = (step, *values)
        history.append(row)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(format_log_line(*row))
        if step % config.checkpoint_interval == 0 or step == config.steps:
            snap_to_storage(net, state)
            path = os.path.join(config.out_dir, f"ckpt_{step:06d}.dinc")
            checkpoint.save(path, checkpoint_tensors(net, state))
            saved.append(path)
            log.info("step %d: total %.6g, checkpoint %s", step, values[2], path)
    return TrainResult(history, saved, net, state)
