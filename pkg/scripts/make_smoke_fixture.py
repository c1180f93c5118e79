"""Regenerate the bundled smoke-training images (procedural, seeded)."""

from __future__ import annotations

import os
import sys

import numpy as np
from PIL import Image

ROOT = os.path.join(os.path.dirname(__file__), "..", "src", "dinstyle", "data", "smoke")


def _grid(h, w):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return y / (h - 1), x / (w - 1)


def content_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    # smooth colour gradient background with a few soft-edged blobs
    y, x = _grid(h, w)
    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
    img = c0 * (1 - y[..., None]) + c1 * y[..., None]
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.1, 0.3)
        mask = 1.0 / (1.0 + np.exp(((y - cy) ** 2 + (x - cx) ** 2 - r * r) * 200.0))
        img = img * (1 - mask[..., None]) + rng.uniform(0, 1, size=3) * mask[..., None]
    return img


def style_image(rng: np.random.Generator, h: int, w: int, kind: int) -> np.ndarray:
    y, x = _grid(h, w)
    a, b = rng.uniform(0, 1, size=(2, 3))
    if kind == 0:
        f = rng.uniform(6, 10)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * f * (x + 0.6 * y))
    else:
        f = rng.uniform(4, 7)
        t = ((np.floor(x * f) + np.floor(y * f)) % 2) * 0.8 + 0.1 * np.sin(25 * x * y)
    img = a * t[..., None] + b * (1 - t[..., None])
    return img + rng.normal(0, 0.04, size=img.shape)


def save(path: str, img: np.ndarray) -> None:
    Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="RGB").save(path, format="PNG")


def main(root: str = ROOT) -> None:
    rng = np.random.default_rng(20240611)
    os.makedirs(os.path.join(root, "content"), exist_ok=True)
    os.makedirs(os.path.join(root, "style"), exist_ok=True)
    sizes = [(48, 64), (64, 48), (56, 56), (64, 64)]
    for i, (h, w) in enumerate(sizes):
        save(os.path.join(root, "content", f"content_{i}.png"), content_image(rng, h, w))
    for i in range(2):
        save(os.path.join(root, "style", f"style_{i}.png"), style_image(rng, 64, 64, i))


if __name__ == "__main__":
    main(*sys.argv[1:])
