"""PNG reading/writing; pixel values map linearly between [0, 255] and [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import Tensor


class ImageError(OSError):
    """An image could not be read or decoded."""


def open_rgb(path) -> Image.Image:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageError(f"{path}: not a PNG file")
            return im.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc


def read_png(path) -> np.ndarray:
    """Decode to a uint8 ``[H, W, 3]`` array."""
    return np.asarray(open_rgb(path), dtype=np.uint8)


def write_png(path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected a uint8 [H, W, 3] array")
    Image.fromarray(arr, mode="RGB").save(os.fspath(path), format="PNG")


def to_tensor(pixels: np.ndarray) -> Tensor:
    """uint8 ``[H, W, 3]`` -> float ``[1, 3, H, W]`` in [0, 1]."""
    return Tensor(np.asarray(pixels, dtype=np.float64).transpose(2, 0, 1)[None] / 255.0)


def to_pixels(img: Tensor, index: int = 0) -> np.ndarray:
    """Clamp to [0, 1] and quantize one image of a batch to uint8 ``[H, W, 3]``."""
    x = np.clip(img.data[index], 0.0, 1.0).transpose(1, 2, 0)
    return np.rint(x * 255.0).astype(np.uint8)


def load_image(path) -> Tensor:
    return to_tensor(read_png(path))


def save_image(path, img: Tensor) -> None:
    write_png(path, to_pixels(img))


def list_pngs(directory) -> list[str]:
    if not os.path.isdir(directory):
        raise ImageError(f"{directory}: not a directory")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    return [os.path.join(directory, n) for n in names]
