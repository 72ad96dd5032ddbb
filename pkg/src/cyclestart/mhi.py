"""Motion History Images with linear recency decay.

Frame ``t`` of a stack (``t = 0`` newest) is weighted ``(N - t) / N``; every
pixel keeps the weight of the most recent frame in which it was foreground.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .silhouette import SilhouetteStack

MAGIC = b"MHI1"


def decay(n: int, t: int) -> float:
    if n < 1 or not (0 <= t <= n - 1):
        raise IndexError(f"decay index t={t} out of range for n={n}")
    return (n - t) / n


def decay_schedule(n: int) -> np.ndarray:
    return np.array([decay(n, t) for t in range(n)])


def generate_mhi(stack: SilhouetteStack | np.ndarray) -> np.ndarray:
    """MHI of a stack ``(N, H, W)``; also accepts a batch ``(B, N, H, W)``."""
    frames = stack.frames if isinstance(stack, SilhouetteStack) else np.asarray(stack)
    n = frames.shape[-3]
    fg = frames.astype(bool)
    newest = np.argmax(fg, axis=-3)  # first t with foreground
    hit = fg.any(axis=-3)
    return np.where(hit, (n - newest) / n, 0.0)


def generate_mhi_loop(stack: SilhouetteStack | np.ndarray) -> np.ndarray:
    """Literal oldest-to-newest overwrite loop; slow, used as a reference."""
    frames = stack.frames if isinstance(stack, SilhouetteStack) else np.asarray(stack)
    n, h, w = frames.shape
    out = np.zeros((h, w))
    for t in range(n - 1, -1, -1):
        tau = (n - t) / n
        for u in range(w):
            for v in range(h):
                if frames[t, v, u] == 1:
                    out[v, u] = tau * frames[t, v, u]
    return out


def resize_bilinear(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize, pixel centres at half-integers, clamped at the edges.

    Works on the last two axes so a batch of images can be resized at once.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    in_h, in_w = image.shape[-2:]

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)
    top = image[..., y0, :]
    bot = image[..., y1, :]
    rows = top * (1 - fy)[:, None] + bot * fy[:, None]
    out = rows[..., x0] * (1 - fx) + rows[..., x1] * fx
    # convex combination, but guard against rounding just outside the input range
    if not image.size:
        return out
    return np.clip(out, image.min(axis=(-2, -1), keepdims=True), image.max(axis=(-2, -1), keepdims=True))


def write_mhi(path: Path, image: np.ndarray, n: int) -> None:
    image = np.asarray(image)
    h, w = image.shape
    data = MAGIC + struct.pack("<III", w, h, n) + image.astype("<f4").tobytes(order="C")
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_mhi(path: Path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an MHI file")
    w, h, n = struct.unpack("<III", raw[4:16])
    values = np.frombuffer(raw, dtype="<f4", offset=16)
    if values.size != w * h:
        raise ValueError(f"{path}: truncated MHI payload")
    return values.reshape(h, w).astype(np.float64), n


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.asarray(image)).astype(np.uint8)


def export_png(path: Path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="L").save(path)
