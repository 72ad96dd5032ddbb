"""Silhouette ingestion: class maps to binary masks, head-anchored ROI crops,
and frame stacks for MHI generation.

Frames are plain 2-D numpy arrays indexed ``[row, col]`` i.e. ``[v, u]``.
Binary frames are ``uint8`` arrays with values in {0, 1}.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

FRAME_RATE_HZ = 50.0


class HeadOutsideFrame(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    roi_width: int = 192
    roi_height: int = 160
    head_anchor_x: float = 0.5
    head_anchor_y: float = 0.2

    def __post_init__(self):
        if self.roi_width <= 0 or self.roi_height <= 0:
            raise ValueError("ROI dimensions must be positive")
        if not (0.0 <= self.head_anchor_x <= 1.0 and 0.0 <= self.head_anchor_y <= 1.0):
            raise ValueError("head anchors must lie in [0, 1]")

    def origin(self, head_x: float, head_y: float) -> tuple[int, int]:
        """Top-left corner (x, y) of the ROI window in frame coordinates."""
        x0 = head_x - self.head_anchor_x * self.roi_width
        y0 = head_y - self.head_anchor_y * self.roi_height
        return int(np.floor(x0 + 1e-9)), int(np.floor(y0 + 1e-9))


@dataclass(frozen=True)
class SilhouetteStack:
    """The ``n_frames`` most recent binary frames, ``frames[0]`` is the newest."""

    frames: np.ndarray  # (N, H, W) uint8

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError("stack needs shape (N, H, W) with N >= 1")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def binarize(classes: np.ndarray, foreground_classes: Iterable[int]) -> np.ndarray:
    fg = np.asarray(sorted(set(int(c) for c in foreground_classes)), dtype=np.int64)
    return np.isin(classes, fg).astype(np.uint8)


def crop_roi(frame: np.ndarray, head_x: float, head_y: float, spec: RoiSpec) -> np.ndarray:
    h, w = frame.shape
    if not (0 <= head_x < w and 0 <= head_y < h):
        raise HeadOutsideFrame(f"head ({head_x}, {head_y}) outside {w}x{h} frame")
    x0, y0 = spec.origin(head_x, head_y)
    out = np.zeros((spec.roi_height, spec.roi_width), dtype=frame.dtype)
    # intersect the window with the frame; everything else stays zero
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + spec.roi_width, w), min(y0 + spec.roi_height, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    return out


def stack(frames: Sequence[np.ndarray], n: int) -> SilhouetteStack:
    """Stack the ``n`` most recent of ``frames`` (given oldest first)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(frames) < n:
        raise InsufficientHistory(f"need {n} frames, have {len(frames)}")
    recent = list(frames[-n:])[::-1]
    shape = recent[0].shape
    if any(f.shape != shape for f in recent):
        raise ValueError("frames must share dimensions")
    return SilhouetteStack(np.stack(recent).astype(np.uint8))


def roi_stacks(frames: np.ndarray, heads: np.ndarray, n: int, spec: RoiSpec) -> np.ndarray:
    """ROI stacks for every frame index with a full history.

    Each stack crops the past ``n`` frames at the *current* head position, so
    translation of the cyclist shows up as motion inside the window.

    Returns an array of shape (T - n + 1, n, roi_height, roi_width); entry
    ``k`` belongs to frame index ``k + n - 1``.
    """
    frames = np.asarray(frames)
    t_total, h, w = frames.shape
    if t_total < n:
        raise InsufficientHistory(f"need {n} frames, have {t_total}")
    rw, rh = spec.roi_width, spec.roi_height
    padded = np.zeros((t_total, h + 2 * rh, w + 2 * rw), dtype=np.uint8)
    padded[:, rh:rh + h, rw:rw + w] = frames
    out = np.empty((t_total - n + 1, n, rh, rw), dtype=np.uint8)
    for t in range(n - 1, t_total):
        hx, hy = heads[t]
        if not (0 <= hx < w and 0 <= hy < h):
            raise HeadOutsideFrame(f"frame {t}: head ({hx}, {hy}) outside frame")
        x0, y0 = spec.origin(hx, hy)
        window = padded[t - n + 1:t + 1, y0 + rh:y0 + 2 * rh, x0 + rw:x0 + 2 * rw]
        out[t - n + 1] = window[::-1]
    return out


# --- on-disk scene format -------------------------------------------------

@dataclass
class SceneMetadata:
    scene_id: str
    frame_rate: float
    heads: list[tuple[float, float]]
    phase_labels: list[str]
    foreground_classes: list[int] = field(default_factory=lambda: [1])
    mode: str = "binary"  # "binary" masks or "classmap"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "frame_rate": self.frame_rate,
            "heads": [list(map(float, h)) for h in self.heads],
            "phase_labels": list(self.phase_labels),
            "foreground_classes": list(self.foreground_classes),
            "mode": self.mode,
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneMetadata":
        return cls(
            scene_id=d["scene_id"],
            frame_rate=float(d["frame_rate"]),
            heads=[tuple(h) for h in d["heads"]],
            phase_labels=list(d["phase_labels"]),
            foreground_classes=[int(c) for c in d.get("foreground_classes", [1])],
            mode=d.get("mode", "binary"),
            extra=d.get("extra", {}),
        )


def frame_filename(index: int) -> str:
    return f"frame_{index:05d}.png"


def write_scene(directory: Path, frames: Sequence[np.ndarray], meta: SceneMetadata) -> None:
    """Write frames as 8-bit PNGs plus ``scene.json``."""
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        Image.fromarray(np.asarray(f, dtype=np.uint8), mode="L").save(
            directory / "frames" / frame_filename(i))
    (directory / "scene.json").write_text(json.dumps(meta.to_json(), indent=1))


def read_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                raise ValueError(f"expected 8-bit single-channel image, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read frame {path}: {exc}") from exc


def read_scene(directory: Path) -> tuple[np.ndarray, SceneMetadata]:
    """Load a scene and return binary frames (T, H, W) and its metadata."""
    directory = Path(directory)
    meta = SceneMetadata.from_json(json.loads((directory / "scene.json").read_text()))
    paths = [directory / "frames" / frame_filename(i) for i in range(len(meta.phase_labels))]
    raw = np.stack([read_frame(p) for p in paths])
    if meta.mode == "classmap":
        return binarize(raw, meta.foreground_classes), meta
    if raw.max(initial=0) > 1:
        raise ValueError(f"{directory}: binary mask frames must hold only 0/1")
    return raw, meta
