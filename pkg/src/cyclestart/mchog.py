"""MCHOG: cell-wise orientation histograms of MHI gradients.

Unlike classic HOG there is no block normalisation: the descriptor is the
plain concatenation of per-cell histograms, cells row-major, bins
contiguous within each cell.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mhi import resize_bilinear


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MchogParams:
    cell_size_x: int = 32
    cell_size_y: int = 8
    n_bins: int = 18
    input_w: int = 128
    input_h: int = 96
    signed_orientation: bool = False

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.input_w % self.cell_size_x or self.input_h % self.cell_size_y:
            raise DimensionMismatch(
                f"cells {self.cell_size_x}x{self.cell_size_y} do not tile "
                f"{self.input_w}x{self.input_h}")

    @property
    def orientation_range(self) -> float:
        return 360.0 if self.signed_orientation else 180.0


def descriptor_length(params: MchogParams) -> int:
    return (params.input_w // params.cell_size_x) * (params.input_h // params.cell_size_y) * params.n_bins


def gradients(image: np.ndarray, signed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and orientation (degrees) from the [-1, 0, 1] kernel.

    Borders are handled by edge replication. Orientation is measured from the
    +x (column) axis towards +y (row) and folded into [0, 180) unless
    ``signed``.
    """
    img = np.asarray(image, dtype=np.float64)
    p = np.pad(img, ((1, 1), (1, 1)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.degrees(np.arctan2(gy, gx))
    period = 360.0 if signed else 180.0
    ang = np.mod(ang, period)
    ang[ang >= period] = 0.0  # mod can round up to the period itself
    return mag, ang


def cell_histograms(magnitude: np.ndarray, orientation: np.ndarray, params: MchogParams) -> np.ndarray:
    h, w = magnitude.shape
    cx, cy, nb = params.cell_size_x, params.cell_size_y, params.n_bins
    if orientation.shape != magnitude.shape or h % cy or w % cx:
        raise DimensionMismatch(f"{w}x{h} image is not tiled by {cx}x{cy} cells")
    bin_width = params.orientation_range / nb
    pos = orientation / bin_width - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % nb
    hi = (lo + 1) % nb

    votes = np.zeros((h, w, nb))
    rows, cols = np.indices((h, w))
    votes[rows, cols, lo] += magnitude * (1.0 - frac)
    votes[rows, cols, hi] += magnitude * frac

    ny, nx = h // cy, w // cx
    per_cell = votes.reshape(ny, cy, nx, cx, nb).transpose(0, 2, 1, 3, 4)
    per_cell = np.ascontiguousarray(per_cell).reshape(ny, nx, cy * cx, nb)
    return per_cell.sum(axis=2).reshape(-1)


def compute(mhi: np.ndarray, params: MchogParams = MchogParams()) -> np.ndarray:
    """Full descriptor of one MHI (any size; resized to the params' input size)."""
    img = np.asarray(mhi, dtype=np.float64)
    if img.shape != (params.input_h, params.input_w):
        img = resize_bilinear(img, params.input_w, params.input_h)
    mag, ang = gradients(img, params.signed_orientation)
    return cell_histograms(mag, ang, params)


def compute_batch(mhis: np.ndarray, params: MchogParams = MchogParams()) -> np.ndarray:
    out = np.empty((len(mhis), descriptor_length(params)))
    resized = resize_bilinear(np.asarray(mhis, dtype=np.float64), params.input_w, params.input_h)
    for i, img in enumerate(resized):
        mag, ang = gradients(img, params.signed_orientation)
        out[i] = cell_histograms(mag, ang, params)
    return out


def write_descriptor_csv(path: Path, labels: np.ndarray, descriptors: np.ndarray) -> None:
    """One row per sample: label (-1 waiting / +1 moving) then the values."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        for y, row in zip(labels, descriptors):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])
    tmp.replace(path)


def read_descriptor_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data[:, 0].astype(int), data[:, 1:]
