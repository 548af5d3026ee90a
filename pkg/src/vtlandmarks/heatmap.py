"""Gaussian heat-map encoding of landmarks and argmax decoding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .landmarks import LANDMARK_IDS, N_LANDMARKS, LandmarkError, LandmarkSet, landmark_index
from .pgm import write_pgm

DEFAULT_SIGMA = 10.0
DEFAULT_GROUP_SIZES = (5, 4, 4, 4, 4)


@dataclass
class HeatMapStack:
    data: np.ndarray  # H x W x L
    sigma: float
    group: tuple[str, ...]
    peak: float = 1.0

    @property
    def image_size(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass(frozen=True)
class Decoded:
    points: list[tuple[int, int]]
    degenerate: list[bool]


def gaussian_channels(points: np.ndarray, image_size: tuple[int, int], sigma: float) -> np.ndarray:
    """H x W x len(points) stack of unnormalized Gaussians centred on ``points`` (x, y)."""
    h, w = image_size
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    # separable: exp(-(dx^2 + dy^2)/2s^2) = exp(-dx^2/2s^2) * exp(-dy^2/2s^2)
    gx = np.exp(-((xs[None, :] - points[:, :1]) ** 2) / (2.0 * sigma * sigma))
    gy = np.exp(-((ys[None, :] - points[:, 1:]) ** 2) / (2.0 * sigma * sigma))
    return np.einsum("ly,lx->yxl", gy, gx)


def encode(landmarks: LandmarkSet, group: Sequence[str] | None = None, sigma: float = DEFAULT_SIGMA) -> HeatMapStack:
    """One Gaussian hat per landmark in ``group`` with peak value 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    group = tuple(LANDMARK_IDS if group is None else group)
    idx = [landmark_index(lid) for lid in group]
    data = gaussian_channels(landmarks.coords[idx], landmarks.image_size, sigma)
    return HeatMapStack(data, float(sigma), group)


def encode_points(points: np.ndarray, image_size: tuple[int, int], sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Raw-array variant of :func:`encode` with bounds checking."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = image_size
    if ((points[:, 0] < 0) | (points[:, 0] >= w) | (points[:, 1] < 0) | (points[:, 1] >= h)).any():
        raise LandmarkError(f"point outside {h}x{w} image")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return gaussian_channels(points, image_size, sigma)


def decode_array(maps: np.ndarray) -> Decoded:
    """Per-channel argmax of an H x W x L array.

    Ties resolve to the first pixel in row-major order.  A channel whose
    values are all equal is flagged as degenerate.
    """
    maps = np.asarray(maps)
    if maps.ndim != 3 or maps.shape[2] == 0:
        raise ValueError(f"expected a non-empty H x W x L stack, got shape {maps.shape}")
    h, w, n = maps.shape
    flat = maps.reshape(h * w, n)
    best = np.argmax(flat, axis=0)  # first occurrence
    ys, xs = np.divmod(best, w)
    degenerate = (flat.max(axis=0) == flat.min(axis=0)).tolist()
    return Decoded([(int(x), int(y)) for x, y in zip(xs, ys)], degenerate)


def decode(stack: HeatMapStack | np.ndarray) -> Decoded:
    return decode_array(stack.data if isinstance(stack, HeatMapStack) else stack)


def group_landmarks(all_ids: Sequence[str] = LANDMARK_IDS, group_sizes: Sequence[int] = DEFAULT_GROUP_SIZES) -> list[list[str]]:
    """Contiguous split of ``all_ids`` into groups of the given sizes."""
    all_ids = list(all_ids)
    sizes = [int(s) for s in group_sizes]
    if any(s < 1 for s in sizes):
        raise ValueError(f"group sizes must be positive, got {sizes}")
    if sum(sizes) != N_LANDMARKS or len(all_ids) != N_LANDMARKS:
        raise ValueError(f"group sizes {sizes} sum to {sum(sizes)}, expected {N_LANDMARKS}")
    groups, start = [], 0
    for s in sizes:
        groups.append(all_ids[start:start + s])
        start += s
    return groups


def export_pgm(stack: HeatMapStack, out_dir, sample_id: str) -> list[Path]:
    """Write each channel as a 16-bit PGM named ``<sample_id>_<landmark>.pgm``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    scaled = np.clip(np.rint(np.clip(stack.data, 0.0, 1.0) * 65535.0), 0, 65535).astype(np.uint16)
    for k, lid in enumerate(stack.group):
        path = out_dir / f"{sample_id}_{lid}.pgm"
        write_pgm(path, scaled[:, :, k])
        paths.append(path)
    return paths
