"""The ten fixed augmentation transforms and corpus expansion.

Geometry conventions: points are (x, y) = (column, row); rotation and zoom
are about (W/2, H/2); positive angles use the standard rotation matrix in
y-down image coordinates, which looks clockwise on screen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .dataset import Corpus, Sample, relabel
from .landmarks import LANDMARK_IDS, LandmarkSet


@dataclass(frozen=True)
class AugmentOp:
    id: int
    steps: tuple[tuple, ...]  # ("noise", mean, variance) | ("blur", sigma) | ("rotate", deg) | ("translate", dx, dy) | ("zoom", s)

    @property
    def kind(self) -> str:
        kinds = {step[0] for step in self.steps}
        if len(self.steps) > 1:
            return "composite"
        (k,) = kinds
        return {"rotate": "affine", "translate": "affine", "zoom": "affine"}.get(k, k)

    @property
    def is_affine(self) -> bool:
        return any(step[0] in ("rotate", "translate", "zoom") for step in self.steps)


OPS: dict[int, AugmentOp] = {
    1: AugmentOp(1, (("noise", 0.0, 12.75),)),
    2: AugmentOp(2, (("blur", 5.0),)),
    3: AugmentOp(3, (("rotate", 10.0),)),
    4: AugmentOp(4, (("rotate", -5.0),)),
    5: AugmentOp(5, (("translate", 30.0, 10.0),)),
    6: AugmentOp(6, (("translate", 40.0, -10.0),)),
    7: AugmentOp(7, (("rotate", -5.0), ("translate", 30.0, 10.0))),
    8: AugmentOp(8, (("zoom", 0.8),)),
    9: AugmentOp(9, (("translate", 30.0, 10.0), ("zoom", 1.2))),
    10: AugmentOp(10, (("translate", 40.0, 20.0), ("zoom", 0.9), ("blur", 3.0))),
}
ALL_OP_IDS = tuple(OPS)


def get_op(op) -> AugmentOp:
    if isinstance(op, AugmentOp):
        return op
    try:
        return OPS[int(op)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown augmentation op {op!r}; valid ids are 1..10") from None


def _about(centre, m: np.ndarray) -> np.ndarray:
    cx, cy = centre
    to = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    return to @ m @ back


def affine_of(op, image_size: tuple[int, int] = (256, 256)) -> np.ndarray:
    """3x3 homogeneous map on (x, y, 1) composing the op's geometric steps in order."""
    op = get_op(op)
    h, w = image_size
    centre = (w / 2.0, h / 2.0)
    total = np.eye(3)
    for step in op.steps:
        kind = step[0]
        if kind == "rotate":
            t = np.deg2rad(step[1])
            m = _about(centre, np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]]))
        elif kind == "translate":
            m = np.array([[1, 0, step[1]], [0, 1, step[2]], [0, 0, 1]], dtype=np.float64)
        elif kind == "zoom":
            m = _about(centre, np.diag([step[1], step[1], 1.0]))
        else:
            continue
        total = m @ total
    return total


def map_points(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homo = np.hstack([pts, np.ones((len(pts), 1))]) @ matrix.T
    return homo[:, :2] / homo[:, 2:]


def warp_image(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Bilinear warp so that content at p moves to matrix @ p; outside filled with 0."""
    inv = np.linalg.inv(matrix)
    # ndimage works on (row, col): swap x/y of the inverse map
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float64)
    m = swap @ inv @ swap
    out = ndimage.affine_transform(image.astype(np.float64), m[:2, :2], offset=m[:2, 2],
                                   order=1, mode="constant", cval=0.0)
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur_image(image: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(image.astype(np.float64), k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def apply(op, sample: Sample, seed: int = 0) -> Sample:
    """Transform one sample; landmarks follow the exact image affine map.

    Landmarks pushed outside the frame are clamped to the border and listed
    in ``Sample.clamped``.
    """
    op = get_op(op)
    h, w = sample.image.shape
    rng = np.random.default_rng(seed)
    img = sample.image.astype(np.float64)
    geometric = np.eye(3)
    pending = np.eye(3)

    def flush(img, pending):
        if np.array_equal(pending, np.eye(3)):
            return img
        return warp_image(img, pending)

    for step in op.steps:
        kind = step[0]
        if kind in ("rotate", "translate", "zoom"):
            m = affine_of(AugmentOp(op.id, (step,)), (h, w))
            pending = m @ pending
            geometric = m @ geometric
            continue
        # resample once for a run of consecutive geometric steps
        img = flush(img, pending)
        pending = np.eye(3)
        if kind == "noise":
            _, mean, variance = step
            img = _to_uint8(img + rng.normal(mean, np.sqrt(variance), size=img.shape)).astype(np.float64)
        elif kind == "blur":
            img = blur_image(img, step[1])
    img = flush(img, pending)

    pts = map_points(geometric, sample.landmarks.coords)
    lo = np.zeros(2)
    hi = np.array([w - 1, h - 1], dtype=np.float64)
    outside = ((pts < lo) | (pts > hi)).any(axis=1)
    pts = np.clip(pts, lo, hi)
    clamped = tuple(lid for lid, bad in zip(LANDMARK_IDS, outside) if bad)
    return relabel(sample, image=_to_uint8(img), landmarks=LandmarkSet(pts, (h, w)),
                   transform_id=op.id, clamped=clamped)


def derived_seed(seed: int, sample_index: int, op_id: int) -> int:
    return int(np.random.SeedSequence([seed, sample_index, op_id]).generate_state(1)[0])


def augment_corpus(corpus: Corpus, seed: int = 0, op_ids: Sequence[int] | None = None) -> Corpus:
    """Each original followed by its variants under ``op_ids`` (default all ten)."""
    op_ids = ALL_OP_IDS if op_ids is None else tuple(op_ids)
    ops = [get_op(i) for i in op_ids]
    out = []
    for idx, s in enumerate(corpus.samples):
        if not s.is_original:
            raise ValueError(f"augment_corpus expects originals; {s.sample_id} is {s.provenance}")
        out.append(s)
        out.extend(apply(op, s, derived_seed(seed, idx, op.id)) for op in ops)
    meta = dict(corpus.meta)
    meta["augment"] = {"seed": seed, "ops": list(op_ids)}
    return Corpus(out, corpus.pixel_to_cm, meta)


def augmented_count(n_originals: int, op_ids: Iterable[int] = ALL_OP_IDS) -> int:
    return n_originals * (1 + len(tuple(op_ids)))
