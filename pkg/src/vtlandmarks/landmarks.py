"""The 21 vocal-tract landmarks and the coordinate container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

LANDMARK_IDS: tuple[str, ...] = (
    "ANS", "EG", "ET", "LC", "LLSV", "LLV", "LT", "N", "NM", "NP", "NPX",
    "PL", "PNS", "TE", "TJ", "TS", "TT", "ULPV", "ULV", "UT", "VT",
)

LANDMARK_NAMES: dict[str, str] = {
    "ANS": "Anterior Nasal Spine",
    "EG": "Epiglottis-Glottis",
    "ET": "Epiglottis Tip",
    "LC": "Lip-Chin",
    "LLSV": "Lower Lip Skin Vermillion",
    "LLV": "Lower Lip Vermillion",
    "LT": "Lower Teeth",
    "N": "Nose",
    "NM": "Neck-Mandible",
    "NP": "Nose-Philtrum",
    "NPX": "Nasopharynx",
    "PL": "Pharynx-Larynx",
    "PNS": "Posterior Nasal Spine",
    "TE": "Tongue-Epiglottis",
    "TJ": "Tongue-Jaw",
    "TS": "Tongue Sub",
    "TT": "Tongue Tip",
    "ULPV": "Upper Lip Philtrum Vermillion",
    "ULV": "Upper Lip Vermillion",
    "UT": "Upper Teeth",
    "VT": "Velum Tip",
}

N_LANDMARKS = len(LANDMARK_IDS)
_INDEX = {name: i for i, name in enumerate(LANDMARK_IDS)}


class LandmarkError(ValueError):
    pass


def landmark_index(lid: str) -> int:
    try:
        return _INDEX[lid]
    except KeyError:
        raise LandmarkError(f"unknown landmark id {lid!r}") from None


@dataclass(frozen=True)
class LandmarkSet:
    """Coordinates of all 21 landmarks in canonical order.

    ``coords[k] = (x, y)`` with x the column and y the row, origin at the
    centre of the top-left pixel.
    """

    coords: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (N_LANDMARKS, 2):
            raise LandmarkError(f"expected {N_LANDMARKS} landmarks, got array of shape {coords.shape}")
        if not np.isfinite(coords).all():
            raise LandmarkError("landmark coordinates must be finite")
        h, w = self.image_size
        bad = np.flatnonzero((coords[:, 0] < 0) | (coords[:, 0] >= w) | (coords[:, 1] < 0) | (coords[:, 1] >= h))
        if bad.size:
            k = int(bad[0])
            raise LandmarkError(
                f"landmark {LANDMARK_IDS[k]} at ({coords[k, 0]:g}, {coords[k, 1]:g}) is outside a {h}x{w} image"
            )
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "image_size", (int(h), int(w)))

    @classmethod
    def from_mapping(cls, points: Mapping[str, tuple[float, float]], image_size) -> "LandmarkSet":
        unknown = set(points) - set(LANDMARK_IDS)
        if unknown:
            raise LandmarkError(f"unknown landmark ids: {sorted(unknown)}")
        missing = [lid for lid in LANDMARK_IDS if lid not in points]
        if missing:
            raise LandmarkError(f"expected {N_LANDMARKS} landmarks, missing {missing}")
        return cls(np.array([points[lid] for lid in LANDMARK_IDS], dtype=np.float64), tuple(image_size))

    @classmethod
    def from_triples(cls, triples: Iterable, image_size) -> "LandmarkSet":
        triples = list(triples)
        if len(triples) != N_LANDMARKS:
            raise LandmarkError(f"expected {N_LANDMARKS} landmarks, got {len(triples)}")
        points = {}
        for lid, x, y in triples:
            if lid in points:
                raise LandmarkError(f"duplicate landmark id {lid!r}")
            points[lid] = (float(x), float(y))
        return cls.from_mapping(points, image_size)

    def __getitem__(self, lid: str) -> tuple[float, float]:
        x, y = self.coords[landmark_index(lid)]
        return float(x), float(y)

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {lid: (float(x), float(y)) for lid, (x, y) in zip(LANDMARK_IDS, self.coords)}

    def triples(self) -> list[list]:
        return [[lid, float(x), float(y)] for lid, (x, y) in zip(LANDMARK_IDS, self.coords)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.image_size == other.image_size and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash((self.image_size, self.coords.tobytes()))
