"""Samples, corpora, and the JSON-manifest + PGM on-disk format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .landmarks import LandmarkError, LandmarkSet
from .pgm import read_pgm, write_pgm

DEFAULT_PIXEL_TO_CM = 0.1


class CorpusError(ValueError):
    pass


def parse_provenance(text: str) -> int | None:
    """``"original"`` -> None, ``"augmented:<id>"`` -> id."""
    if text == "original":
        return None
    kind, _, num = text.partition(":")
    if kind == "augmented" and num.isdigit() and 1 <= int(num) <= 10:
        return int(num)
    raise CorpusError(f"bad provenance {text!r}; expected 'original' or 'augmented:<1-10>'")


@dataclass(frozen=True)
class Sample:
    subject_id: str
    articulation_id: str
    image: np.ndarray  # H x W uint8
    landmarks: LandmarkSet
    transform_id: int | None = None
    clamped: tuple[str, ...] = ()  # landmarks clamped to the border by augmentation

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 2 or img.dtype != np.uint8:
            raise CorpusError(f"sample {self.subject_id}/{self.articulation_id}: image must be 2-D uint8, got {img.dtype} {img.shape}")
        if img.shape != self.landmarks.image_size:
            raise CorpusError(
                f"sample {self.subject_id}/{self.articulation_id}: image {img.shape} does not match landmark frame {self.landmarks.image_size}"
            )
        if self.transform_id is not None and not 1 <= self.transform_id <= 10:
            raise CorpusError(f"transform id must be in 1..10, got {self.transform_id}")

    @property
    def provenance(self) -> str:
        return "original" if self.transform_id is None else f"augmented:{self.transform_id}"

    @property
    def is_original(self) -> bool:
        return self.transform_id is None

    @property
    def sample_id(self) -> str:
        suffix = "" if self.transform_id is None else f"_aug{self.transform_id:02d}"
        return f"{self.subject_id}_{self.articulation_id}{suffix}"

    @property
    def key(self) -> tuple[str, str, str]:
        return self.subject_id, self.articulation_id, self.provenance

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.key == other.key and self.landmarks == other.landmarks
                and np.array_equal(self.image, other.image) and self.clamped == other.clamped)

    __hash__ = None


@dataclass
class Corpus:
    samples: list[Sample]
    pixel_to_cm: float = DEFAULT_PIXEL_TO_CM
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.pixel_to_cm > 0:
            raise CorpusError(f"pixel_to_cm must be positive, got {self.pixel_to_cm}")
        seen = set()
        for s in self.samples:
            if s.key in seen:
                raise CorpusError(f"duplicate sample {s.key}")
            seen.add(s.key)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def subjects(self) -> list[str]:
        return list(dict.fromkeys(s.subject_id for s in self.samples))

    @property
    def articulations(self) -> list[str]:
        return list(dict.fromkeys(s.articulation_id for s in self.samples))

    @property
    def image_size(self) -> tuple[int, int]:
        sizes = {s.image.shape for s in self.samples}
        if len(sizes) != 1:
            raise CorpusError(f"corpus mixes image sizes {sorted(sizes)}")
        return sizes.pop()

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus([self.samples[i] for i in indices], self.pixel_to_cm, dict(self.meta))

    def where(self, pred) -> "Corpus":
        return Corpus([s for s in self.samples if pred(s)], self.pixel_to_cm, dict(self.meta))

    def originals(self) -> "Corpus":
        return self.where(lambda s: s.is_original)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.pixel_to_cm == other.pixel_to_cm and self.samples == other.samples


def to_three_channel(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """H x W 8-bit grayscale -> H x W x 3 in [0, 1] by channel repetition."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {image.shape}")
    scaled = image.astype(dtype) / dtype(255.0)
    return np.repeat(scaled[:, :, None], 3, axis=2)


def batch_images(samples: Sequence[Sample], dtype=np.float32) -> np.ndarray:
    return np.stack([to_three_channel(s.image, dtype) for s in samples])


def save_corpus(corpus: Corpus, manifest_path, image_dir: str = "images") -> Path:
    """Write images as 8-bit PGM plus a JSON manifest next to them."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    (root / image_dir).mkdir(parents=True, exist_ok=True)
    entries = []
    for s in corpus.samples:
        rel = f"{image_dir}/{s.sample_id}.pgm"
        write_pgm(root / rel, s.image)
        entry = {
            "subject": s.subject_id,
            "articulation": s.articulation_id,
            "image": rel,
            "landmarks": s.landmarks.triples(),
            "provenance": s.provenance,
        }
        if s.clamped:
            entry["clamped"] = list(s.clamped)
        entries.append(entry)
    doc = {"pixel_to_cm": corpus.pixel_to_cm, "samples": entries}
    if corpus.meta:
        doc["meta"] = corpus.meta
    manifest_path.write_text(json.dumps(doc, indent=1) + "\n")
    return manifest_path


def load_corpus(manifest_path) -> Corpus:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("samples"), list):
        raise CorpusError(f"{manifest_path}: manifest needs a 'samples' list")
    root = manifest_path.parent
    samples = []
    for i, entry in enumerate(doc["samples"]):
        label = f"sample #{i} ({entry.get('subject')}/{entry.get('articulation')})"
        try:
            img_path = root / entry["image"]
            if not img_path.is_file():
                raise FileNotFoundError(f"{label}: image file not found: {img_path}")
            image = read_pgm(img_path)
            if image.dtype != np.uint8:
                raise CorpusError(f"{label}: image must be 8-bit")
            landmarks = LandmarkSet.from_triples(entry["landmarks"], image.shape)
            samples.append(Sample(
                str(entry["subject"]), str(entry["articulation"]), image, landmarks,
                parse_provenance(entry.get("provenance", "original")),
                tuple(entry.get("clamped", ())),
            ))
        except LandmarkError as exc:
            raise CorpusError(f"{label}: {exc}") from exc
        except KeyError as exc:
            raise CorpusError(f"{label}: missing field {exc}") from exc
    return Corpus(samples, float(doc.get("pixel_to_cm", DEFAULT_PIXEL_TO_CM)), doc.get("meta", {}))


def relabel(sample: Sample, **changes) -> Sample:
    return replace(sample, **changes)
