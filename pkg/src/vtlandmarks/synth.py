"""Procedural midsagittal-like corpus with exact landmark ground truth.

Each subject gets a morphology (similarity transform plus small per-point
offsets); each articulation gets a pose (jaw opening, tongue position,
lip protrusion, velum lift) shared by all subjects.  Landmarks and the
auxiliary outline points are computed from those parameters, and the image
is painted from the same points, so the landmarks sit on visible structure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .dataset import Corpus, DEFAULT_PIXEL_TO_CM, Sample
from .landmarks import LANDMARK_IDS, LandmarkSet

FRAME = 256.0  # canonical geometry lives in a 256 x 256 frame

# (x, y) in the canonical frame; face looks to the left.
CANONICAL: dict[str, tuple[float, float]] = {
    "N": (42, 92), "NP": (60, 107), "ANS": (82, 108), "PNS": (138, 110),
    "NPX": (160, 94), "VT": (152, 136), "ULPV": (54, 124), "ULV": (60, 137),
    "UT": (74, 139), "LT": (75, 147), "LLV": (62, 150), "LLSV": (57, 161),
    "LC": (64, 177), "TT": (86, 148), "TS": (94, 165), "TJ": (108, 186),
    "NM": (122, 206), "TE": (150, 178), "ET": (156, 166), "EG": (162, 212),
    "PL": (176, 198),
    # outline and structure helpers
    "_forehead": (54, 28), "_crown": (150, 16), "_occiput": (236, 104),
    "_nape": (222, 250), "_throat": (140, 250), "_chin": (60, 198),
    "_dorsum_front": (104, 132), "_dorsum_mid": (124, 128), "_dorsum_back": (142, 142),
    "_pharynx_top": (176, 120), "_nasal_floor": (110, 104), "_ut_root": (76, 124),
    "_lt_root": (78, 162), "_condyle": (172, 118), "_mouth": (70, 143),
}
POINTS = tuple(CANONICAL)
_P = {name: i for i, name in enumerate(POINTS)}
_JAW = ("LT", "LLV", "LLSV", "LC", "_chin", "NM", "_lt_root", "TS", "TJ")
_TONGUE = ("TT", "TS", "_dorsum_front", "_dorsum_mid", "_dorsum_back", "TE", "ET")
_LIPS = ("ULPV", "ULV", "LLV", "LLSV")


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 9
    n_articulations: int = 12
    image_size: tuple[int, int] = (256, 256)
    seed: int = 0
    morphology_amplitude: float = 1.0
    articulation_amplitude: float = 1.0
    noise_level: float = 4.0
    max_retries: int = 20

    def __post_init__(self):
        if self.n_subjects < 1 or self.n_articulations < 1:
            raise ValueError("n_subjects and n_articulations must be positive")
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ValueError(f"image size {self.image_size} too small (min 16x16)")
        if self.morphology_amplitude < 0 or self.articulation_amplitude < 0:
            raise ValueError("amplitudes must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d


def _rotate(pts: np.ndarray, centre, degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    d = pts - centre
    return np.stack([centre[0] + c * d[:, 0] - s * d[:, 1], centre[1] + s * d[:, 0] + c * d[:, 1]], axis=1)


def sample_morphology(rng: np.random.Generator, amplitude: float) -> dict:
    return {
        "scale": float(1.0 + amplitude * np.clip(rng.normal(0, 0.05), -0.12, 0.12)),
        "rotation": float(amplitude * np.clip(rng.normal(0, 3.0), -7, 7)),
        "shift": (amplitude * np.clip(rng.normal(0, 7.0, size=2), -14, 14)).tolist(),
        "offsets": (amplitude * np.clip(rng.normal(0, 2.0, size=(len(POINTS), 2)), -5, 5)).tolist(),
        "tissue": float(amplitude * rng.uniform(-15, 15)),
    }


def sample_pose(rng: np.random.Generator, amplitude: float) -> dict:
    return {
        "jaw": float(amplitude * rng.uniform(0.0, 10.0)),
        "tongue_front": float(amplitude * rng.normal(0, 5.0)),
        "tongue_height": float(amplitude * rng.normal(0, 4.0)),
        "lips": float(amplitude * rng.normal(0, 3.0)),
        "velum": float(amplitude * rng.uniform(0.0, 1.0)),
    }


def articulate(morph: dict, pose: dict) -> np.ndarray:
    """All canonical + helper points for one (subject, articulation), canonical frame."""
    pts = np.array([CANONICAL[n] for n in POINTS], dtype=np.float64)
    pts += np.asarray(morph["offsets"], dtype=np.float64)

    tongue = [_P[n] for n in _TONGUE]
    pts[tongue, 0] += pose["tongue_front"] * np.array([1.0, 0.8, 0.9, 0.7, 0.5, 0.3, 0.2])
    pts[tongue, 1] -= pose["tongue_height"] * np.array([0.6, 0.3, 0.9, 1.0, 0.8, 0.3, 0.2])
    lips = [_P[n] for n in _LIPS]
    pts[lips, 0] -= pose["lips"]
    pts[_P["VT"]] += pose["velum"] * np.array([8.0, -10.0])

    jaw = [_P[n] for n in _JAW]
    condyle = pts[_P["_condyle"]].copy()
    pts[jaw] = _rotate(pts[jaw], condyle, -pose["jaw"])
    # the tongue body rides half-way on the jaw
    carried = [_P[n] for n in ("TT", "_dorsum_front", "_dorsum_mid")]
    pts[carried] = _rotate(pts[carried], condyle, -0.5 * pose["jaw"])

    centre = np.array([FRAME / 2, FRAME / 2])
    pts = _rotate(pts, centre, morph["rotation"])
    pts = centre + morph["scale"] * (pts - centre) + np.asarray(morph["shift"])
    return pts


# ---- painting -------------------------------------------------------------

def _catmull_rom(ctrl: np.ndarray, closed: bool, per_seg: int = 12) -> np.ndarray:
    """Interpolating spline through ``ctrl`` (passes every control point)."""
    p = np.asarray(ctrl, dtype=np.float64)
    if closed:
        ext = np.vstack([p[-1:], p, p[:2]])
        nseg = len(p)
    else:
        ext = np.vstack([2 * p[0] - p[1], p, 2 * p[-1] - p[-2]])
        nseg = len(p) - 1
    t = np.linspace(0, 1, per_seg, endpoint=False)[:, None]
    out = []
    for k in range(nseg):
        p0, p1, p2, p3 = ext[k], ext[k + 1], ext[k + 2], ext[k + 3]
        out.append(0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3))
    if not closed:
        out.append(p[-1:])
    return np.vstack(out)


def _polygon_mask(poly: np.ndarray, h: int, w: int) -> np.ndarray:
    """Even-odd fill evaluated at pixel centres."""
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    xs = np.arange(w, dtype=np.float64)[:, None]
    mask = np.zeros((h, w), dtype=bool)
    for row in range(h):
        y = float(row)
        edges = (y0 <= y) != (y1 <= y)
        if not edges.any():
            continue
        xa, ya, xb, yb = x0[edges], y0[edges], x1[edges], y1[edges]
        xcross = xa + (y - ya) * (xb - xa) / (yb - ya)
        mask[row] = ((xs < xcross).sum(axis=1) % 2) == 1
    return mask


def _stroke_mask(path: np.ndarray, width: float, h: int, w: int) -> np.ndarray:
    """Pixels within width/2 of the polyline."""
    ys, xs = np.mgrid[0:h, 0:w]
    q = np.stack([xs, ys], axis=-1).astype(np.float64)[..., None, :]
    a, b = path[:-1], path[1:]
    ab = b - a
    denom = np.maximum((ab ** 2).sum(-1), 1e-12)
    t = np.clip(((q - a) * ab).sum(-1) / denom, 0.0, 1.0)
    nearest = a + t[..., None] * ab
    dist = np.sqrt(((q - nearest) ** 2).sum(-1)).min(axis=-1)
    return dist <= width / 2.0


def render(pts: np.ndarray, image_size: tuple[int, int], rng: np.random.Generator,
           tissue_offset: float = 0.0, noise_level: float = 4.0) -> np.ndarray:
    """Paint an 8-bit image from canonical-frame points."""
    h, w = image_size
    sx, sy = w / FRAME, h / FRAME
    P = {n: pts[i] * (sx, sy) for n, i in _P.items()}
    unit = min(sx, sy)

    def cat(names):
        return np.array([P[n] for n in names])

    canvas = np.full((h, w), 12.0)
    tissue = 120.0 + tissue_offset

    head = _catmull_rom(cat(["_forehead", "N", "NP", "ULPV", "ULV", "_mouth", "LLV", "LLSV", "LC",
                             "_chin", "NM", "_throat", "_nape", "_occiput", "_crown"]), closed=True)
    canvas[_polygon_mask(head, h, w)] = tissue

    # vocal tract airway: oral channel over the tongue, pharynx down to the larynx
    airway = _catmull_rom(cat(["_mouth", "UT", "_nasal_floor", "PNS", "NPX", "_pharynx_top", "PL", "EG",
                               "ET", "TE", "_dorsum_back", "_dorsum_mid", "_dorsum_front", "TT", "LT"]),
                          closed=True, per_seg=10)
    canvas[_polygon_mask(airway, h, w)] = 18.0

    tongue = _catmull_rom(cat(["TT", "_dorsum_front", "_dorsum_mid", "_dorsum_back", "TE", "TJ", "TS"]), closed=True)
    canvas[_polygon_mask(tongue, h, w)] = tissue + 70.0

    palate = cat(["ANS", "_nasal_floor", "PNS"])
    canvas[_stroke_mask(palate, 4.0 * unit, h, w)] = 235.0
    velum = _catmull_rom(cat(["PNS", "VT"]), closed=False)
    canvas[_stroke_mask(velum, 7.0 * unit, h, w)] = tissue + 40.0
    canvas[_stroke_mask(cat(["EG", "ET"]), 3.0 * unit, h, w)] = 225.0
    canvas[_stroke_mask(cat(["_ut_root", "UT"]), 5.0 * unit, h, w)] = 250.0
    canvas[_stroke_mask(cat(["_lt_root", "LT"]), 5.0 * unit, h, w)] = 250.0
    canvas[_stroke_mask(cat(["_chin", "NM"]), 3.0 * unit, h, w)] = 60.0

    canvas = ndimage.gaussian_filter(canvas, sigma=0.8 * max(unit, 0.5), mode="nearest")
    canvas += rng.normal(0.0, noise_level, size=canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def generate_synthetic(config: SynthConfig = SynthConfig()) -> Corpus:
    h, w = config.image_size
    root = np.random.default_rng(config.seed)
    morph_rng, pose_rng, noise_rng = root.spawn(3)
    morphs = [sample_morphology(morph_rng, config.morphology_amplitude) for _ in range(config.n_subjects)]
    sx, sy = w / FRAME, h / FRAME
    lm_rows = [_P[lid] for lid in LANDMARK_IDS]

    def fits(pts: np.ndarray) -> bool:
        xy = pts[lm_rows] * (sx, sy)
        return bool(((xy[:, 0] >= 1) & (xy[:, 0] < w - 1) & (xy[:, 1] >= 1) & (xy[:, 1] < h - 1)).all())

    poses = []
    for a in range(config.n_articulations):
        for _ in range(config.max_retries):
            pose = sample_pose(pose_rng, config.articulation_amplitude)
            if all(fits(articulate(m, pose)) for m in morphs):
                break
        else:
            raise SynthError(f"articulation {a + 1}: landmarks left the frame after {config.max_retries} retries")
        poses.append(pose)

    samples = []
    for s, morph in enumerate(morphs):
        for a, pose in enumerate(poses):
            pts = articulate(morph, pose)
            coords = pts[lm_rows] * (sx, sy)
            image = render(pts, (h, w), noise_rng, morph["tissue"], config.noise_level)
            samples.append(Sample(f"S{s + 1:02d}", f"A{a + 1:02d}", image, LandmarkSet(coords, (h, w))))
    return Corpus(samples, DEFAULT_PIXEL_TO_CM, {"synth": config.to_dict()})


def landmark_spreads(corpus: Corpus) -> tuple[float, float]:
    """(mean inter-subject spread, mean intra-subject spread) in pixels.

    Spread of a point cloud = RMS distance to its centroid.  Inter-subject:
    per articulation, across subjects.  Intra-subject: per subject, across
    articulations.  Both averaged over landmarks and groups.
    """
    subjects, arts = corpus.subjects, corpus.articulations
    grid = np.zeros((len(subjects), len(arts), len(LANDMARK_IDS), 2))
    si = {s: i for i, s in enumerate(subjects)}
    ai = {a: i for i, a in enumerate(arts)}
    for smp in corpus.originals():
        grid[si[smp.subject_id], ai[smp.articulation_id]] = smp.landmarks.coords

    def spread(arr: np.ndarray, axis: int) -> float:
        centred = arr - arr.mean(axis=axis, keepdims=True)
        return float(np.sqrt((centred ** 2).sum(-1).mean(axis=axis)).mean())

    return spread(grid, 0), spread(grid, 1)
