"""Localization metrics, paired t-test, CV / LoSo schemes and report files."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .dataset import Corpus, Sample
from .landmarks import LANDMARK_IDS, landmark_index

OUTLIER_THRESHOLD_PX = 5.0


class DegenerateVarianceError(ValueError):
    """Paired differences have zero variance, so t is undefined."""


# ---- point metrics ------------------------------------------------------------

def distance(g, p) -> float:
    return math.hypot(float(g[0]) - float(p[0]), float(g[1]) - float(p[1]))


def distances(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    diff = np.asarray(gt, dtype=np.float64) - np.asarray(pred, dtype=np.float64)
    return np.sqrt((diff ** 2).sum(axis=-1))


def rmse(errors: Iterable, pixel_to_cm: float | None = None) -> float:
    """sqrt(mean(dx^2 + dy^2)) over (dx, dy) pairs; in cm when ``pixel_to_cm`` is given."""
    arr = np.asarray(list(errors) if not isinstance(errors, np.ndarray) else errors, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rmse of an empty error list")
    arr = arr.reshape(-1, 2)
    value = math.sqrt(float((arr ** 2).sum()) / len(arr))
    return value * pixel_to_cm if pixel_to_cm is not None else value


def outlier_rate(dists: Iterable[float], threshold: float = OUTLIER_THRESHOLD_PX) -> float:
    """Percentage of distances strictly above ``threshold``."""
    arr = np.asarray(list(dists) if not isinstance(dists, np.ndarray) else dists, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("outlier_rate of an empty distance list")
    return 100.0 * float((arr > threshold).sum()) / arr.size


# ---- Student t ------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    n: int

    def to_dict(self) -> dict:
        return {"t": self.t, "df": self.df, "p": self.p, "p_display": format_p(self.p), "n": self.n}


def format_p(p: float) -> str:
    return "0" if p < 1e-300 else f"{p:.3g}"


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired_ttest needs equal-length 1-D samples, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired_ttest needs at least 2 pairs")
    diff = a - b
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0:
        raise DegenerateVarianceError("paired differences have zero variance")
    t = float(diff.mean()) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, student_t_two_tailed(t, n - 1), n)


# ---- report -------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    """Per (sample, landmark) errors of one method under one scheme."""

    method: str
    scheme: str
    sample_ids: list[str]
    subjects: list[str]
    landmarks: list[str]
    dx: np.ndarray  # n_samples x n_landmarks, ground truth minus prediction
    dy: np.ndarray
    pixel_to_cm: float = 0.1
    meta: dict = field(default_factory=dict)
    ttests: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64).reshape(len(self.sample_ids), len(self.landmarks))
        self.dy = np.asarray(self.dy, dtype=np.float64).reshape(len(self.sample_ids), len(self.landmarks))
        if len(self.subjects) != len(self.sample_ids):
            raise ValueError("subjects and sample_ids differ in length")

    @property
    def distances(self) -> np.ndarray:
        return np.sqrt(self.dx ** 2 + self.dy ** 2)

    def rmse_px(self) -> float:
        return math.sqrt(float((self.dx ** 2 + self.dy ** 2).mean()))

    def rmse_cm(self) -> float:
        return self.rmse_px() * self.pixel_to_cm

    def per_landmark_rmse_cm(self) -> dict[str, float]:
        sq = self.dx ** 2 + self.dy ** 2
        return {lid: math.sqrt(float(sq[:, k].mean())) * self.pixel_to_cm for k, lid in enumerate(self.landmarks)}

    def per_landmark_outliers(self, threshold: float = OUTLIER_THRESHOLD_PX) -> dict[str, float]:
        d = self.distances
        return {lid: outlier_rate(d[:, k], threshold) for k, lid in enumerate(self.landmarks)}

    def per_subject_rmse_cm(self) -> dict[str, float]:
        sq = self.dx ** 2 + self.dy ** 2
        subj = np.asarray(self.subjects)
        out = {}
        for s in dict.fromkeys(self.subjects):
            out[s] = math.sqrt(float(sq[subj == s].mean())) * self.pixel_to_cm
        return out

    def summary(self) -> dict:
        d = self.distances.reshape(-1)
        return {
            "method": self.method,
            "scheme": self.scheme,
            "n_samples": len(self.sample_ids),
            "n_landmarks": len(self.landmarks),
            "pixel_to_cm": self.pixel_to_cm,
            "overall_rmse_px": self.rmse_px(),
            "overall_rmse_cm": self.rmse_cm(),
            # mean/std taken over all (sample, landmark) pairs
            "distance_mean_px": float(d.mean()),
            "distance_std_px": float(d.std(ddof=1)) if d.size > 1 else 0.0,
            "outlier_rate_pct": outlier_rate(d),
            "rmse_per_landmark_cm": self.per_landmark_rmse_cm(),
            "outliers_per_landmark_pct": self.per_landmark_outliers(),
            "rmse_per_subject_cm": self.per_subject_rmse_cm(),
            "meta": self.meta,
            "ttests": {k: v.to_dict() if isinstance(v, TTestResult) else v for k, v in self.ttests.items()},
        }

    def compare(self, other: "EvaluationReport") -> TTestResult:
        """Paired t-test on distance errors against another method on the same samples."""
        if other.sample_ids != self.sample_ids or other.landmarks != self.landmarks:
            raise ValueError("reports cover different samples or landmarks")
        return paired_ttest(self.distances.reshape(-1), other.distances.reshape(-1))


def build_report(method: str, scheme: str, samples: Sequence[Sample], predicted: np.ndarray,
                 pixel_to_cm: float, landmarks: Sequence[str] = LANDMARK_IDS, meta: dict | None = None) -> EvaluationReport:
    """``predicted`` is n_samples x len(landmarks) x 2 in (x, y)."""
    idx = [landmark_index(lid) for lid in landmarks]
    gt = np.stack([s.landmarks.coords[idx] for s in samples]) if samples else np.zeros((0, len(idx), 2))
    predicted = np.asarray(predicted, dtype=np.float64).reshape(gt.shape)
    diff = gt - predicted
    return EvaluationReport(method, scheme, [s.sample_id for s in samples], [s.subject_id for s in samples],
                            list(landmarks), diff[..., 0], diff[..., 1], pixel_to_cm, dict(meta or {}))


def merge_reports(parts: Sequence[EvaluationReport], meta: dict | None = None) -> EvaluationReport:
    first = parts[0]
    return EvaluationReport(
        first.method, first.scheme,
        [s for p in parts for s in p.sample_ids], [s for p in parts for s in p.subjects], list(first.landmarks),
        np.concatenate([p.dx for p in parts]), np.concatenate([p.dy for p in parts]),
        first.pixel_to_cm, dict(meta or first.meta),
    )


# ---- schemes --------------------------------------------------------------------------

class Trainer(Protocol):
    """Fits a model on a training corpus and returns a predictor.

    The predictor maps a list of samples to an n x 21 x 2 array of (x, y).
    """

    name: str

    def __call__(self, train: Corpus, seed: int) -> Callable[[Sequence[Sample]], np.ndarray]: ...


def round_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, index]).generate_state(1)[0])


def cv_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Random partition of range(n) into k folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _cv_round(args):
    corpus, trainer, fold, i, seed, method = args
    test_mask = np.zeros(len(corpus), dtype=bool)
    test_mask[fold] = True
    train = corpus.subset(np.flatnonzero(~test_mask))
    test = [corpus[j] for j in fold]
    predictor = trainer(train, round_seed(seed, i))
    pred = predictor(test)
    return build_report(method, "cv", test, pred, corpus.pixel_to_cm), len(train)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_cv(corpus: Corpus, trainer: Trainer, k: int = 10, seed: int = 0, jobs: int = 1) -> EvaluationReport:
    """Randomized k-fold CV; every sample is tested exactly once."""
    folds = cv_folds(len(corpus), k, seed)
    method = getattr(trainer, "name", "model")
    results = _map(_cv_round, [(corpus, trainer, f, i, seed, method) for i, f in enumerate(folds)], jobs)
    meta = {
        "scheme": "cv", "k": k, "seed": seed,
        "fold_test_sizes": [len(f) for f in folds],
        "fold_train_sizes": [n for _, n in results],
        "folds": [[corpus[j].sample_id for j in f] for f in folds],
    }
    return merge_reports([r for r, _ in results], meta)


def _loso_round(args):
    originals, augmenter, trainer, subject, i, seed, method = args
    train_orig = originals.where(lambda s: s.subject_id != subject)
    test = [s for s in originals if s.subject_id == subject]
    train = augmenter(train_orig, round_seed(seed, 1000 + i)) if augmenter is not None else train_orig
    leaked = [s.sample_id for s in train if s.subject_id == subject]
    if leaked:
        raise AssertionError(f"held-out subject {subject} leaked into training: {leaked[:3]}")
    predictor = trainer(train, round_seed(seed, i))
    pred = predictor(test)
    return build_report(method, "loso", test, pred, originals.pixel_to_cm), len(train)


def run_loso(originals: Corpus, augmenter, trainer: Trainer, seed: int = 0, jobs: int = 1) -> EvaluationReport:
    """Leave-one-subject-out: test on one subject's originals, train on the
    augmentation of everyone else's originals."""
    originals = originals.originals()
    subjects = originals.subjects
    if len(subjects) < 2:
        raise ValueError(f"LoSo needs at least 2 subjects, got {len(subjects)}")
    method = getattr(trainer, "name", "model")
    results = _map(_loso_round, [(originals, augmenter, trainer, s, i, seed, method)
                                 for i, s in enumerate(subjects)], jobs)
    meta = {"scheme": "loso", "seed": seed, "subject_order": subjects,
            "train_sizes": [n for _, n in results]}
    return merge_reports([r for r, _ in results], meta)


# ---- files -----------------------------------------------------------------------------

REPORT_FILES = ("rmse_per_landmark.csv", "outliers_per_landmark.csv", "rmse_per_subject.csv",
                "distances_raw.csv", "summary.json")


def _write_matrix(path: Path, key: str, columns: dict[str, dict[str, float]], rows: Sequence[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, *columns])
        for r in rows:
            w.writerow([r, *(repr(float(col[r])) for col in columns.values())])


def report_emit(report: EvaluationReport | Sequence[EvaluationReport], out_dir) -> list[Path]:
    """Write the CSV matrices and JSON summary.

    Matrices have one column per method-run (``<method>_<scheme>``); the raw
    distance file and the summary describe the first report, further reports
    add their summaries under ``others``.
    """
    reports = [report] if isinstance(report, EvaluationReport) else list(report)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write report directory {out}: {exc}") from exc
    main = reports[0]
    cols = {f"{r.method}_{r.scheme}": r for r in reports}
    _write_matrix(out / "rmse_per_landmark.csv", "landmark",
                  {k: r.per_landmark_rmse_cm() for k, r in cols.items()}, main.landmarks)
    _write_matrix(out / "outliers_per_landmark.csv", "landmark",
                  {k: r.per_landmark_outliers() for k, r in cols.items()}, main.landmarks)
    subjects = list(dict.fromkeys(main.subjects))
    _write_matrix(out / "rmse_per_subject.csv", "subject",
                  {k: r.per_subject_rmse_cm() for k, r in cols.items() if list(dict.fromkeys(r.subjects)) == subjects},
                  subjects)
    with (out / "distances_raw.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "subject", "landmark_id", "dx_px", "dy_px", "d_px"])
        dist = main.distances
        for i, sid in enumerate(main.sample_ids):
            for k, lid in enumerate(main.landmarks):
                w.writerow([sid, main.subjects[i], lid, repr(float(main.dx[i, k])), repr(float(main.dy[i, k])),
                            repr(float(dist[i, k]))])
    summary = main.summary()
    if len(reports) > 1:
        summary["others"] = [r.summary() for r in reports[1:]]
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return [out / f for f in REPORT_FILES]


def load_report(out_dir) -> EvaluationReport:
    """Rebuild the primary report from ``distances_raw.csv`` and ``summary.json``."""
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    rows = list(csv.DictReader((out / "distances_raw.csv").open()))
    sample_ids = list(dict.fromkeys(r["sample_id"] for r in rows))
    landmarks = list(dict.fromkeys(r["landmark_id"] for r in rows))
    si = {s: i for i, s in enumerate(sample_ids)}
    li = {l: k for k, l in enumerate(landmarks)}
    dx = np.zeros((len(sample_ids), len(landmarks)))
    dy = np.zeros_like(dx)
    subjects = [""] * len(sample_ids)
    for r in rows:
        i, k = si[r["sample_id"]], li[r["landmark_id"]]
        dx[i, k] = float(r["dx_px"])
        dy[i, k] = float(r["dy_px"])
        subjects[i] = r["subject"]
    return EvaluationReport(summary["method"], summary["scheme"], sample_ids, subjects, landmarks, dx, dy,
                            summary["pixel_to_cm"], summary.get("meta", {}), summary.get("ttests", {}))
