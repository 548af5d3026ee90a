"""Training loop, plateau stopping, prediction and model persistence."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import Corpus, Sample, batch_images, to_three_channel
from .engine import AdamState, Tensor, adam_step, mae_loss, zero_grads
from .engine import container
from .flatnet import Network, NetworkSpec, init_params, param_count
from .heatmap import DEFAULT_SIGMA, decode_array, encode_points, group_landmarks
from .landmarks import LANDMARK_IDS, LandmarkSet, landmark_index

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NumericalError(TrainingError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.05
    patience: int = 10
    min_delta: float = 1e-5
    seed: int = 0
    sigma: float = DEFAULT_SIGMA
    precision: str = "float32"

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


class PlateauStopper:
    """Stop once validation loss has not improved by more than ``min_delta``
    for ``patience`` consecutive epochs."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        """Record one epoch; return True when training should stop."""
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience


def stop_epoch(val_losses: Sequence[float], patience: int, min_delta: float = 0.0, max_epochs: int | None = None) -> int:
    """Epoch (1-based) at which the plateau rule halts on a given loss history."""
    stopper = PlateauStopper(patience, min_delta)
    limit = len(val_losses) if max_epochs is None else min(max_epochs, len(val_losses))
    for e in range(limit):
        if stopper.update(val_losses[e]):
            return e + 1
    return limit


@dataclass
class GroupResult:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    history: dict = field(default_factory=dict)
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)


@dataclass
class TrainedModel:
    entries: list[GroupResult]
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = [lid for e in self.entries for lid in e.spec.group]
        if sorted(seen) != sorted(LANDMARK_IDS):
            raise TrainingError(f"model groups must cover each of the 21 landmarks once, got {seen}")

    @property
    def total_weights(self) -> int:
        return sum(param_count(e.spec) for e in self.entries)

    @property
    def input_size(self) -> tuple[int, int] | None:
        return self.entries[0].spec.input_size

    def networks(self, dtype=np.float32) -> list[Network]:
        return [Network(e.spec, {k: np.asarray(v, dtype=dtype) for k, v in e.params.items()}) for e in self.entries]


def default_specs(architecture: str = "flatnet", group_sizes=(5, 4, 4, 4, 4), filters: dict | None = None,
                  dilation_rates=None, kernels=None, input_size=None) -> list[NetworkSpec]:
    """Flat-net: one spec per landmark group.  ConvOnly: a single 21-output network."""
    extra = {}
    if dilation_rates is not None:
        extra["dilation_rates"] = tuple(dilation_rates)
    if kernels is not None:
        extra["kernels"] = tuple(kernels)
    if architecture == "convonly":
        f = filters or {"hidden": [64] * 5}
        return [NetworkSpec("convonly", LANDMARK_IDS, filters=f, input_size=input_size, **extra)]
    groups = group_landmarks(LANDMARK_IDS, group_sizes)
    return [NetworkSpec("flatnet", tuple(g), filters=dict(filters) if filters else NetworkSpec().filters,
                        input_size=input_size, **extra) for g in groups]


def split_validation(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random (train, val) index split; the validation share is rounded half up.

    When rounding leaves no validation sample the training set doubles as
    the validation set.
    """
    n_val = int(math.floor(fraction * n + 0.5))
    perm = rng.permutation(n)
    val = np.sort(perm[:n_val])
    train = np.sort(perm[n_val:])
    return train, val


def heatmap_targets(samples: Sequence[Sample], group: Sequence[str], sigma: float, dtype) -> np.ndarray:
    idx = [landmark_index(lid) for lid in group]
    return np.stack([encode_points(s.landmarks.coords[idx], s.image.shape, sigma) for s in samples]).astype(dtype)


def _mean_loss(net: Network, images: np.ndarray, samples: Sequence[Sample], group, sigma, dtype, batch_size) -> float:
    total, count = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        pred = net.predict_maps(images[start:start + len(chunk)], batch_size)
        tgt = heatmap_targets(chunk, group, sigma, dtype)
        total += float(np.abs(pred.astype(np.float64) - tgt).sum())
        count += tgt.size
    return total / count


def train_network(net: Network, samples: Sequence[Sample], config: TrainConfig, seed: int,
                  label: str = "", on_epoch: Callable[[int, Network], bool] | None = None) -> GroupResult:
    """Fit one network to the heat-maps of its landmark group.

    ``on_epoch(epoch, net)`` runs after each epoch; returning True ends
    training early and keeps the current parameters.
    """
    if not samples:
        raise TrainingError("cannot train on an empty corpus")
    dtype = config.dtype
    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_validation(len(samples), config.val_fraction, rng)
    images = batch_images(samples, dtype)
    train_samples = [samples[i] for i in train_idx]
    val_samples = [samples[i] for i in val_idx] or train_samples
    val_images = images[val_idx] if len(val_idx) else images[train_idx]
    group = net.group
    params = net.parameters()
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    stopper = PlateauStopper(config.patience, config.min_delta)
    history = {"train_loss": [], "val_loss": [], "stopped_epoch": 0, "best_epoch": 0}
    best = {k: p.data.copy() for k, p in net.params.items()}

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_idx))
        running, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            pick = order[start:start + config.batch_size]
            x = Tensor(images[train_idx[pick]])
            target = heatmap_targets([train_samples[i] for i in pick], group, config.sigma, dtype)
            zero_grads(params)
            loss = mae_loss(net(x), target)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"{label or 'network'}: non-finite training loss at epoch {epoch}")
            loss.backward()
            adam_step(params, state)
            running += value * len(pick)
            seen += len(pick)
        train_loss = running / seen
        val_loss = _mean_loss(net, val_images, val_samples, group, config.sigma, dtype, config.batch_size)
        if not math.isfinite(val_loss):
            raise NumericalError(f"{label or 'network'}: non-finite validation loss at epoch {epoch}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = {k: p.data.copy() for k, p in net.params.items()}
        log.info("%s epoch %d train %.6f val %.6f", label, epoch, train_loss, val_loss)
        if on_epoch is not None and on_epoch(epoch, net):
            best = {k: p.data.copy() for k, p in net.params.items()}
            history["target_reached"] = epoch
            break
        if stop:
            break
    history["stopped_epoch"] = stopper.epoch
    history["best_epoch"] = stopper.best_epoch
    return GroupResult(net.spec, best, history, train_idx.tolist(), val_idx.tolist())


def train(specs: Sequence[NetworkSpec], corpus: Corpus, config: TrainConfig) -> TrainedModel:
    """Train each group network independently on ``corpus``."""
    if len(corpus) == 0:
        raise TrainingError("cannot train on an empty corpus")
    covered = sorted(lid for s in specs for lid in s.group)
    if covered != sorted(LANDMARK_IDS):
        raise TrainingError("network groups must partition the 21 landmarks")
    size = corpus.image_size
    entries = []
    for k, spec in enumerate(specs):
        spec = NetworkSpec.from_dict({**spec.to_dict(), "input_size": list(size)})
        net = Network(spec, init_params(spec, _seed(config.seed, k, 0), config.dtype))
        entries.append(train_network(net, corpus.samples, config, _seed(config.seed, k, 1), label=f"group{k + 1}"))
    return TrainedModel(entries, config.sigma, config.seed, config.to_dict())


def _seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass
class Prediction:
    landmarks: LandmarkSet
    degenerate: list[bool]
    maps: np.ndarray | None = None  # H x W x 21


def predict_batch(model: TrainedModel, images: Sequence[np.ndarray], keep_maps: bool = False,
                  batch_size: int = 8) -> list[Prediction]:
    if not len(images):
        return []
    sizes = {np.asarray(im).shape[:2] for im in images}
    expected = model.input_size
    for s in sizes:
        if expected is not None and tuple(s) != tuple(expected):
            raise ValueError(f"image size {s[0]}x{s[1]} does not match model input {expected[0]}x{expected[1]}")
    x = np.stack([to_three_channel(im) for im in images])
    h, w = x.shape[1:3]
    full = np.zeros((len(images), h, w, len(LANDMARK_IDS)), dtype=np.float32)
    for net in model.networks():
        maps = net.predict_maps(x, batch_size)
        for c, lid in enumerate(net.group):
            full[..., landmark_index(lid)] = maps[..., c]
    out = []
    for k in range(len(images)):
        dec = decode_array(full[k])
        out.append(Prediction(LandmarkSet(np.array(dec.points, dtype=np.float64), (h, w)), dec.degenerate,
                              full[k] if keep_maps else None))
    return out


def predict(model: TrainedModel, image: np.ndarray, keep_maps: bool = False) -> Prediction:
    return predict_batch(model, [image], keep_maps)[0]


# ---- persistence ------------------------------------------------------------

SIDECAR = "model.json"


def save_model(model: TrainedModel, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for k, e in enumerate(model.entries):
        fname = f"group{k + 1}.vtlm"
        container.save(directory / fname, {name: np.asarray(v, dtype=np.float32) for name, v in e.params.items()})
        written.append(directory / fname)
        entries.append({"file": fname, "spec": e.spec.to_dict(), "history": e.history,
                        "train_indices": e.train_indices, "val_indices": e.val_indices,
                        "weights": param_count(e.spec)})
    sidecar = {
        "architecture": model.entries[0].spec.architecture,
        "groups": [list(e.spec.group) for e in model.entries],
        "dilation_rates": list(model.entries[0].spec.dilation_rates),
        "filters": model.entries[0].spec.filters,
        "sigma": model.sigma,
        "seed": model.seed,
        "total_weights": model.total_weights,
        "config": model.config,
        "networks": entries,
    }
    (directory / SIDECAR).write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    written.append(directory / SIDECAR)
    return written


def load_model(directory) -> TrainedModel:
    directory = Path(directory)
    path = directory / SIDECAR
    if not path.is_file():
        raise FileNotFoundError(f"model sidecar not found: {path}")
    doc = json.loads(path.read_text())
    entries = []
    for item in doc["networks"]:
        spec = NetworkSpec.from_dict(item["spec"])
        params = container.load(directory / item["file"])
        Network(spec, params)  # validates names and shapes
        entries.append(GroupResult(spec, params, item.get("history", {}),
                                   item.get("train_indices", []), item.get("val_indices", [])))
    return TrainedModel(entries, float(doc["sigma"]), int(doc["seed"]), doc.get("config", {}))
