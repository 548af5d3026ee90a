"""Glue between training and the evaluation schemes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .augment import ALL_OP_IDS, augment_corpus
from .dataset import Corpus, Sample
from .training import TrainConfig, TrainedModel, default_specs, predict_batch, train

# Filter-width presets.  "paper" lands near the published weight count; the
# smaller ones keep CPU-only desk runs tractable.
FILTER_PRESETS = {
    "paper": {"branch1": 32, "branch2": 32, "l4": 576, "l5": 256, "l6": 128},
    "desk": {"branch1": 4, "branch2": 4, "l4": 16, "l5": 16, "l6": 16},
    "overfit": {"branch1": 8, "branch2": 8, "l4": 32, "l5": 32, "l6": 32},
}
CONVONLY_PRESETS = {
    "paper": {"hidden": [64, 64, 64, 64, 64]},
    "desk": {"hidden": [8, 8, 8, 8, 8]},
    "overfit": {"hidden": [16, 16, 16, 16, 16]},
}


def resolve_filters(architecture: str, filters) -> dict:
    if isinstance(filters, dict):
        return dict(filters)
    presets = FILTER_PRESETS if architecture == "flatnet" else CONVONLY_PRESETS
    if filters not in presets:
        raise ValueError(f"unknown filter preset {filters!r}; choose from {sorted(presets)}")
    return {k: list(v) if isinstance(v, list) else v for k, v in presets[filters].items()}


class ModelPredictor:
    def __init__(self, model: TrainedModel):
        self.model = model

    def __call__(self, samples: Sequence[Sample]) -> np.ndarray:
        preds = predict_batch(self.model, [s.image for s in samples])
        return np.stack([p.landmarks.coords for p in preds]) if preds else np.zeros((0, 21, 2))


@dataclass
class ModelTrainer:
    """Picklable trainer usable by :func:`run_cv` and :func:`run_loso`."""

    architecture: str = "flatnet"
    filters: object = "paper"
    config: TrainConfig = field(default_factory=TrainConfig)
    group_sizes: tuple[int, ...] = (5, 4, 4, 4, 4)
    dilation_rates: tuple[int, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.architecture

    def specs(self):
        return default_specs(self.architecture, self.group_sizes, resolve_filters(self.architecture, self.filters),
                             self.dilation_rates)

    def fit(self, train_corpus: Corpus, seed: int) -> TrainedModel:
        cfg = TrainConfig(**{**self.config.to_dict(), "seed": seed})
        return train(self.specs(), train_corpus, cfg)

    def __call__(self, train_corpus: Corpus, seed: int) -> ModelPredictor:
        return ModelPredictor(self.fit(train_corpus, seed))


@dataclass
class Augmenter:
    op_ids: tuple[int, ...] = ALL_OP_IDS

    def __call__(self, corpus: Corpus, seed: int) -> Corpus:
        return augment_corpus(corpus, seed, self.op_ids)
