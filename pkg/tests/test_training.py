import numpy as np
import pytest

from vtlandmarks.dataset import Corpus, relabel
from vtlandmarks.evaluation import distances
from vtlandmarks.flatnet import Network, NetworkSpec, init_params
from vtlandmarks.landmarks import LANDMARK_IDS, LandmarkSet
from vtlandmarks.synth import SynthConfig, generate_synthetic
from vtlandmarks.training import (GroupResult, NumericalError, PlateauStopper, TrainConfig, TrainedModel,
                                  TrainingError, default_specs, load_model, predict, predict_batch, save_model, split_validation,
                                  stop_epoch, train, train_network)

TINY = {"branch1": 2, "branch2": 2, "l4": 4, "l5": 4, "l6": 4}


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SynthConfig(n_subjects=2, n_articulations=2, image_size=(24, 24), seed=2))


def quick_config(**kw):
    base = dict(max_epochs=2, batch_size=2, lr=1e-3, sigma=3.0, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_flat_history_stops_after_patience():
    for k in (1, 4, 9):
        history = [1.0 - 0.1 * e for e in range(k)] + [1.0 - 0.1 * (k - 1)] * 30
        assert stop_epoch(history, patience=10, min_delta=0.0) == k + 10


def test_plateau_never_before_patience_or_beyond_max():
    rng = np.random.default_rng(0)
    for _ in range(200):
        patience = int(rng.integers(1, 8))
        hist = list(rng.uniform(size=int(rng.integers(1, 40))))
        max_epochs = int(rng.integers(1, 50))
        e = stop_epoch(hist, patience, 0.0, max_epochs)
        assert e <= max_epochs
        if e < min(max_epochs, len(hist)):
            assert e > patience  # the first epoch only sets the baseline


def test_small_improvements_below_min_delta_do_not_count():
    s = PlateauStopper(patience=3, min_delta=0.1)
    assert [s.update(v) for v in (1.0, 0.95, 0.92, 0.91)] == [False, False, False, True]


def test_config_validation():
    for bad in (dict(max_epochs=0), dict(val_fraction=0.0), dict(val_fraction=1.0), dict(patience=0),
                dict(precision="float16"), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_validation_split_rounding():
    rng = np.random.default_rng(0)
    tr, va = split_validation(100, 0.05, rng)
    assert len(va) == 5 and len(tr) == 95 and not set(tr) & set(va)
    tr, va = split_validation(8, 0.05, rng)
    assert len(va) == 0 and len(tr) == 8
    tr, va = split_validation(10, 0.05, rng)
    assert len(va) == 1  # 0.5 rounds up


def test_default_specs_partition_landmarks():
    specs = default_specs("flatnet", (5, 4, 4, 4, 4), TINY)
    assert len(specs) == 5
    assert sum((list(s.group) for s in specs), []) == list(LANDMARK_IDS)
    conv = default_specs("convonly", filters={"hidden": [2] * 5})
    assert len(conv) == 1 and conv[0].group == LANDMARK_IDS


def test_train_errors(corpus):
    specs = default_specs("flatnet", (5, 4, 4, 4, 4), TINY)
    with pytest.raises(TrainingError):
        train(specs, Corpus([]), quick_config())
    with pytest.raises(TrainingError):
        train(specs[:4], corpus, quick_config())


def test_non_finite_loss_names_group_and_epoch(corpus):
    spec = NetworkSpec(group=LANDMARK_IDS[:5], filters=TINY)
    params = init_params(spec, 0)
    params["L7.b"][:] = np.nan
    with pytest.raises(NumericalError, match=r"group3.*epoch 1"):
        train_network(Network(spec, params), corpus.samples, quick_config(), 0, label="group3")


def test_training_is_deterministic_and_records_history(corpus):
    specs = default_specs("flatnet", (5, 4, 4, 4, 4), TINY)
    a = train(specs, corpus, quick_config(seed=3))
    b = train(specs, corpus, quick_config(seed=3))
    for ea, eb in zip(a.entries, b.entries):
        assert ea.params.keys() == eb.params.keys()
        assert all(np.array_equal(ea.params[k], eb.params[k]) for k in ea.params)
        assert len(ea.history["train_loss"]) == 2 == len(ea.history["val_loss"])
    c = train(specs, corpus, quick_config(seed=4))
    assert not np.array_equal(a.entries[0].params["L1.d0.w"], c.entries[0].params["L1.d0.w"])


def test_model_persistence_round_trip(tmp_path, corpus):
    model = train(default_specs("flatnet", (5, 4, 4, 4, 4), TINY), corpus, quick_config(max_epochs=1))
    files = save_model(model, tmp_path / "m")
    assert sorted(p.name for p in files) == [f"group{k}.vtlm" for k in range(1, 6)] + ["model.json"]
    back = load_model(tmp_path / "m")
    assert back.sigma == model.sigma and back.total_weights == model.total_weights
    for ea, eb in zip(model.entries, back.entries):
        assert ea.spec == eb.spec
        assert all(np.array_equal(ea.params[k], eb.params[k]) for k in ea.params)
    img = corpus[0].image
    assert predict(back, img).landmarks == predict(model, img).landmarks


def test_convonly_model_single_file(tmp_path, corpus):
    specs = default_specs("convonly", filters={"hidden": [2] * 5})
    model = train(specs, corpus, quick_config(max_epochs=1))
    files = save_model(model, tmp_path)
    assert [p.name for p in files] == ["group1.vtlm", "model.json"]


def zero_model(size=(24, 24)):
    entries = []
    for spec in default_specs("flatnet", (5, 4, 4, 4, 4), TINY, input_size=size):
        params = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
        entries.append(GroupResult(spec, params))
    return TrainedModel(entries)


def test_zero_parameters_give_degenerate_origin():
    pred = predict(zero_model(), np.full((24, 24), 77, np.uint8))
    assert all(pred.degenerate)
    assert (pred.landmarks.coords == 0).all()


def test_predict_rejects_size_mismatch():
    with pytest.raises(ValueError, match="24x24"):
        predict(zero_model(), np.zeros((20, 24), np.uint8))


def test_predict_contract_on_random_input(corpus):
    model = train(default_specs("flatnet", (5, 4, 4, 4, 4), TINY), corpus, quick_config(max_epochs=1))
    rng = np.random.default_rng(0)
    preds = predict_batch(model, [rng.integers(0, 256, size=(24, 24), dtype=np.uint8) for _ in range(3)])
    for p in preds:
        assert p.landmarks.coords.shape == (21, 2)
        assert (p.landmarks.coords >= 0).all() and (p.landmarks.coords < 24).all()


def test_overfit_single_sample_recovers_landmarks():
    # integer labels: the decoder returns whole pixels, so a memorized sample
    # can then reproduce its labels without sub-pixel ambiguity
    raw = generate_synthetic(SynthConfig(n_subjects=1, n_articulations=1, image_size=(32, 32), seed=5))[0]
    one = Corpus([relabel(raw, landmarks=LandmarkSet(np.rint(raw.landmarks.coords), (32, 32)))])
    cfg = TrainConfig(max_epochs=400, batch_size=1, lr=2e-3, sigma=4.0, patience=400, seed=0)
    spec = NetworkSpec(group=LANDMARK_IDS, filters={"branch1": 8, "branch2": 8, "l4": 32, "l5": 32, "l6": 32},
                       input_size=(32, 32))
    net = Network(spec, init_params(spec, 0))
    x = one[0]
    gt = x.landmarks.coords

    def reached(epoch, net):
        if epoch % 10:
            return False
        model = TrainedModel([_as_entry(net)], cfg.sigma)
        return distances(gt, predict(model, x.image).landmarks.coords).max() <= 1.0

    result = train_network(net, one.samples, cfg, 0, on_epoch=reached)
    model = TrainedModel([result], cfg.sigma)
    assert distances(gt, predict(model, x.image).landmarks.coords).max() <= 1.0


def _as_entry(net):
    return GroupResult(net.spec, {k: p.data.copy() for k, p in net.params.items()})
