"""Gradient verification suite for the tensor engine and a Flat-net group."""

from __future__ import annotations

import numpy as np

from .engine import (ConvSpec, GradCheckReport, Tensor, concat_channels, conv2d, grad_check, mae_loss, relu, tanh,
                     weighted_sum)
from .flatnet import Network, NetworkSpec, init_params
from .landmarks import LANDMARK_IDS

TOY_FILTERS = {"branch1": 2, "branch2": 2, "l4": 4, "l5": 4, "l6": 4}


def _rand(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _away_from_zero(rng, *shape, margin=0.05):
    """Random values with |v| >= margin so kinks stay outside the FD stencil."""
    v = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(v)


def check_conv2d(seed: int = 0, dilation: int = 2, size: int = 8, tolerance: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    spec = ConvSpec(3, 3, 2, 3, dilation)
    x, w, b = _rand(rng, 1, size, size, 2), _rand(rng, 3, 3, 2, 3), _rand(rng, 3)
    proj = rng.normal(size=(1, size, size, 3))
    return grad_check(lambda x, w, b: weighted_sum(conv2d(x, w, b, spec), proj), [x, w, b], tolerance)


def check_relu(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, 2, 4, 4, 3)
    proj = rng.normal(size=x.shape)
    return grad_check(lambda x: weighted_sum(relu(x), proj), x, tolerance)


def check_tanh(seed: int = 0, tolerance: float = 1e-6) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 2, 4, 4, 3, lo=-2, hi=2)
    proj = rng.normal(size=x.shape)
    return grad_check(lambda x: weighted_sum(tanh(x), proj), x, tolerance)


def check_concat(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    parts = [_rand(rng, 1, 4, 4, c) for c in (1, 2, 3)]
    proj = rng.normal(size=(1, 4, 4, 6))
    return grad_check(lambda *ps: weighted_sum(concat_channels(ps), proj), parts, tolerance)


def check_mae(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    target = rng.uniform(-1, 1, size=(2, 4, 4, 3))
    # keep |pred - target| away from the kink at 0
    pred = Tensor(target + rng.uniform(0.05, 1.0, size=target.shape) * rng.choice([-1.0, 1.0], size=target.shape))
    return grad_check(lambda p: mae_loss(p, target), pred, tolerance)


def check_flatnet_group(seed: int = 0, size: int = 16, tolerance: float = 1e-4,
                        max_elements: int | None = 40) -> GradCheckReport:
    """Whole Flat-net group, 16x16 input, float64, MAE against a random target.

    Every parameter tensor and the input are probed; ``max_elements`` caps the
    entries sampled per tensor.
    """
    rng = np.random.default_rng(seed)
    spec = NetworkSpec("flatnet", LANDMARK_IDS[:5], filters=dict(TOY_FILTERS))
    net = Network(spec, init_params(spec, seed, np.float64))
    for p in net.parameters():
        if p.name.endswith(".b"):
            p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)
    # the trained-from-scratch head starts at zero, which would hide upstream gradients
    net.params["L7.w"].data[...] = rng.uniform(-0.5, 0.5, size=net.params["L7.w"].shape)
    x = Tensor(rng.uniform(0, 1, size=(1, size, size, 3)))
    target = rng.uniform(0, 1, size=(1, size, size, 5))
    params = net.parameters()

    def f(x, *ps):
        return mae_loss(net(x), target)

    return grad_check(f, [x, *params], tolerance, max_elements=max_elements, seed=seed)


def check_linear(seed: int = 0, tolerance: float = 1e-9) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 3, 5)
    proj = rng.normal(size=x.shape)
    return grad_check(lambda x: weighted_sum(x, proj), x, tolerance)


def run_suite(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    checks = [
        ("linear", lambda: check_linear(seed)),
        ("relu", lambda: check_relu(seed)),
        ("tanh", lambda: check_tanh(seed)),
        ("concat_channels", lambda: check_concat(seed)),
        ("mae_loss", lambda: check_mae(seed)),
    ]
    for d in (1, 2, 4, 8):
        checks.append((f"conv2d_dilation{d}", lambda d=d: check_conv2d(seed, d)))
    checks.append(("flatnet_group_16x16", lambda: check_flatnet_group(seed)))
    return [(name, fn()) for name, fn in checks]
