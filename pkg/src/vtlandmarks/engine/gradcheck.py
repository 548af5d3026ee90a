"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple[int, tuple[int, ...]] | None = None  # (input index, element index)
    message: str = ""

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.1e} checked={self.checked} {self.message}".rstrip()


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f(*inputs)`` to central differences.

    Every input must be float64.  ``max_elements`` caps the number of
    probed entries per input (chosen with ``seed``); ``None`` probes all.
    Relative errors use a floor of 1e-3 times the largest analytic gradient
    magnitude so that near-zero entries do not dominate.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for k, x in enumerate(inputs):
        if x.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 inputs; input {k} is {x.dtype}")
        x.requires_grad = True
        x.grad = None

    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return GradCheckReport(False, float("inf"), tolerance, 0, None, "non-finite forward value")
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    for k, g in enumerate(analytic):
        bad = np.argwhere(~np.isfinite(g))
        if len(bad):
            return GradCheckReport(False, float("inf"), tolerance, 0, (k, tuple(int(i) for i in bad[0])),
                                   "non-finite analytic gradient")

    scale = max((float(np.abs(g).max()) for g in analytic if g.size), default=0.0)
    floor = max(1e-3 * scale, 1e-12)
    rng = np.random.default_rng(seed)
    worst_err, worst_at, checked = 0.0, None, 0
    for k, x in enumerate(inputs):
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for e in idx:
            orig = flat[e]
            flat[e] = orig + step
            fp = float(f(*inputs).data)
            flat[e] = orig - step
            fm = float(f(*inputs).data)
            flat[e] = orig
            location = (k, tuple(int(i) for i in np.unravel_index(e, x.shape)))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(False, float("inf"), tolerance, checked, location,
                                       "non-finite value under perturbation")
            numeric = (fp - fm) / (2.0 * step)
            err = float(relative_error(np.float64(analytic[k].reshape(-1)[e]), np.float64(numeric), floor))
            checked += 1
            if err > worst_err:
                worst_err, worst_at = err, location
    for x in inputs:
        x.grad = None
    return GradCheckReport(worst_err < tolerance, worst_err, tolerance, checked, worst_at)
