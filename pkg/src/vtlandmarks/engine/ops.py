"""Forward ops and their gradients for NHWC image batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_node


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    dilation: int = 1
    padding: str = "same"

    def __post_init__(self):
        for field in ("kernel_h", "kernel_w", "in_channels", "out_channels", "dilation"):
            value = getattr(self, field)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"ConvSpec.{field} must be a positive integer, got {value!r}")
        if self.padding != "same":
            raise ValueError(f"only 'same' padding is supported, got {self.padding!r}")

    @property
    def extent(self) -> tuple[int, int]:
        """Spatial reach of the dilated kernel."""
        return ((self.kernel_h - 1) * self.dilation + 1, (self.kernel_w - 1) * self.dilation + 1)

    def pads(self) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) zero padding giving output size == input size."""
        th = (self.kernel_h - 1) * self.dilation
        tw = (self.kernel_w - 1) * self.dilation
        return th // 2, th - th // 2, tw // 2, tw - tw // 2

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.kernel_h, self.kernel_w, self.in_channels, self.out_channels)


def _taps(spec: ConvSpec, h: int, w: int):
    """Kernel taps that touch at least one real input pixel.

    Yields (i, j, dy, dx, out-row slice, out-col slice, in-row slice,
    in-col slice).  Output pixel (y, x) reads input (y + dy, x + dx).
    Taps that only ever see padding contribute exactly zero and are skipped.
    """
    top, _, left, _ = spec.pads()
    d = spec.dilation
    taps = []
    for i in range(spec.kernel_h):
        dy = i * d - top
        if abs(dy) >= h:
            continue
        for j in range(spec.kernel_w):
            dx = j * d - left
            if abs(dx) >= w:
                continue
            oy = slice(max(0, -dy), h - max(0, dy))
            ox = slice(max(0, -dx), w - max(0, dx))
            iy = slice(max(0, dy), h - max(0, -dy))
            ix = slice(max(0, dx), w - max(0, -dx))
            taps.append((i, j, oy, ox, iy, ix))
    return taps


def _unroll(xp: np.ndarray, taps) -> np.ndarray:
    """(cin, n, h, w) planar input -> (taps, cin, n, h, w) shifted copies, zero outside."""
    cin, n, h, w = xp.shape
    cols = np.empty((len(taps), cin, n, h, w), dtype=xp.dtype)
    for k, (_, _, oy, ox, iy, ix) in enumerate(taps):
        c = cols[k]
        c[:, :, :oy.start, :] = 0
        c[:, :, oy.stop:, :] = 0
        c[:, :, oy, :ox.start] = 0
        c[:, :, oy, ox.stop:] = 0
        c[:, :, oy, ox] = xp[:, :, iy, ix]
    return cols


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be N x H x W x C, got shape {x.shape}")
    if w.shape != spec.weight_shape():
        raise ShapeError(f"conv2d weights have shape {w.shape}, spec expects {spec.weight_shape()}")
    if x.shape[3] != spec.in_channels:
        raise ShapeError(f"conv2d input has {x.shape[3]} channels, spec expects {spec.in_channels}")
    if b.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d bias has shape {b.shape}, expected ({spec.out_channels},)")
    top, bottom, left, right = spec.pads()
    eh, ew = spec.extent
    if eh > x.shape[1] + top + bottom or ew > x.shape[2] + left + right:
        raise ShapeError(f"dilated kernel extent {(eh, ew)} exceeds padded input {x.shape[1:3]}")


def conv2d(x, weights, bias, spec: ConvSpec) -> Tensor:
    """Dilated 'same' cross-correlation with stride 1.

    The input is unrolled into one column block per live tap, so each
    forward/backward pass is a single matrix product.
    """
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    xd, wd, bd = x.data, weights.data, bias.data
    _check_conv(xd, wd, bd, spec)
    n, h, w, cin = xd.shape
    cout = spec.out_channels
    dtype = np.result_type(xd, wd, bd)

    if spec.kernel_h == 1 and spec.kernel_w == 1:
        w2 = wd.reshape(cin, cout)
        out = (xd.reshape(-1, cin) @ w2 + bd).reshape(n, h, w, cout)

        def backward(g):
            g2 = g.reshape(-1, cout)
            gx = (g2 @ w2.T).reshape(xd.shape) if x.requires_grad else None
            gw = (xd.reshape(-1, cin).T @ g2).reshape(wd.shape) if weights.requires_grad else None
            return gx, gw, g2.sum(axis=0)

        return make_node(out.astype(dtype, copy=False), (x, weights, bias), backward)

    # Channel-planar im2col: rows are (tap, cin), columns are (n, y, x).
    taps = _taps(spec, h, w)
    t = len(taps)
    xp = np.ascontiguousarray(xd.transpose(3, 0, 1, 2), dtype=dtype)
    cols = _unroll(xp, taps)
    live_w = np.stack([wd[i, j] for i, j, *_ in taps]).reshape(t * cin, cout).astype(dtype, copy=False)
    out = (live_w.T @ cols.reshape(t * cin, -1)).reshape(cout, n, h, w).transpose(1, 2, 3, 0) + bd

    def backward(g):
        gp = np.ascontiguousarray(g.transpose(3, 0, 1, 2)).reshape(cout, -1)
        gx = gw = None
        if x.requires_grad:
            gcols = (live_w @ gp).reshape(t, cin, n, h, w)
            gxp = np.zeros((cin, n, h, w), dtype=gcols.dtype)
            for k, (_, _, oy, ox, iy, ix) in enumerate(taps):
                gxp[:, :, iy, ix] += gcols[k, :, :, oy, ox]
            gx = gxp.transpose(1, 2, 3, 0)
        if weights.requires_grad:
            glive = (cols.reshape(t * cin, -1) @ gp.T).reshape(t, cin, cout)
            gw = np.zeros_like(wd)
            for k, (i, j, *_) in enumerate(taps):
                gw[i, j] = glive[k]
        return gx, gw, gp.sum(axis=1)

    return make_node(out, (x, weights, bias), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def concat_channels(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_channels spatial mismatch: {p.shape[:-1]} vs {lead}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return make_node(out, parts, backward)


def split_channels(x: Tensor, widths: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels` on raw arrays."""
    if sum(widths) != x.shape[-1]:
        raise ShapeError(f"widths {list(widths)} do not sum to channel count {x.shape[-1]}")
    bounds = np.cumsum([0] + list(widths))
    return [x.data[..., bounds[k]:bounds[k + 1]] for k in range(len(widths))]


def mae_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target_arr.shape:
        raise ShapeError(f"mae_loss shape mismatch: {pred.shape} vs {target_arr.shape}")
    diff = pred.data - target_arr
    count = diff.size
    value = np.abs(diff).sum(dtype=np.float64) / count

    def backward(g):
        return (np.sign(diff) * (g / count),)

    return make_node(np.asarray(value, dtype=pred.dtype), (pred,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * factor, (a,), lambda g: (g * factor,))


def total(a) -> Tensor:
    """Sum of all elements, as a scalar node."""
    a = as_tensor(a)
    return make_node(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                     lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def weighted_sum(a, weights: np.ndarray) -> Tensor:
    """sum(a * weights) with constant weights; used to reduce to a scalar in checks."""
    a = as_tensor(a)
    return make_node(np.asarray((a.data * weights).sum(), dtype=a.dtype), (a,),
                     lambda g: (g * weights,))
