"""Flat-net and the ConvOnly baseline as fixed layer sequences."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import ConvSpec, Tensor, concat_channels, conv2d, relu, tanh
from .landmarks import LANDMARK_IDS, landmark_index

DEFAULT_DILATIONS = (1, 2, 4, 8, 16)
# Lands within 1% of 2,958,533 weights for a 5-landmark group on RGB input.
DEFAULT_FLATNET_FILTERS = {"branch1": 32, "branch2": 32, "l4": 576, "l5": 256, "l6": 128}
DEFAULT_CONVONLY_FILTERS = (64, 64, 64, 64, 64)
DEFAULT_CONVONLY_KERNELS = (9, 9, 9, 9, 9, 1)
PAPER_WEIGHTS_PER_NETWORK = 2_958_533


class ArchitectureError(ValueError):
    pass


@dataclass
class NetworkSpec:
    architecture: str = "flatnet"
    group: tuple[str, ...] = LANDMARK_IDS[:5]
    dilation_rates: tuple[int, ...] = DEFAULT_DILATIONS
    filters: dict = field(default_factory=lambda: dict(DEFAULT_FLATNET_FILTERS))
    kernels: tuple[int, ...] = DEFAULT_CONVONLY_KERNELS  # convonly only
    in_channels: int = 3
    input_size: tuple[int, int] | None = None

    def __post_init__(self):
        self.group = tuple(self.group)
        self.dilation_rates = tuple(int(d) for d in self.dilation_rates)
        self.kernels = tuple(int(k) for k in self.kernels)
        if self.input_size is not None:
            self.input_size = tuple(int(v) for v in self.input_size)
        if not self.group:
            raise ArchitectureError("network group must name at least one landmark")
        for lid in self.group:
            landmark_index(lid)
        if len(set(self.group)) != len(self.group):
            raise ArchitectureError(f"duplicate landmark in group {self.group}")
        if self.architecture == "flatnet":
            if len(self.dilation_rates) != 5 or len(set(self.dilation_rates)) != 5:
                raise ArchitectureError(f"Flat-net needs 5 distinct dilation rates, got {self.dilation_rates}")
            if any(d < 1 for d in self.dilation_rates):
                raise ArchitectureError(f"dilation rates must be positive, got {self.dilation_rates}")
            missing = {"branch1", "branch2", "l4", "l5", "l6"} - set(self.filters)
            if missing:
                raise ArchitectureError(f"Flat-net filters missing {sorted(missing)}")
            if any(int(v) < 1 for v in self.filters.values()):
                raise ArchitectureError(f"filter widths must be positive, got {self.filters}")
        elif self.architecture == "convonly":
            widths = self.filters.get("hidden") if isinstance(self.filters, dict) else None
            if widths is None or len(widths) != 5 or any(int(v) < 1 for v in widths):
                raise ArchitectureError("ConvOnly needs filters={'hidden': [5 positive widths]}")
            if len(self.kernels) != 6 or any(k < 1 for k in self.kernels):
                raise ArchitectureError(f"ConvOnly needs 6 positive kernel sizes, got {self.kernels}")
        else:
            raise ArchitectureError(f"unknown architecture {self.architecture!r}; expected flatnet or convonly")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group"] = list(self.group)
        d["dilation_rates"] = list(self.dilation_rates)
        d["kernels"] = list(self.kernels)
        d["input_size"] = None if self.input_size is None else list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if d.get("architecture") == "convonly":
            d["filters"] = {"hidden": list(d["filters"]["hidden"])}
        return cls(**d)


@dataclass
class Layer:
    name: str
    spec: ConvSpec
    activation: str  # relu | tanh

    def param_count(self) -> int:
        s = self.spec
        return s.kernel_h * s.kernel_w * s.in_channels * s.out_channels + s.out_channels


class Network:
    """Parameters plus a fixed execution plan.

    Flat-net plan: five parallel two-conv branches (one dilation each),
    channel concat, 5x5 conv, two 1x1 convs, 1x1 tanh head.
    """

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.layers = plan_layers(spec)
        self.params: dict[str, Tensor] = {}
        for layer in self.layers:
            for suffix, shape in ((".w", layer.spec.weight_shape()), (".b", (layer.spec.out_channels,))):
                key = layer.name + suffix
                if key not in params:
                    raise ArchitectureError(f"missing parameter {key}")
                arr = np.asarray(params[key])
                if arr.shape != shape:
                    raise ArchitectureError(f"parameter {key} has shape {arr.shape}, expected {shape}")
                self.params[key] = Tensor(arr, requires_grad=True, name=key)

    @property
    def group(self) -> tuple[str, ...]:
        return self.spec.group

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def astype(self, dtype) -> "Network":
        return Network(self.spec, {k: p.data.astype(dtype) for k, p in self.params.items()})

    def _apply(self, layer: Layer, x: Tensor) -> Tensor:
        y = conv2d(x, self.params[layer.name + ".w"], self.params[layer.name + ".b"], layer.spec)
        if y.shape[1:3] != x.shape[1:3]:
            raise ArchitectureError(f"layer {layer.name} changed spatial size {x.shape[1:3]} -> {y.shape[1:3]}")
        return relu(y) if layer.activation == "relu" else tanh(y)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 4:
            raise ArchitectureError(f"network input must be N x H x W x C, got {x.shape}")
        if x.shape[3] != self.spec.in_channels:
            raise ArchitectureError(f"network expects {self.spec.in_channels} input channels, got {x.shape[3]}")
        by_name = {layer.name: layer for layer in self.layers}
        if self.spec.architecture == "flatnet":
            branches = []
            for k in range(5):
                h = self._apply(by_name[f"L1.d{k}"], x)
                branches.append(self._apply(by_name[f"L2.d{k}"], h))
            h = concat_channels(branches)
            for name in ("L4", "L5", "L6", "L7"):
                h = self._apply(by_name[name], h)
            return h
        h = x
        for layer in self.layers:
            h = self._apply(layer, h)
        return h

    __call__ = forward

    def predict_maps(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Heat-map outputs for an N x H x W x C array, without building graphs."""
        dtype = next(iter(self.params.values())).dtype
        outs = []
        saved = {k: p.requires_grad for k, p in self.params.items()}
        for p in self.params.values():
            p.requires_grad = False
        try:
            for start in range(0, len(images), batch_size):
                outs.append(self.forward(Tensor(images[start:start + batch_size].astype(dtype, copy=False))).data)
        finally:
            for k, p in self.params.items():
                p.requires_grad = saved[k]
        return np.concatenate(outs, axis=0)


def plan_layers(spec: NetworkSpec) -> list[Layer]:
    n_out = len(spec.group)
    layers = []
    if spec.architecture == "flatnet":
        f = {k: int(v) for k, v in spec.filters.items()}
        for k, d in enumerate(spec.dilation_rates):
            layers.append(Layer(f"L1.d{k}", ConvSpec(9, 9, spec.in_channels, f["branch1"], d), "relu"))
            layers.append(Layer(f"L2.d{k}", ConvSpec(9, 9, f["branch1"], f["branch2"], d), "relu"))
        cat = 5 * f["branch2"]
        layers.append(Layer("L4", ConvSpec(5, 5, cat, f["l4"]), "relu"))
        layers.append(Layer("L5", ConvSpec(1, 1, f["l4"], f["l5"]), "relu"))
        layers.append(Layer("L6", ConvSpec(1, 1, f["l5"], f["l6"]), "relu"))
        layers.append(Layer("L7", ConvSpec(1, 1, f["l6"], n_out), "tanh"))
    else:
        widths = [int(v) for v in spec.filters["hidden"]] + [n_out]
        cin = spec.in_channels
        for k, (kern, cout) in enumerate(zip(spec.kernels, widths)):
            layers.append(Layer(f"C{k + 1}", ConvSpec(kern, kern, cin, cout), "relu" if k < 5 else "tanh"))
            cin = cout
    return layers


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-in variance-scaling uniform weights (gain 2) for ReLU layers; zero biases.

    The tanh output layer starts at zero: with an MAE loss on mostly-zero
    heat-maps, a random head drives every pixel down at once and kills the
    ReLU layers within a few dozen steps.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for layer in plan_layers(spec):
        s = layer.spec
        fan_in = s.kernel_h * s.kernel_w * s.in_channels
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=s.weight_shape())
        if layer.activation == "tanh":
            w[...] = 0.0
        params[layer.name + ".w"] = w.astype(dtype)
        params[layer.name + ".b"] = np.zeros(s.out_channels, dtype=dtype)
    return params


def build(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    if spec.architecture != "flatnet":
        raise ArchitectureError("build() makes Flat-net; use build_convonly() for the baseline")
    return Network(spec, init_params(spec, seed, dtype))


def build_convonly(group: Sequence[str], filters: Sequence[int] = DEFAULT_CONVONLY_FILTERS,
                   kernels: Sequence[int] = DEFAULT_CONVONLY_KERNELS, seed: int = 0,
                   dtype=np.float32, in_channels: int = 3) -> Network:
    spec = NetworkSpec("convonly", tuple(group), filters={"hidden": list(filters)},
                       kernels=tuple(kernels), in_channels=in_channels)
    return Network(spec, init_params(spec, seed, dtype))


def param_count(spec: NetworkSpec) -> int:
    """Closed-form count: sum over layers of kh*kw*cin*cout + cout."""
    return sum(layer.param_count() for layer in plan_layers(spec))
