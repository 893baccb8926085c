"""A forward-only dense network with interception points at pre-activations."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Activation:
    """Strictly increasing elementwise nonlinearity."""

    kind: str = "identity"
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "leaky_relu", "tanh"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not self.slope > 0:
            raise ValueError("leaky_relu slope must be strictly positive")

    @classmethod
    def parse(cls, name: str, slope: float = 0.1) -> "Activation":
        key = name.strip().lower().replace("-", "_")
        if key == "leaky_relu":
            return cls("leaky_relu", float(slope))
        return cls(key)

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "identity":
            return a
        if self.kind == "tanh":
            return np.tanh(a)
        return np.where(a >= 0, a, self.slope * a)

    def inverse(self, h):
        h = np.asarray(h, dtype=float)
        if self.kind == "identity":
            return h
        if self.kind == "tanh":
            return np.arctanh(h)
        return np.where(h >= 0, h, h / self.slope)


IDENTITY = Activation("identity")
TANH = Activation("tanh")


def leaky_relu(slope: float = 0.1) -> Activation:
    return Activation("leaky_relu", slope)


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LayerSpec:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = IDENTITY
    hook_id: str | None = None

    def __post_init__(self):
        w = _readonly(self.weights)
        b = _readonly(self.bias)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"layer shape mismatch: weights {w.shape}, bias {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[LayerSpec, ...]
    input_dim: int

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 2:
            raise ValueError("a network needs at least one hidden layer and a readout")
        width = self.input_dim
        for i, layer in enumerate(layers):
            if layer.in_dim != width:
                raise ValueError(f"layer {i} expects {layer.in_dim} inputs, gets {width}")
            width = layer.out_dim
        ids = [layer.hook_id for layer in layers if layer.hook_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate hook ids")
        object.__setattr__(self, "layers", layers)

    @property
    def hook_ids(self) -> tuple[str, ...]:
        """Hooks in depth order, shallowest first."""
        return tuple(layer.hook_id for layer in self.layers if layer.hook_id is not None)

    def layer(self, hook_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.hook_id == hook_id:
                return layer
        raise KeyError(f"unknown hook {hook_id!r}")


@dataclass(frozen=True, eq=False)
class HookCapture:
    """Pre-activations seen at a hook (before interception) and what replaced them."""

    hook_id: str
    pre_activations: np.ndarray
    intercepted: np.ndarray = field(default=None)

    @property
    def channels(self) -> int:
        return self.pre_activations.shape[1]


Interceptor = Callable[[np.ndarray], np.ndarray]


class LayerPolicy(str, enum.Enum):
    ALL = "all"
    TOP_HALF = "top-half"

    @classmethod
    def parse(cls, value) -> "LayerPolicy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown layer policy {value!r}")


def _init_layer(rng: np.random.Generator, in_dim: int, out_dim: int):
    scale = 1.0 / math.sqrt(in_dim)
    return rng.normal(0.0, scale, size=(out_dim, in_dim)), rng.normal(0.0, 0.5, size=out_dim)


def build_mlp(d: int, widths: Sequence[int], activation: Activation, rng_seed: int) -> Network:
    """Dense network ``d -> widths[0] -> ... -> 1`` with a hook on every hidden layer.

    Weights are normal with standard deviation ``1/sqrt(in_dim)``, hidden biases
    normal with standard deviation 0.5, and the scalar readout has zero bias.
    """
    if d < 1 or not widths or any(w < 1 for w in widths):
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(rng_seed)
    layers = []
    in_dim = d
    for depth, width in enumerate(widths):
        w, b = _init_layer(rng, in_dim, width)
        layers.append(LayerSpec(w, b, activation, hook_id=f"hidden{depth}"))
        in_dim = width
    w_out, _ = _init_layer(rng, in_dim, 1)
    layers.append(LayerSpec(w_out, np.zeros(1), IDENTITY))
    return Network(tuple(layers), d)


def build_one_hidden_mlp(d: int, m: int, activation: Activation, rng_seed: int) -> Network:
    """``y = w^T phi(W x + b)`` with the hook ``hidden0`` on ``W x + b``."""
    return build_mlp(d, [m], activation, rng_seed)


def forward(net: Network, batch, interceptors: Mapping[str, Interceptor] | None = None):
    """Run the network, capturing (and optionally replacing) hooked pre-activations.

    Each interceptor receives the ``(batch, channels)`` pre-activation matrix of
    its hook and returns a matrix of the same shape; the activation is applied
    to the returned values.
    """
    interceptors = dict(interceptors or {})
    unknown = set(interceptors) - set(net.hook_ids)
    if unknown:
        raise KeyError(f"unknown hook ids: {sorted(unknown)}")
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"batch must have shape (n, {net.input_dim}), got {x.shape}")

    captures = []
    for layer in net.layers:
        pre = x @ layer.weights.T + layer.bias
        if layer.hook_id is not None:
            seen = pre.copy()
            seen.setflags(write=False)
            fn = interceptors.get(layer.hook_id)
            if fn is not None:
                pre = np.asarray(fn(seen), dtype=float)
                if pre.shape != seen.shape:
                    raise ValueError(f"interceptor at {layer.hook_id} changed shape {seen.shape} -> {pre.shape}")
            captures.append(HookCapture(layer.hook_id, seen, pre))
        x = layer.activation(pre)
    return x, captures


def channel_samples(capture: HookCapture | Iterable[HookCapture], channel: int) -> np.ndarray:
    """Values of one channel across the batch; several captures are concatenated."""
    parts = [capture] if isinstance(capture, HookCapture) else list(capture)
    if not parts:
        raise ValueError("no captures given")
    out = []
    for part in parts:
        if not 0 <= channel < part.channels:
            raise IndexError(f"channel {channel} out of range for {part.channels} channels")
        out.append(part.pre_activations[:, channel])
    return np.concatenate(out)


def select_hooks(net: Network, policy: LayerPolicy | str) -> tuple[str, ...]:
    """Hooks to adapt: every hook, or the deepest ``ceil(L/2)`` of ``L``."""
    policy = LayerPolicy.parse(policy)
    hooks = net.hook_ids
    if policy is LayerPolicy.ALL:
        return hooks
    keep = math.ceil(len(hooks) / 2)
    return hooks[len(hooks) - keep:]
