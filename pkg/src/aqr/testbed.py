"""The synthetic testbed: a small random network with a per-neuron shift.

Inputs are i.i.d. standard normal, so each first-layer pre-activation
``a_i = W_i x + b_i`` is exactly ``N(b_i, |W_i|^2)``; the shift is an
increasing map ``g_i`` applied at the pre-activation of every hooked neuron.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import integrate

from aqr.adaptation import oracle_aqr, ttn_transform
from aqr.corruption import (Affine, CorruptionSpec, CubicMonotone, SourceSpec, StandardNormal, TanhWarp,
                            channel_corruption, invert, sample_source)
from aqr.net import Activation, Network, build_mlp, forward, leaky_relu
from aqr.tails import normal_cdf, probit

HOOK = "hidden0"

# parameter names and default ranges per corruption family
CORRUPTION_FAMILIES = {
    "cubic": {"scale": (0.25, 0.45), "alpha": (0.01, 0.03)},
    "affine": {"a": (0.5, 2.0), "b": (-1.0, 1.0)},
    "tanh": {"gain": (0.5, 2.0), "amplitude": (-0.4, 0.4)},
    "identity": {},
}


@dataclass(frozen=True)
class CorruptionPlan:
    """A family of increasing maps with a uniform range for each parameter."""

    kind: str = "cubic"
    ranges: tuple = ()

    def __post_init__(self):
        if self.kind not in CORRUPTION_FAMILIES:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        merged = dict(CORRUPTION_FAMILIES[self.kind])
        for name, bounds in dict(self.ranges).items():
            if name not in merged:
                raise ValueError(f"{self.kind} corruption has no parameter {name!r}")
            lo, hi = (float(v) for v in bounds)
            if lo > hi:
                raise ValueError(f"{name} range is reversed")
            merged[name] = (lo, hi)
        object.__setattr__(self, "ranges", tuple(sorted(merged.items())))

    def draw(self, rng: np.random.Generator, m: int) -> tuple[CorruptionSpec, ...]:
        if self.kind == "identity":
            return (Affine(1.0, 0.0),) * m
        draws = {name: rng.uniform(lo, hi, size=m) for name, (lo, hi) in self.ranges}
        out = []
        for i in range(m):
            p = {k: float(v[i]) for k, v in draws.items()}
            if self.kind == "cubic":
                out.append(CubicMonotone(p["alpha"], p["scale"]))
            elif self.kind == "affine":
                out.append(Affine(p["a"], p["b"]))
            else:
                out.append(TanhWarp(p["gain"], p["amplitude"]))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class Testbed:
    net: Network
    corruptions: Mapping[str, tuple[CorruptionSpec, ...]]

    @property
    def hidden(self):
        return self.net.layers[0]

    @property
    def d(self) -> int:
        return self.net.input_dim

    @property
    def m(self) -> int:
        return self.hidden.out_dim

    @property
    def means(self) -> np.ndarray:
        """First-layer pre-activation means."""
        return np.array(self.hidden.bias)

    @property
    def stds(self) -> np.ndarray:
        """First-layer pre-activation standard deviations."""
        return np.linalg.norm(self.hidden.weights, axis=1)

    @property
    def shift(self):
        return {h: channel_corruption(specs) for h, specs in self.corruptions.items()}

    @property
    def readout_hook(self) -> str:
        return self.net.hook_ids[-1]

    def inputs(self, n: int, seed) -> np.ndarray:
        return sample_source(SourceSpec.iid(StandardNormal(), self.d, seed), n)


def make_testbed(seed: int = 0, d: int = 3, m: int = 8, activation: Activation | None = None,
                 depth: int = 1, plan: CorruptionPlan | None = None) -> Testbed:
    """Random network plus one corruption per hooked neuron.

    The default cubic family has slopes below one at the origin, squeezing the
    bulk of each channel while the cubic term stretches its far tails, so the
    shift is far from affine.
    """
    activation = leaky_relu(0.1) if activation is None else activation
    plan = CorruptionPlan() if plan is None else plan
    net = build_mlp(d, [m] * depth, activation, seed)
    rng = np.random.default_rng([seed, 1])
    return Testbed(net, {h: plan.draw(rng, m) for h in net.hook_ids})


def post_activations(tb: Testbed, x, interceptors=None, hook: str | None = None) -> np.ndarray:
    """Post-activations at ``hook`` (default: the deepest hook)."""
    hook = tb.readout_hook if hook is None else hook
    _, caps = forward(tb.net, x, interceptors)
    cap = next(c for c in caps if c.hook_id == hook)
    return tb.net.layer(hook).activation(cap.intercepted)


def hidden_post(tb: Testbed, x, interceptor=None) -> np.ndarray:
    """First hidden layer's activations ``phi(a)`` with an optional replacement of ``a``."""
    return post_activations(tb, x, {HOOK: interceptor} if interceptor is not None else None, HOOK)


def oracle_interceptor(tb: Testbed):
    """Corrupt each first-layer channel, then undo it with the population quantile map."""
    mu, sd = tb.means, tb.stds
    specs = tb.corruptions[HOOK]

    def apply(pre):
        out = np.empty_like(pre)
        for i, g in enumerate(specs):
            out[:, i] = oracle_aqr(
                g(pre[:, i]),
                lambda u, i=i: mu[i] + sd[i] * probit(u),
                lambda v, i=i, g=g: normal_cdf((invert(g, v) - mu[i]) / sd[i]),
            )
        return out

    return apply


def population_ttn_residual(g: CorruptionSpec, mean: float, std: float, activation: Activation) -> float:
    """``E[(phi(T(g(a))) - phi(a))^2]`` for ``a ~ N(mean, std^2)`` with exact TTN moments."""
    def density(a):
        t = (a - mean) / std
        return math.exp(-0.5 * t * t) / (std * math.sqrt(2 * math.pi))

    lo, hi = mean - 12 * std, mean + 12 * std
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
    mu_t = integrate.quad(lambda a: float(g(a)) * density(a), lo, hi, **opts)[0]
    var_t = integrate.quad(lambda a: (float(g(a)) - mu_t) ** 2 * density(a), lo, hi, **opts)[0]
    sigma_t = math.sqrt(var_t)

    def residual(a):
        mapped = ttn_transform(float(g(a)), mean, std, mu_t, sigma_t)
        return (float(activation(mapped)) - float(activation(a))) ** 2 * density(a)

    return integrate.quad(residual, lo, hi, points=[mean], epsabs=1e-13, epsrel=1e-10, limit=400)[0]


def testbed_ttn_population_mse(tb: Testbed) -> float:
    """Population TTN residual at the first hidden layer, summed over neurons."""
    act = tb.hidden.activation
    return float(sum(population_ttn_residual(g, mu, sd, act)
                     for g, mu, sd in zip(tb.corruptions[HOOK], tb.means, tb.stds)))
