"""Strictly increasing corruption maps and synthetic input distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from aqr.tails import normal_cdf, probit


class CorruptionSpec:
    """Base class; subclasses are strictly increasing maps of the real line."""

    def __call__(self, x):
        raise NotImplementedError

    def inverse(self, y, tol: float = 1e-12):
        return _bisect_inverse(self, y, tol)


@dataclass(frozen=True)
class Affine(CorruptionSpec):
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("Affine needs a > 0")

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def inverse(self, y, tol: float = 1e-12):
        return (np.asarray(y, dtype=float) - self.b) / self.a


@dataclass(frozen=True)
class CubicMonotone(CorruptionSpec):
    """``g(t) = scale * t + alpha * t**3``."""

    alpha: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and self.alpha >= 0):
            raise ValueError("CubicMonotone needs scale > 0 and alpha >= 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * x + self.alpha * x ** 3


@dataclass(frozen=True)
class TanhWarp(CorruptionSpec):
    """``g(t) = t + amplitude * tanh(gain * t)``; needs ``1 + amplitude * gain > 0``."""

    gain: float = 1.0
    amplitude: float = 0.5

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("TanhWarp needs gain > 0")
        if not 1.0 + self.amplitude * self.gain > 0:
            raise ValueError("TanhWarp needs 1 + amplitude * gain > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.amplitude * np.tanh(self.gain * x)


@dataclass(frozen=True)
class Compose(CorruptionSpec):
    """Apply ``parts`` left to right."""

    parts: tuple[CorruptionSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not all(isinstance(p, CorruptionSpec) for p in self.parts):
            raise ValueError("Compose takes CorruptionSpec parts")

    def __call__(self, x):
        out = np.asarray(x, dtype=float)
        for part in self.parts:
            out = part(out)
        return out


def _bisect_inverse(g: CorruptionSpec, y, tol: float):
    if not tol > 0:
        raise ValueError("tol must be > 0")
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("non-finite input")
    y_flat = y_arr.ravel()
    lo = np.minimum(-1.0, -np.abs(y_flat))
    hi = np.maximum(1.0, np.abs(y_flat))
    for _ in range(2100):
        below = g(lo) > y_flat
        above = g(hi) < y_flat
        if not (below.any() or above.any()):
            break
        lo = np.where(below, 2.0 * lo, lo)
        hi = np.where(above, 2.0 * hi, hi)
    else:  # pragma: no cover
        raise ValueError("could not bracket the inverse")

    for _ in range(2200):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        done = (np.abs(g_mid - y_flat) <= tol) & (hi - lo <= tol)
        stuck = (mid == lo) | (mid == hi)
        if np.all(done | stuck):
            break
        left = g_mid < y_flat
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    out = 0.5 * (lo + hi)
    out = out.reshape(y_arr.shape)
    return float(out) if out.ndim == 0 else out


def corrupt(spec: CorruptionSpec, x):
    out = spec(x)
    return float(out) if np.ndim(out) == 0 else out


def invert(spec: CorruptionSpec, y, tol: float = 1e-12):
    """Inverse of ``spec`` to within ``tol`` in both argument and value."""
    out = spec.inverse(y, tol)
    return float(out) if np.ndim(out) == 0 else out


def channel_corruption(specs: Sequence[CorruptionSpec]):
    """Interceptor applying ``specs[i]`` to column ``i`` of a pre-activation matrix."""
    specs = tuple(specs)

    def apply(pre: np.ndarray) -> np.ndarray:
        if pre.shape[1] != len(specs):
            raise ValueError(f"{len(specs)} corruptions for {pre.shape[1]} channels")
        return np.column_stack([spec(pre[:, i]) for i, spec in enumerate(specs)])

    return apply


# --- input distributions ---------------------------------------------------

@dataclass(frozen=True)
class StandardNormal:
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal(n)

    def cdf(self, x):
        return normal_cdf(x)

    def ppf(self, u):
        return probit(u)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class TruncatedNormal:
    """Standard normal conditioned on ``[lo, hi]``."""

    lo: float = -2.0
    hi: float = 2.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("TruncatedNormal needs lo < hi")

    @property
    def mass(self) -> float:
        return normal_cdf(self.hi) - normal_cdf(self.lo)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) / self.mass, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return np.clip((normal_cdf(x) - normal_cdf(self.lo)) / self.mass, 0.0, 1.0)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        p = normal_cdf(self.lo) + u * self.mass
        p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        return np.clip(probit(p), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))


@dataclass(frozen=True)
class UniformInterval:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("UniformInterval needs lo < hi")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not (len(w) == len(self.means) == len(self.stds) >= 1):
            raise ValueError("mixture weights, means and stds must have equal length")
        if any(v <= 0 for v in w) or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise ValueError("mixture weights must be positive and sum to 1")
        if any(s <= 0 for s in self.stds):
            raise ValueError("mixture stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", tuple(float(v) for v in self.means))
        object.__setattr__(self, "stds", tuple(float(v) for v in self.stds))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.array(self.weights))
        z = rng.standard_normal(n)
        return np.array(self.means)[comp] + np.array(self.stds)[comp] * z

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        m, s, w = np.array(self.means), np.array(self.stds), np.array(self.weights)
        return np.sum(w * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi)), axis=-1)


@dataclass(frozen=True)
class SourceSpec:
    """Independent input coordinates, one distribution each."""

    distributions: tuple
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distributions", tuple(self.distributions))
        if not self.distributions:
            raise ValueError("SourceSpec needs at least one input distribution")

    @classmethod
    def iid(cls, dist, d: int, rng_seed: int = 0) -> "SourceSpec":
        return cls((dist,) * d, rng_seed)

    @property
    def d(self) -> int:
        return len(self.distributions)


def sample_source(spec: SourceSpec, n: int) -> np.ndarray:
    """``n`` rows drawn from ``spec``; identical for identical seeds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.rng_seed)
    return np.column_stack([dist.sample(rng, n) for dist in spec.distributions])
