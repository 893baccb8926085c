"""Empirical quantiles, empirical CDFs and the piecewise-linear recalibration map.

Nothing in here knows about networks; every function works on plain arrays of
activation values for a single channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aqr.tails import TailContext, TailRule, TailStrategy, apply_tail_rule


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuantileProfile:
    """Sorted knot values at the uniform levels ``j / K``, ``j = 0..K``."""

    knots: np.ndarray
    sample_count: int

    def __post_init__(self):
        knots = _frozen(self.knots)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a profile needs at least two knots")
        if not np.all(np.isfinite(knots)):
            raise ValueError("non-finite input")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        object.__setattr__(self, "knots", knots)

    @property
    def level_count(self) -> int:
        return self.knots.size - 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.level_count + 1) / self.level_count

    def __eq__(self, other):
        if not isinstance(other, QuantileProfile):
            return NotImplemented
        return self.sample_count == other.sample_count and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.sample_count, self.knots.tobytes()))


@dataclass(frozen=True, eq=False)
class Ecdf:
    sorted_samples: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.sorted_samples)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("insufficient samples")
        if np.any(np.diff(arr) < 0):
            raise ValueError("sorted_samples must be sorted ascending")
        object.__setattr__(self, "sorted_samples", arr)

    @classmethod
    def from_samples(cls, samples) -> "Ecdf":
        arr = np.asarray(samples, dtype=float).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite input")
        return cls(np.sort(arr))

    @property
    def size(self) -> int:
        return self.sorted_samples.size


def _checked_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size < 2:
        raise ValueError("insufficient samples")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input")
    return arr


def order_statistic_quantiles(sorted_samples: np.ndarray, K: int) -> np.ndarray:
    """Quantiles at levels ``j/K`` by linear interpolation at position ``(n-1) j / K``.

    Positions are split with integer arithmetic so that levels landing on an
    order statistic return it exactly.
    """
    n = sorted_samples.size
    j = np.arange(K + 1)
    lo, rem = np.divmod(j * (n - 1), K)
    hi = np.minimum(lo + 1, n - 1)
    frac = rem / K
    a = sorted_samples[lo]
    b = sorted_samples[hi]
    out = a + frac * (b - a)
    # interpolation can round past the right neighbour
    return np.minimum(np.where(rem == 0, a, out), b)


def compute_quantile_profile(samples, K: int) -> QuantileProfile:
    """Estimate the ``K + 1`` knots of a channel's distribution.

    ``knots[0]`` and ``knots[K]`` are the sample minimum and maximum.
    """
    if int(K) != K or K < 1:
        raise ValueError("K must be >= 1")
    arr = _checked_samples(samples)
    return QuantileProfile(order_statistic_quantiles(np.sort(arr), int(K)), arr.size)


def ecdf_eval(e: Ecdf, x):
    """Fraction of samples ``<= x``; vectorised over ``x``."""
    counts = np.searchsorted(e.sorted_samples, x, side="right")
    out = counts / e.size
    return float(out) if np.ndim(out) == 0 else out


def interpolate_quantile(profile: QuantileProfile, u):
    """Piecewise-linear quantile function through the profile knots."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u_arr)) or np.any(u_arr < 0) or np.any(u_arr > 1):
        raise ValueError("level out of range")
    out = np.interp(u_arr, profile.levels, profile.knots)
    return float(out) if np.ndim(out) == 0 else out


def _segment_map(x: np.ndarray, target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Map ``x`` through the segments ``[t_j, t_{j+1}) -> [s_j, s_{j+1}]``.

    The segment is the rightmost ``j`` with ``t_j <= x``; values beyond the
    outer knots extrapolate along the first/last segment. Tied target knots
    send ``x`` to the left source knot.
    """
    K = target.size - 1
    j = np.clip(np.searchsorted(target, x, side="right") - 1, 0, K - 1)
    t_lo = target[j]
    width = target[j + 1] - t_lo
    s_lo = source[j]
    s_width = source[j + 1] - s_lo
    flat = width <= 0
    safe = np.where(flat, 1.0, width)
    mapped = s_lo + ((x - t_lo) / safe) * s_width
    return np.where(flat, s_lo, mapped)


def _check_pair(target: QuantileProfile, source: QuantileProfile):
    if target.level_count != source.level_count:
        raise ValueError("profile mismatch")


def batch_transform(values, target: QuantileProfile, source: QuantileProfile,
                    tail: TailRule | None = None) -> np.ndarray:
    """Recalibrate a batch of activations from the target to the source profile."""
    _check_pair(target, source)
    tail = TailRule.standard() if tail is None else tail
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return x.astype(float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")

    T = target.knots
    S = source.knots
    strategy = tail.strategy
    if strategy is TailStrategy.STANDARD:
        if np.array_equal(T, S):
            return x.copy()
        return _segment_map(x, T, S)
    if strategy is TailStrategy.AVERAGE_SAMPLE_TAILS:
        K = source.level_count
        S = S.copy()
        # the calibrated extremes must not cross the neighbouring knots
        S[0] = min(tail.calibrated_low, S[1])
        S[K] = max(tail.calibrated_high, S[K - 1])
        return _segment_map(x, T, S)

    K = target.level_count
    if K < 2:
        raise ValueError(f"{strategy.value} tails need K >= 2")
    ctx = TailContext.from_profiles(T, S, tail)
    out = _segment_map(x, T, S)
    in_tail = (x < T[1]) | (x >= T[K - 1])
    if np.any(in_tail):
        out = out.copy()
        out[in_tail] = apply_tail_rule(x[in_tail], tail, ctx)
    return out


def piecewise_transform(x: float, target: QuantileProfile, source: QuantileProfile,
                        tail: TailRule | None = None) -> float:
    """Scalar version of :func:`batch_transform`."""
    return float(batch_transform(np.array([x], dtype=float), target, source, tail)[0])
