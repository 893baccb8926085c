"""Strategies for the two extreme segments of the recalibration map.

The interior segments ``[p_1, p_{K-1})`` always use the plain piecewise-linear
map. Below ``p_1`` and from ``p_{K-1}`` upwards one of six rules applies:

``standard``
    the piecewise-linear map on the extreme segments, anchored at the stored
    minimum/maximum.
``average-sample-tails``
    same, but the source minimum/maximum are replaced by the mean extreme of
    many small resampled batches.
``not-calibrated``
    values are passed through unchanged.
``clipping``
    values are set to the target's ``p_1`` / ``p_{K-1}``.
``gaussian-estimation``
    Gaussian fits on both sides give the extreme knots at the plotting
    position ``1/(n+1)``.
``interval-estimation``
    the extreme segment is rescaled by the ratio of standard deviations,
    anchored at ``p_0`` (low side) and ``p_{K-1}`` (high side).

For the last two rules the low branch is capped at the source ``p_1`` and the
high branch floored at the source ``p_{K-1}`` so the full map stays monotone.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


class TailStrategy(str, enum.Enum):
    STANDARD = "standard"
    AVERAGE_SAMPLE_TAILS = "average-sample-tails"
    NOT_CALIBRATED = "not-calibrated"
    CLIPPING = "clipping"
    GAUSSIAN_ESTIMATION = "gaussian-estimation"
    INTERVAL_ESTIMATION = "interval-estimation"

    @classmethod
    def parse(cls, value) -> "TailStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key or member.name.lower().replace("_", "-") == key:
                return member
        raise ValueError(f"unknown tail strategy {value!r}")


_PARAMS = {
    TailStrategy.STANDARD: (),
    TailStrategy.NOT_CALIBRATED: (),
    TailStrategy.CLIPPING: (),
    TailStrategy.AVERAGE_SAMPLE_TAILS: ("calibrated_low", "calibrated_high"),
    TailStrategy.INTERVAL_ESTIMATION: ("source_std", "target_std"),
    TailStrategy.GAUSSIAN_ESTIMATION: ("source_fit", "target_fit", "sample_size"),
}
_ALL_PARAMS = ("calibrated_low", "calibrated_high", "source_std", "target_std",
               "source_fit", "target_fit", "sample_size")


@dataclass(frozen=True)
class TailRule:
    """A tail strategy together with exactly the parameters it needs."""

    strategy: TailStrategy
    calibrated_low: float | None = None
    calibrated_high: float | None = None
    source_std: float | None = None
    target_std: float | None = None
    source_fit: tuple[float, float] | None = None
    target_fit: tuple[float, float] | None = None
    sample_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", TailStrategy.parse(self.strategy))
        needed = _PARAMS[self.strategy]
        for name in _ALL_PARAMS:
            present = getattr(self, name) is not None
            if present != (name in needed):
                state = "missing" if name in needed else "unexpected"
                raise ValueError(f"tail context mismatch: {state} {name} for {self.strategy.value}")
        for name in ("source_std", "target_std"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("source_fit", "target_fit"):
            fit = getattr(self, name)
            if fit is not None:
                fit = (float(fit[0]), float(fit[1]))
                if not fit[1] >= 0:
                    raise ValueError(f"{name} std must be >= 0")
                object.__setattr__(self, name, fit)
        if self.sample_size is not None and self.sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        if self.calibrated_low is not None and self.calibrated_low > self.calibrated_high:
            raise ValueError("calibrated_low must not exceed calibrated_high")

    @classmethod
    def standard(cls) -> "TailRule":
        return cls(TailStrategy.STANDARD)

    @classmethod
    def not_calibrated(cls) -> "TailRule":
        return cls(TailStrategy.NOT_CALIBRATED)

    @classmethod
    def clipping(cls) -> "TailRule":
        return cls(TailStrategy.CLIPPING)

    @classmethod
    def average_sample_tails(cls, estimate: "SampledTailEstimate") -> "TailRule":
        return cls(TailStrategy.AVERAGE_SAMPLE_TAILS,
                   calibrated_low=float(estimate.low), calibrated_high=float(estimate.high))

    @classmethod
    def interval_estimation(cls, source_std: float, target_std: float) -> "TailRule":
        return cls(TailStrategy.INTERVAL_ESTIMATION,
                   source_std=float(source_std), target_std=float(target_std))

    @classmethod
    def gaussian_estimation(cls, source_fit, target_fit, sample_size: int) -> "TailRule":
        return cls(TailStrategy.GAUSSIAN_ESTIMATION, source_fit=tuple(source_fit),
                   target_fit=tuple(target_fit), sample_size=int(sample_size))


@dataclass(frozen=True)
class TailContext:
    """The knot values and spread estimates a tail rule reads."""

    source_p0: float
    source_p1: float
    source_p99: float
    source_p100: float
    target_p0: float
    target_p1: float
    target_p99: float
    target_p100: float
    level_count: int
    source_std: float | None = None
    target_std: float | None = None
    gaussian_fit_source: tuple[float, float] | None = None
    gaussian_fit_target: tuple[float, float] | None = None
    sample_size: int | None = None

    def __post_init__(self):
        for side in ("source", "target"):
            p = [getattr(self, f"{side}_p{k}") for k in (0, 1, 99, 100)]
            if not (p[0] <= p[1] <= p[2] <= p[3]):
                raise ValueError(f"tail context mismatch: {side} knots out of order")
        if self.level_count < 2:
            raise ValueError("tail context mismatch: level_count must be >= 2")

    @classmethod
    def from_profiles(cls, target_knots, source_knots, rule: TailRule) -> "TailContext":
        T = np.asarray(target_knots, dtype=float)
        S = np.asarray(source_knots, dtype=float)
        K = T.size - 1
        return cls(
            source_p0=float(S[0]), source_p1=float(S[1]),
            source_p99=float(S[K - 1]), source_p100=float(S[K]),
            target_p0=float(T[0]), target_p1=float(T[1]),
            target_p99=float(T[K - 1]), target_p100=float(T[K]),
            level_count=K,
            source_std=rule.source_std, target_std=rule.target_std,
            gaussian_fit_source=rule.source_fit, gaussian_fit_target=rule.target_fit,
            sample_size=rule.sample_size,
        )


@dataclass(frozen=True)
class SampledTailEstimate:
    low: float
    high: float
    batch_size: int
    repeats: int

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError("low must not exceed high")
        if self.batch_size < 2 or self.repeats < 1:
            raise ValueError("batch_size must be >= 2 and repeats >= 1")


def calibrate_average_sample_tails(samples, batch_size: int = 100, repeats: int = 1000,
                                   rng_seed: int = 0, replace: bool = True) -> SampledTailEstimate:
    """Average the minimum and maximum of ``repeats`` random batches."""
    arr = np.asarray(samples, dtype=float).ravel()
    if batch_size < 2 or repeats < 1:
        raise ValueError("batch_size must be >= 2 and repeats >= 1")
    if batch_size > arr.size:
        raise ValueError("batch exceeds population")
    rng = np.random.default_rng(rng_seed)
    if replace:
        idx = rng.integers(0, arr.size, size=(repeats, batch_size))
    else:
        idx = np.stack([rng.choice(arr.size, batch_size, replace=False) for _ in range(repeats)])
    batches = arr[idx]
    return SampledTailEstimate(float(batches.min(axis=1).mean()), float(batches.max(axis=1).mean()),
                               int(batch_size), int(repeats))


# Algorithm AS 241 (PPND16).
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(coeffs, r):
    acc = np.zeros_like(r) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * r + c
    return acc


def probit(p):
    """Inverse of the standard normal CDF."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0)) or np.any(~(p_arr < 1)):
        raise ValueError("probit undefined outside (0, 1)")
    q = p_arr - 0.5
    central = np.abs(q) <= 0.425

    r_c = 0.180625 - q * q
    z_central = q * _poly(_A, r_c) / _poly(_B, r_c)

    tail_p = np.where(q < 0, p_arr, 1.0 - p_arr)
    tail_p = np.where(central, 0.5, tail_p)
    r = np.sqrt(-np.log(tail_p))
    near = r <= 5.0
    r_near = r - 1.6
    r_far = r - 5.0
    z_tail = np.where(near, _poly(_C, r_near) / _poly(_D, r_near), _poly(_E, r_far) / _poly(_F, r_far))
    z_tail = np.where(q < 0, -z_tail, z_tail)

    out = np.where(central, z_central, z_tail)
    return float(out) if out.ndim == 0 else out


def normal_cdf(x):
    out = ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_tail_quantiles(mean: float, std: float, n: int) -> tuple[float, float]:
    """Gaussian quantiles at the plotting positions ``1/(n+1)`` and ``n/(n+1)``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not std >= 0:
        raise ValueError("std must be >= 0")
    z = probit(1.0 / (n + 1))
    return mean + std * z, mean - std * z


# A target spread this much narrower than the source one is treated as
# degenerate; larger ratios only produce overflowed tails.
MAX_SPREAD_RATIO = 1e12


def _require(ctx: TailContext, *names):
    for name in names:
        if getattr(ctx, name) is None:
            raise ValueError(f"tail context mismatch: {name} missing")


def apply_tail_rule(x, rule: TailRule, ctx: TailContext):
    """Map values that fall in the extreme segments (``x < p_1`` or ``x >= p_{K-1}``)."""
    x_arr = np.asarray(x, dtype=float)
    low = x_arr < ctx.target_p1
    strategy = rule.strategy

    if strategy is TailStrategy.NOT_CALIBRATED:
        out = x_arr.copy()
    elif strategy is TailStrategy.CLIPPING:
        out = np.where(low, ctx.target_p1, ctx.target_p99)
    elif strategy in (TailStrategy.STANDARD, TailStrategy.AVERAGE_SAMPLE_TAILS):
        s0, s100 = ctx.source_p0, ctx.source_p100
        if strategy is TailStrategy.AVERAGE_SAMPLE_TAILS:
            s0 = min(rule.calibrated_low, ctx.source_p1)
            s100 = max(rule.calibrated_high, ctx.source_p99)
        out = np.where(
            low,
            _affine_segment(x_arr, ctx.target_p0, ctx.target_p1, s0, ctx.source_p1),
            _affine_segment(x_arr, ctx.target_p99, ctx.target_p100, ctx.source_p99, s100),
        )
    elif strategy is TailStrategy.INTERVAL_ESTIMATION:
        _require(ctx, "source_std", "target_std")
        ratio = ctx.source_std / ctx.target_std if ctx.target_std > 0 else math.inf
        if ratio <= MAX_SPREAD_RATIO:
            low_val = (x_arr - ctx.target_p0) * ratio + ctx.source_p0
            high_val = (x_arr - ctx.target_p99) * ratio + ctx.source_p99
        else:
            low_val = np.full_like(x_arr, ctx.source_p0)
            high_val = np.full_like(x_arr, ctx.source_p99)
        out = np.where(low, np.minimum(low_val, ctx.source_p1), np.maximum(high_val, ctx.source_p99))
    elif strategy is TailStrategy.GAUSSIAN_ESTIMATION:
        _require(ctx, "gaussian_fit_source", "gaussian_fit_target", "sample_size")
        beta, gamma = ctx.gaussian_fit_source
        mu, sigma = ctx.gaussian_fit_target
        K = ctx.level_count
        z_ext = probit(1.0 / (ctx.sample_size + 1))
        z_in = probit(1.0 / K)
        # Q(p) = mean + std * probit(p) on each side; the segment between the
        # extreme level and the first/last inner level maps linearly, which
        # reduces to slope gamma / sigma.
        ratio = gamma / sigma if sigma > 0 else math.inf
        if ratio <= MAX_SPREAD_RATIO:
            low_val = (x_arr - (mu + sigma * z_ext)) * ratio + (beta + gamma * z_ext)
            high_val = (x_arr - (mu - sigma * z_in)) * ratio + (beta - gamma * z_in)
        else:
            low_val = np.full_like(x_arr, beta + gamma * z_ext)
            high_val = np.full_like(x_arr, beta - gamma * z_in)
        out = np.where(low, np.minimum(low_val, ctx.source_p1), np.maximum(high_val, ctx.source_p99))
    else:  # pragma: no cover
        raise ValueError(f"unknown tail strategy {strategy!r}")

    return float(out) if out.ndim == 0 else out


def _affine_segment(x, t0, t1, s0, s1):
    width = t1 - t0
    if width <= 0:
        return np.full_like(x, s0)
    return s0 + ((x - t0) / width) * (s1 - s0)

