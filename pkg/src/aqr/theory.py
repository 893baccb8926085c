"""Numerical checks of the recovery and finite-sample error statements.

Most functions here work on a single neuron with closed-form marginals, so
the population quantities (quantile function, CDF, density bounds) are exact
and the empirical pieces can be compared against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from aqr.corruption import CorruptionSpec, SourceSpec, TruncatedNormal
from aqr.quantile import (Ecdf, QuantileProfile, compute_quantile_profile, ecdf_eval,
                          interpolate_quantile)


# --- MSE --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MseReport:
    per_neuron: np.ndarray
    total: float
    n_eval: int

    def __post_init__(self):
        per = np.array(self.per_neuron, dtype=float)
        if per.ndim != 1 or np.any(per < 0):
            raise ValueError("per_neuron must be a vector of non-negative values")
        per.setflags(write=False)
        object.__setattr__(self, "per_neuron", per)


def mse_against_reference(adapted, reference) -> MseReport:
    """Column-wise mean squared difference; ``total`` sums over columns."""
    a = np.asarray(adapted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if a.shape != r.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {r.shape}")
    if a.ndim == 1:
        a, r = a[:, None], r[:, None]
    per = np.mean((a - r) ** 2, axis=0)
    return MseReport(per, float(per.sum()), a.shape[0])


# --- bounds -------------------------------------------------------------------

def dkw_epsilon(n, delta: float) -> float:
    """Width ``sqrt(ln(2/delta) / (2n))`` of the DKW confidence band; ``n`` may be ``inf``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not n >= 1:
        raise ValueError("n must be >= 1")
    if math.isinf(n):
        return 0.0
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class RegularityConstants:
    """Density bounds ``f_min <= f <= f_max`` and ``|f'| <= lipschitz_density``."""

    f_min: float
    f_max: float
    lipschitz_density: float

    def __post_init__(self):
        if not self.f_min > 0:
            raise ValueError("f_min must be > 0")
        if not self.f_max >= self.f_min:
            raise ValueError("f_max must be >= f_min")
        if not self.lipschitz_density >= 0:
            raise ValueError("lipschitz_density must be >= 0")

    @property
    def quantile_curvature_bound(self) -> float:
        """Upper bound on ``|H''|`` from ``H'' = -f'(H) / f(H)**3``."""
        return self.lipschitz_density / self.f_min ** 3


def theorem1_bound(c: RegularityConstants, K: int, n_source, n_target, delta: float) -> float:
    """Three-term bound on the per-neuron MSE of the practical recalibration map."""
    if not c.f_min > 0:
        raise ValueError("f_min must be > 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    disc = 3.0 * (c.lipschitz_density / (8.0 * c.f_min ** 3)) ** 2 * float(K) ** -4
    eps_s = dkw_epsilon(n_source, delta)
    eps_t = dkw_epsilon(n_target, delta)
    return disc + 3.0 * eps_s ** 2 / c.f_min ** 2 + 3.0 * eps_t ** 2 / c.f_min ** 2


def lemma4_bound(curvature_sup: float, K: int) -> float:
    """``(sup|H''| / 8) K^-2``: sup error of the K-knot linear interpolant."""
    return curvature_sup / 8.0 * float(K) ** -2


# --- rate fits -----------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]


def fit_loglog_rate(xs, ys) -> RateFit:
    """Least-squares line through ``(ln x, ln y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("need at least 3 paired values")
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ValueError("rate fits need strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    # a constant series is fit perfectly by a flat line
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(float(slope), float(intercept), float(r2),
                   tuple((float(a), float(b)) for a, b in zip(lx, ly)))


# --- closed-form marginals -------------------------------------------------------

def truncated_normal_constants(lo: float = -2.0, hi: float = 2.0) -> RegularityConstants:
    """Density bounds of ``N(0, 1)`` restricted to ``[lo, hi]``.

    ``f_min`` sits at the endpoint farthest from 0, ``f_max`` at the point
    closest to 0, and ``|f'| = |x| phi(x) / Z`` peaks at ``|x| = 1`` when it
    lies inside the interval.
    """
    dist = TruncatedNormal(lo, hi)
    Z = dist.mass

    def phi(x):
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)

    far = max(abs(lo), abs(hi))
    near = 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))
    slope_pts = [abs(lo), abs(hi)] + [1.0 for v in (-1.0, 1.0) if lo <= v <= hi]
    L = max(x * phi(x) for x in slope_pts) / Z
    return RegularityConstants(phi(far) / Z, phi(near) / Z, L)


def truncated_normal_curvature_sup(lo: float = -2.0, hi: float = 2.0) -> float:
    """Exact ``sup |H''|`` for the truncated normal: ``Z**2 |x| / phi(x)**2`` at the far endpoint."""
    Z = TruncatedNormal(lo, hi).mass
    x = max(abs(lo), abs(hi))
    phi = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return Z * Z * x / (phi * phi)


@dataclass(frozen=True)
class TruncatedExponential:
    """Density ``lam * exp(lam x) / (exp(lam) - 1)`` on ``[0, 1]``.

    The density grows across the interval, so the quantile function has
    curvature of a single sign everywhere; this keeps the interpolation error
    from cancelling and the ``K^-4`` regime visible before sampling noise
    takes over.
    """

    lam: float = 5.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")

    @property
    def _norm(self) -> float:
        return math.expm1(self.lam)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        return np.where(inside, self.lam * np.exp(self.lam * x) / self._norm, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return np.expm1(self.lam * x) / self._norm

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return np.log1p(u * self._norm) / self.lam

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def constants(self) -> RegularityConstants:
        f_min = self.lam / self._norm
        f_max = self.lam * math.exp(self.lam) / self._norm
        return RegularityConstants(f_min, f_max, self.lam * f_max)


# --- discretization and estimation errors --------------------------------------

def _grid(grid: int) -> np.ndarray:
    return np.arange(grid + 1) / grid


def discretization_gap(exact_quantile: Callable, K: int, grid: int) -> float:
    """Sup over ``u = i/grid`` of ``|H(u) - H_K(u)|``, with ``H_K`` interpolating ``H(j/K)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if grid < 10 * K:
        raise ValueError("grid must be >= 10 K")
    knots = np.asarray(exact_quantile(np.arange(K + 1) / K), dtype=float)
    u = _grid(grid)
    interp = np.interp(u, np.arange(K + 1) / K, knots)
    return float(np.max(np.abs(np.asarray(exact_quantile(u), dtype=float) - interp)))


def practical_aqr(source: QuantileProfile, target: Ecdf, z):
    """Finite-sample map ``H~_K(F^_Q(z))``: source quantile interpolant after the target ECDF."""
    return interpolate_quantile(source, ecdf_eval(target, z))


@dataclass(frozen=True, eq=False)
class ErrorDecomposition:
    total: np.ndarray
    quantile_term: np.ndarray
    cdf_term: np.ndarray


def error_decomposition(source: QuantileProfile, target: Ecdf, exact_quantile: Callable,
                        exact_target_cdf: Callable, z) -> ErrorDecomposition:
    """Split ``T^(z) - T*(z)`` into a quantile-estimation and a CDF-estimation part.

    ``total = [H~(F^(z)) - H(F^(z))] + [H(F^(z)) - H(F(z))]``.
    """
    z = np.asarray(z, dtype=float)
    u_hat = np.asarray(ecdf_eval(target, z), dtype=float)
    estimate = np.asarray(interpolate_quantile(source, u_hat), dtype=float)
    at_hat = np.asarray(exact_quantile(u_hat), dtype=float)
    truth = np.asarray(exact_quantile(np.asarray(exact_target_cdf(z), dtype=float)), dtype=float)
    return ErrorDecomposition(estimate - truth, estimate - at_hat, at_hat - truth)


def knot_stability(exact_quantile: Callable, profile: QuantileProfile, grid: int) -> tuple[float, float]:
    """``(sup |H~_K - H_K|, max_j |q^_j - H(j/K)|)``; the first never exceeds the second."""
    levels = profile.levels
    exact_knots = np.asarray(exact_quantile(levels), dtype=float)
    u = _grid(grid)
    gap = np.abs(np.interp(u, levels, profile.knots) - np.interp(u, levels, exact_knots))
    return float(gap.max()), float(np.max(np.abs(profile.knots - exact_knots)))


def sup_ecdf_deviation(samples, cdf: Callable) -> float:
    """Exact ``sup_x |F^_n(x) - F(x)|`` for a continuous ``F``, checked at the jumps."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def dkw_exceedance(dist, n: int, delta: float, trials: int, master_seed: int = 0) -> np.ndarray:
    """Sup ECDF deviation of ``trials`` independent samples of size ``n``."""
    out = np.empty(trials)
    for t in range(trials):
        rng = trial_rng(master_seed, t)
        out[t] = sup_ecdf_deviation(dist.sample(rng, n), dist.cdf)
    return out


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Generator owned by one trial; independent of how trials are scheduled."""
    return np.random.default_rng([int(master_seed), int(trial)])


# --- finite-sample recalibration on one neuron ----------------------------------

def practical_aqr_mse(dist, corruption: CorruptionSpec | None, K: int, n_source: int, n_target: int,
                      n_eval: int, seed) -> float:
    """Per-neuron MSE of the practical map against the exact recovery.

    Source and target samples are independent draws of the neuron's
    pre-activation; the target side is pushed through ``corruption``. Since
    the exact map sends ``g(t)`` back to ``t``, the error at an evaluation
    point ``g(t)`` is just the estimate minus ``t``.

    Source, target and evaluation draws come from three separate streams of
    ``seed``, so calls that differ only in a sample size share their leading
    draws.
    """
    g = corruption if corruption is not None else (lambda v: np.asarray(v, dtype=float))
    rng_s, rng_t, rng_e = (np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(3))
    source = compute_quantile_profile(dist.sample(rng_s, n_source), K)
    target = Ecdf.from_samples(g(dist.sample(rng_t, n_target)))
    t = dist.sample(rng_e, n_eval)
    err = np.asarray(practical_aqr(source, target, g(t))) - t
    return float(np.mean(err * err))


@dataclass(frozen=True)
class SweepResult:
    name: str
    xs: tuple
    mse: tuple
    fit: RateFit


def rate_sweep(dist, corruption, name: str, values: Sequence[int], fixed: dict, trials: int,
               n_eval: int, master_seed: int = 0) -> SweepResult:
    """Average MSE over ``trials`` while ``name`` (K, n_source or n_target) runs through ``values``.

    Trial ``t`` uses the same seed at every sweep point (common random
    numbers), so the points differ only through the swept quantity.
    """
    if name not in ("K", "n_source", "n_target"):
        raise ValueError(f"unknown sweep variable {name!r}")
    means = []
    for v in values:
        args = dict(fixed)
        args[name] = int(v)
        acc = sum(practical_aqr_mse(dist, corruption, args["K"], args["n_source"], args["n_target"],
                                    n_eval, [int(master_seed), t])
                  for t in range(trials))
        means.append(acc / trials)
    return SweepResult(name, tuple(int(v) for v in values), tuple(means), fit_loglog_rate(values, means))


def bound_dominance(dist, constants: RegularityConstants, K: int, n_source: int, n_target: int,
                    delta: float, trials: int, n_eval: int, master_seed: int = 0):
    """Per-trial MSE and the high-probability bound it is checked against."""
    bound = theorem1_bound(constants, K, n_source, n_target, delta)
    mses = np.array([practical_aqr_mse(dist, None, K, n_source, n_target, n_eval, [int(master_seed), t])
                     for t in range(trials)])
    return mses, bound


# --- small-batch tail deviation ---------------------------------------------------

def tail_deviation_experiment(reference_n: int, small_n: int, trials: int, dist, K: int,
                              rng_seed: int = 0) -> np.ndarray:
    """Small-batch minus reference knots, shape ``(K + 1, trials)``.

    The reference profile uses ``reference_n`` draws; each trial's small batch
    is a subset of ``small_n`` of those draws taken without replacement, so a
    small batch as large as the reference reproduces it exactly.
    """
    if isinstance(dist, SourceSpec):
        dist = dist.distributions[0]
    if not 2 <= small_n <= reference_n:
        raise ValueError("need 2 <= small_n <= reference_n")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pool = dist.sample(np.random.default_rng([int(rng_seed), 0]), reference_n)
    reference = compute_quantile_profile(pool, K).knots
    out = np.empty((K + 1, trials))
    for t in range(trials):
        rng = np.random.default_rng([int(rng_seed), 1, t])
        idx = rng.choice(reference_n, size=small_n, replace=False)
        out[:, t] = compute_quantile_profile(pool[idx], K).knots - reference
    return out
