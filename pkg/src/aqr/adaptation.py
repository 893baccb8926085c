"""Two-phase recalibration over a network: record source statistics, then adapt batches."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from aqr.net import HookCapture, LayerPolicy, Network, forward, select_hooks
from aqr.quantile import QuantileProfile, batch_transform, compute_quantile_profile
from aqr.tails import (SampledTailEstimate, TailRule, TailStrategy,
                       calibrate_average_sample_tails)

STATS_VERSION = 1


@dataclass(frozen=True)
class AdaptationConfig:
    K: int = 100
    tail_strategy: TailStrategy = TailStrategy.AVERAGE_SAMPLE_TAILS
    layer_policy: LayerPolicy = LayerPolicy.ALL
    batch_size: int = 128
    tail_batch: int = 100
    tail_repeats: int = 1000
    n_source: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tail_strategy", TailStrategy.parse(self.tail_strategy))
        object.__setattr__(self, "layer_policy", LayerPolicy.parse(self.layer_policy))
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.tail_batch < 2 or self.tail_repeats < 1:
            raise ValueError("tail_batch must be >= 2 and tail_repeats >= 1")
        if self.n_source < 2:
            raise ValueError("n_source must be >= 2")


@dataclass(frozen=True)
class ChannelStats:
    profile: QuantileProfile
    mean: float
    std: float
    calibrated_tails: SampledTailEstimate | None = None

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError("std must be >= 0")


@dataclass(frozen=True)
class SourceStatistics:
    """Frozen per-hook, per-channel source summaries."""

    K: int
    n_source: int
    tail_strategy: TailStrategy
    layer_policy: LayerPolicy
    hooks: Mapping[str, tuple[ChannelStats, ...]]
    version: int = STATS_VERSION

    def __post_init__(self):
        object.__setattr__(self, "tail_strategy", TailStrategy.parse(self.tail_strategy))
        object.__setattr__(self, "layer_policy", LayerPolicy.parse(self.layer_policy))
        object.__setattr__(self, "hooks", {k: tuple(v) for k, v in self.hooks.items()})
        for hook, channels in self.hooks.items():
            for ch in channels:
                if ch.profile.level_count != self.K:
                    raise ValueError(f"hook {hook}: profile granularity differs from K={self.K}")


def setup_phase(net: Network, source_batches: Sequence[np.ndarray], cfg: AdaptationConfig) -> SourceStatistics:
    """Pass source data through the unmodified network and summarise every hooked channel."""
    batches = [np.asarray(b, dtype=float) for b in source_batches]
    total = sum(b.shape[0] for b in batches)
    needed = max(cfg.K + 1, cfg.tail_batch)
    if total < needed:
        raise ValueError(f"insufficient source rows: {total} < {needed}")

    pooled: dict[str, list[np.ndarray]] = {h: [] for h in net.hook_ids}
    for b in batches:
        _, captures = forward(net, b)
        for cap in captures:
            pooled[cap.hook_id].append(cap.pre_activations)

    hooks = {}
    for h_idx, hook in enumerate(net.hook_ids):
        values = np.concatenate(pooled[hook], axis=0)
        channels = []
        for c in range(values.shape[1]):
            col = values[:, c]
            tails = None
            if cfg.tail_strategy is TailStrategy.AVERAGE_SAMPLE_TAILS:
                tails = calibrate_average_sample_tails(
                    col, cfg.tail_batch, cfg.tail_repeats, rng_seed=[cfg.seed, h_idx, c])
            channels.append(ChannelStats(compute_quantile_profile(col, cfg.K),
                                         float(col.mean()), float(col.std()), tails))
        hooks[hook] = tuple(channels)
    return SourceStatistics(cfg.K, total, cfg.tail_strategy, cfg.layer_policy, hooks)


@dataclass
class AdaptDiagnostics:
    target_profiles: dict[str, tuple[QuantileProfile, ...]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    captures: list[HookCapture] = field(default_factory=list)


def tail_rule_for(strategy: TailStrategy, ch: ChannelStats, column: np.ndarray) -> TailRule:
    if strategy is TailStrategy.AVERAGE_SAMPLE_TAILS:
        if ch.calibrated_tails is None:
            raise ValueError("statistics carry no calibrated tails; rerun setup with average-sample-tails")
        return TailRule.average_sample_tails(ch.calibrated_tails)
    if strategy is TailStrategy.INTERVAL_ESTIMATION:
        return TailRule.interval_estimation(ch.std, float(column.std()))
    if strategy is TailStrategy.GAUSSIAN_ESTIMATION:
        return TailRule.gaussian_estimation((ch.mean, ch.std), (float(column.mean()), float(column.std())),
                                            column.size)
    return TailRule(strategy)


def adapt_batch(net: Network, stats: SourceStatistics, batch, *,
                shift: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None,
                tail_strategy: TailStrategy | str | None = None,
                layer_policy: LayerPolicy | str | None = None):
    """Recalibrate one batch, shallow hooks first.

    ``shift`` optionally maps hook ids to a corruption applied to the
    pre-activations just before recalibration (the synthetic domain shift).
    Returns ``(output, diagnostics)``; nothing is carried over between calls.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("cannot estimate target quantiles from fewer than 2 rows")
    strategy = stats.tail_strategy if tail_strategy is None else TailStrategy.parse(tail_strategy)
    policy = stats.layer_policy if layer_policy is None else LayerPolicy.parse(layer_policy)
    shift = dict(shift or {})
    selected = set(select_hooks(net, policy))
    missing = selected - set(stats.hooks)
    if missing:
        raise ValueError(f"statistics lack hooks {sorted(missing)}")

    diag = AdaptDiagnostics()
    if x.shape[0] <= stats.K:
        diag.warnings.append(
            f"quantile undersampling: {x.shape[0]} rows for {stats.K + 1} knots; tied knots use the left source knot")

    def make_interceptor(hook: str):
        corrupt = shift.get(hook)
        adapt = hook in selected

        def intercept(pre: np.ndarray) -> np.ndarray:
            values = corrupt(pre) if corrupt is not None else pre
            if not adapt:
                return values
            out = np.empty_like(values)
            profiles = []
            for c, ch in enumerate(stats.hooks[hook]):
                col = values[:, c]
                target = compute_quantile_profile(col, stats.K)
                profiles.append(target)
                out[:, c] = batch_transform(col, target, ch.profile, tail_rule_for(strategy, ch, col))
            diag.target_profiles[hook] = tuple(profiles)
            return out

        return intercept

    hooks = [h for h in net.hook_ids if h in selected or h in shift]
    output, captures = forward(net, x, {h: make_interceptor(h) for h in hooks})
    diag.captures = captures
    return output, diag


def ttn_transform(x, mu_s: float, sigma_s: float, mu_t: float, sigma_t: float):
    """Moment matching ``mu_s + sigma_s * (x - mu_t) / sigma_t``."""
    if not sigma_t > 0:
        raise ValueError("degenerate target: sigma_t must be > 0")
    out = mu_s + sigma_s * (np.asarray(x, dtype=float) - mu_t) / sigma_t
    return float(out) if np.ndim(out) == 0 else out


def ttn_adapt_batch(net: Network, stats: SourceStatistics, batch, *,
                    shift: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None,
                    layer_policy: LayerPolicy | str | None = None):
    """Baseline: per-channel moment matching with this batch's mean and std."""
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("cannot estimate target moments from fewer than 2 rows")
    policy = stats.layer_policy if layer_policy is None else LayerPolicy.parse(layer_policy)
    selected = set(select_hooks(net, policy))
    shift = dict(shift or {})

    def make_interceptor(hook: str):
        corrupt = shift.get(hook)

        def intercept(pre):
            values = corrupt(pre) if corrupt is not None else pre
            if hook not in selected:
                return values
            out = np.empty_like(values)
            for c, ch in enumerate(stats.hooks[hook]):
                col = values[:, c]
                out[:, c] = ttn_transform(col, ch.mean, ch.std, col.mean(), col.std())
            return out

        return intercept

    hooks = [h for h in net.hook_ids if h in selected or h in shift]
    return forward(net, x, {h: make_interceptor(h) for h in hooks})


def oracle_aqr(z, source_quantile: Callable, target_cdf: Callable):
    """Population quantile map ``F_P^{-1}(F_Q(z))`` from closed-form functions."""
    out = source_quantile(target_cdf(np.asarray(z, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


# --- statistics file --------------------------------------------------------

class StatisticsFileError(ValueError):
    pass


def _encode(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("statistics must be finite")
        text = format(obj, ".17g")
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _payload(stats: SourceStatistics) -> dict:
    hooks = []
    tail_batch = tail_repeats = None
    for hook_id, channels in stats.hooks.items():
        rows = []
        for ch in channels:
            row = {"knots": [float(v) for v in ch.profile.knots], "sample_count": ch.profile.sample_count,
                   "mean": float(ch.mean), "std": float(ch.std)}
            if ch.calibrated_tails is not None:
                row["calibrated_low"] = float(ch.calibrated_tails.low)
                row["calibrated_high"] = float(ch.calibrated_tails.high)
                tail_batch = ch.calibrated_tails.batch_size
                tail_repeats = ch.calibrated_tails.repeats
            rows.append(row)
        hooks.append({"hook_id": hook_id, "channels": rows})
    payload = {"version": stats.version, "K": stats.K, "n_source": stats.n_source,
               "tail_strategy": stats.tail_strategy.value, "layer_policy": stats.layer_policy.value}
    if tail_batch is not None:
        payload["tail_batch"] = tail_batch
        payload["tail_repeats"] = tail_repeats
    payload["hooks"] = hooks
    return payload


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_encode(payload).encode("utf-8")).hexdigest()


def save_statistics(stats: SourceStatistics, path) -> Path:
    payload = _payload(stats)
    payload["checksum"] = _checksum(payload)
    path = Path(path)
    path.write_text(_encode(payload) + "\n", encoding="utf-8")
    return path


def load_statistics(path) -> SourceStatistics:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StatisticsFileError(f"malformed statistics file: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise StatisticsFileError("malformed statistics file: no version field")
    if payload["version"] != STATS_VERSION:
        raise StatisticsFileError(f"unsupported version {payload['version']!r}")
    claimed = payload.pop("checksum", None)
    try:
        if claimed != _checksum(payload):
            raise StatisticsFileError("checksum mismatch")
        hooks = {}
        for entry in payload["hooks"]:
            channels = []
            for row in entry["channels"]:
                tails = None
                if "calibrated_low" in row:
                    tails = SampledTailEstimate(row["calibrated_low"], row["calibrated_high"],
                                                payload["tail_batch"], payload["tail_repeats"])
                channels.append(ChannelStats(QuantileProfile(row["knots"], row["sample_count"]),
                                             row["mean"], row["std"], tails))
            hooks[entry["hook_id"]] = tuple(channels)
        return SourceStatistics(payload["K"], payload["n_source"], payload["tail_strategy"],
                                payload["layer_policy"], hooks, payload["version"])
    except StatisticsFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise StatisticsFileError(f"malformed statistics file: {exc}") from exc
