"""Experiment configuration: an INI-style file with optional top-level keys.

Keys before the first section header belong to ``[run]``. Unknown sections or
keys, duplicate keys, unparsable values and constraint violations raise
:class:`ConfigError` naming the offending line and field.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from aqr.adaptation import AdaptationConfig
from aqr.corruption import (GaussianMixture, SourceSpec, StandardNormal, TruncatedNormal,
                            UniformInterval)
from aqr.net import Activation, LayerPolicy
from aqr.tails import TailStrategy
from aqr.testbed import CORRUPTION_FAMILIES, CorruptionPlan

EXPERIMENTS = ("setup", "adapt", "theory-rates", "tail-ablation", "tail-deviation", "kde-demo", "granularity")


class ConfigError(ValueError):
    pass


def _int_list(text):
    return tuple(int(v) for v in _split(text))


def _float_list(text):
    return tuple(float(v) for v in _split(text))


def _split(text):
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(p == "" for p in parts):
        raise ValueError("expected a comma-separated list")
    return parts


def _range(text):
    vals = _float_list(text)
    if len(vals) == 1:
        return (vals[0], vals[0])
    if len(vals) != 2:
        raise ValueError("expected 'value' or 'low, high'")
    return vals


def _name_list(text):
    return tuple(p.lower() for p in _split(text))


SCHEMA = {
    "run": {"experiment": str, "output_dir": str, "master_seed": int, "eval_n": int, "trials": int,
            "statistics": str},
    "adaptation": {"k": int, "tail_strategy": str, "layer_policy": str, "batch_size": int,
                   "tail_batch": int, "tail_repeats": int, "n_source": int},
    "network": {"d": int, "m": int, "depth": int, "activation": str, "slope": float, "seed": int},
    "source": {"distribution": str, "lo": float, "hi": float, "weights": _float_list, "means": _float_list,
               "stds": _float_list, "seed": int},
    "corruption": {"kind": str, **{p: _range for fam in CORRUPTION_FAMILIES.values() for p in fam}},
    "experiment": {"k_values": _int_list, "batch_sizes": _int_list, "eval_batches": int, "seeds": int,
                   "strategies": _name_list, "n_values": _int_list, "n_max": int, "rate_lambda": float,
                   "delta": float, "bound_trials": int, "reference_n": int, "small_n": int,
                   "repetitions": int, "bins": int},
}


@dataclass(frozen=True)
class NetworkConfig:
    d: int = 3
    m: int = 8
    depth: int = 1
    activation: Activation = field(default_factory=lambda: Activation("leaky_relu", 0.1))
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    source: SourceSpec = field(default_factory=lambda: SourceSpec.iid(StandardNormal(), 3, 0))
    corruption: CorruptionPlan = field(default_factory=CorruptionPlan)
    eval_n: int = 50_000
    trials: int = 20
    output_dir: Path = Path("aqr-out")
    master_seed: int = 0
    statistics: Path | None = None
    params: dict = field(default_factory=dict)

    def param(self, name: str):
        return self.params.get(name, EXPERIMENT_DEFAULTS[name])


EXPERIMENT_DEFAULTS = {
    "k_values": None,  # per experiment: granularity (10, 100), theory-rates (8, ..., 128)
    "batch_sizes": (128, 512),
    "eval_batches": 20,
    "seeds": 10,
    "strategies": tuple(s.value for s in TailStrategy),
    "n_values": (500, 2000, 8000, 32000),
    "n_max": 200_000,
    "rate_lambda": 5.0,
    "delta": 0.1,
    "bound_trials": 200,
    "reference_n": 10_000,
    "small_n": 128,
    "repetitions": 20,
    "bins": 60,
}

DEFAULT_MIXTURE = GaussianMixture((0.35, 0.65), (-2.0, 1.5), (0.6, 0.8))


def _line_of(text: str, section: str, key: str) -> int | None:
    current = "run"
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip().lower()
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.IGNORECASE):
            return i
    return None


def _where(text, section, key):
    line = _line_of(text, section, key)
    prefix = f"line {line}: " if line else ""
    return f"{prefix}[{section}] {key}"


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"),
                                       default_section="__defaults__")
    body = text
    if not re.match(r"\s*\[", text):
        body = "[run]\n" + text
    try:
        parser.read_string(body, source=origin)
    except configparser.Error as exc:
        msg = str(exc)
        if body is not text:
            # report line numbers against the file as written
            msg = re.sub(r"line\s+(\d+)", lambda mt: f"line {int(mt.group(1)) - 1}", msg)
        raise ConfigError(f"{origin}: parse error: {msg}") from None

    values: dict[str, dict] = {}
    for section in parser.sections():
        name = section.strip().lower()
        if name not in SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        values[name] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[name]:
                raise ConfigError(f"{origin}: {_where(text, name, key)}: unknown key")
            try:
                values[name][key] = SCHEMA[name][key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{origin}: {_where(text, name, key)}: cannot parse {raw.strip()!r}: {exc}") \
                    from None
    try:
        return _build(values, text)
    except ConfigError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def _check(cond: bool, text, section, key, message):
    if not cond:
        raise ConfigError(f"{_where(text, section, key)}: {message}")


def _build(values: dict, text: str) -> ExperimentConfig:
    run = values.get("run", {})
    experiment = run.get("experiment")
    if experiment is None:
        raise ConfigError("[run] experiment: missing")
    _check(experiment in EXPERIMENTS, text, "run", "experiment",
           f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    for key in ("eval_n", "trials"):
        if key in run:
            _check(run[key] >= 1, text, "run", key, f"{key} must be >= 1")

    a = values.get("adaptation", {})
    _check(a.get("k", 1) >= 1, text, "adaptation", "K", "K must be ≥ 1")
    for key, low in (("batch_size", 2), ("tail_batch", 2), ("tail_repeats", 1), ("n_source", 2)):
        if key in a:
            _check(a[key] >= low, text, "adaptation", key, f"{key} must be >= {low}")
    for key, parse in (("tail_strategy", TailStrategy.parse), ("layer_policy", LayerPolicy.parse)):
        if key in a:
            try:
                a[key] = parse(a[key])
            except ValueError as exc:
                raise ConfigError(f"{_where(text, 'adaptation', key)}: {exc}") from None
    adaptation = AdaptationConfig(**{("K" if k == "k" else k): v for k, v in a.items()})

    n = values.get("network", {})
    for key in ("d", "m", "depth"):
        if key in n:
            _check(n[key] >= 1, text, "network", key, f"{key} must be >= 1")
    try:
        act = Activation.parse(n.get("activation", "leaky_relu"), n.get("slope", 0.1))
    except ValueError as exc:
        raise ConfigError(f"{_where(text, 'network', 'activation')}: {exc}") from None
    network = NetworkConfig(n.get("d", 3), n.get("m", 8), n.get("depth", 1), act, n.get("seed", 0))

    s = values.get("source", {})
    default_dist = "mixture" if experiment == "kde-demo" else "standard-normal"
    dist_name = s.get("distribution", default_dist).lower()
    try:
        if dist_name == "standard-normal":
            dist = StandardNormal()
        elif dist_name == "truncated-normal":
            dist = TruncatedNormal(s.get("lo", -2.0), s.get("hi", 2.0))
        elif dist_name == "uniform":
            dist = UniformInterval(s.get("lo", 0.0), s.get("hi", 1.0))
        elif dist_name == "mixture":
            dist = GaussianMixture(s.get("weights", DEFAULT_MIXTURE.weights), s.get("means", DEFAULT_MIXTURE.means),
                                   s.get("stds", DEFAULT_MIXTURE.stds))
        else:
            raise ConfigError(f"{_where(text, 'source', 'distribution')}: unknown distribution {dist_name!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{_where(text, 'source', 'distribution')}: {exc}") from None
    source = SourceSpec.iid(dist, network.d, s.get("seed", 0))

    c = dict(values.get("corruption", {}))
    kind = c.pop("kind", "cubic").lower()
    try:
        plan = CorruptionPlan(kind, tuple(c.items()))
    except ValueError as exc:
        raise ConfigError(f"{_where(text, 'corruption', 'kind')}: {exc}") from None

    params = values.get("experiment", {})
    for key in ("eval_batches", "seeds", "bound_trials", "repetitions", "bins", "n_max", "reference_n"):
        if key in params:
            _check(params[key] >= 1, text, "experiment", key, f"{key} must be >= 1")
    for key in ("k_values", "batch_sizes", "n_values"):
        if key in params:
            _check(all(v >= 1 for v in params[key]), text, "experiment", key, "values must be >= 1")
    if "batch_sizes" in params:
        _check(all(v >= 2 for v in params["batch_sizes"]), text, "experiment", "batch_sizes",
               "batch sizes must be >= 2")
    if "delta" in params:
        _check(0 < params["delta"] < 1, text, "experiment", "delta", "delta must lie in (0, 1)")
    if "rate_lambda" in params:
        _check(params["rate_lambda"] > 0, text, "experiment", "rate_lambda", "rate_lambda must be > 0")
    if "small_n" in params:
        _check(params["small_n"] >= 2, text, "experiment", "small_n", "small_n must be >= 2")
    if "strategies" in params:
        try:
            params["strategies"] = tuple(TailStrategy.parse(v).value for v in params["strategies"])
        except ValueError as exc:
            raise ConfigError(f"{_where(text, 'experiment', 'strategies')}: {exc}") from None

    return ExperimentConfig(
        experiment=experiment, adaptation=adaptation, network=network, source=source, corruption=plan,
        eval_n=run.get("eval_n", 50_000), trials=run.get("trials", 20),
        output_dir=Path(run.get("output_dir", "aqr-out")), master_seed=run.get("master_seed", 0),
        statistics=Path(run["statistics"]) if "statistics" in run else None, params=params,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config_text(text, str(path))
