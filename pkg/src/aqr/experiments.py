"""Experiment runners behind the CLI subcommands.

Every runner writes CSV reports (the contract) and SVG plots (conveniences)
into the output directory and returns the paths it wrote; ``run_experiment``
then adds ``manifest.json`` with a hash per file.
"""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np
from scipy import stats as sps

from aqr import svg
from aqr.adaptation import (ChannelStats, SourceStatistics, tail_rule_for, adapt_batch, load_statistics,
                            save_statistics, setup_phase, ttn_adapt_batch, ttn_transform)
from aqr.config import ExperimentConfig
from aqr.corruption import SourceSpec, StandardNormal, TruncatedNormal, sample_source
from aqr.net import forward
from aqr.quantile import batch_transform, compute_quantile_profile
from aqr.reports import CsvReport, emit_csv, write_manifest
from aqr.tails import TailStrategy, calibrate_average_sample_tails
from aqr.testbed import HOOK, Testbed, make_testbed, oracle_interceptor, post_activations
from aqr.theory import (bound_dominance, discretization_gap, dkw_epsilon, dkw_exceedance, lemma4_bound,
                        mse_against_reference, rate_sweep, tail_deviation_experiment,
                        truncated_normal_constants, truncated_normal_curvature_sup, TruncatedExponential)

log = logging.getLogger(__name__)

METHODS = ("none", "ttn", "aqr", "oracle")


class ExperimentError(RuntimeError):
    pass


# --- shared pieces -------------------------------------------------------------

def build_testbed(cfg: ExperimentConfig, seed: int) -> Testbed:
    n = cfg.network
    return make_testbed(seed, n.d, n.m, n.activation, n.depth, cfg.corruption)


def draw_inputs(cfg: ExperimentConfig, n: int, seed) -> np.ndarray:
    return sample_source(SourceSpec(cfg.source.distributions, seed), n)


def source_statistics(cfg: ExperimentConfig, tb: Testbed, seed: int, **overrides) -> SourceStatistics:
    acfg = dataclasses.replace(cfg.adaptation, seed=seed, **overrides)
    return setup_phase(tb.net, [draw_inputs(cfg, acfg.n_source, [seed, 6])], acfg)


def oracle_available(cfg: ExperimentConfig, tb: Testbed) -> bool:
    """The closed-form map needs exact normal marginals at a single hooked layer."""
    return (len(tb.net.hook_ids) == 1
            and all(isinstance(d, StandardNormal) for d in cfg.source.distributions))


def evaluate(tb: Testbed, stats: SourceStatistics, x: np.ndarray, batch_size: int, method: str,
             tail_strategy=None):
    """MSE at the deepest hook between corrected and clean post-activations, batch by batch."""
    batches = x.shape[0] // batch_size
    if batches < 1:
        raise ValueError(f"fewer rows than one batch of {batch_size}")
    used = x[:batches * batch_size]
    hook = tb.readout_hook
    act = tb.net.layer(hook).activation
    outs = []
    for b in range(batches):
        xb = used[b * batch_size:(b + 1) * batch_size]
        if method == "aqr":
            caps = adapt_batch(tb.net, stats, xb, shift=tb.shift, tail_strategy=tail_strategy)[1].captures
        elif method == "ttn":
            caps = ttn_adapt_batch(tb.net, stats, xb, shift=tb.shift)[1]
        elif method == "none":
            caps = forward(tb.net, xb, tb.shift)[1]
        elif method == "oracle":
            caps = forward(tb.net, xb, {HOOK: oracle_interceptor(tb)})[1]
        else:
            raise ValueError(f"unknown method {method!r}")
        outs.append(act(next(c for c in caps if c.hook_id == hook).intercepted))
    return mse_against_reference(np.vstack(outs), post_activations(tb, used))


def _csv(out: Path, name: str, header, rows) -> Path:
    return emit_csv(CsvReport(header, list(rows)), out / name)


# --- runners ---------------------------------------------------------------------

def run_setup(cfg: ExperimentConfig, out: Path) -> list[Path]:
    tb = build_testbed(cfg, cfg.network.seed)
    stats = source_statistics(cfg, tb, cfg.master_seed)
    files = [save_statistics(stats, out / "statistics.json")]
    rows = []
    for hook, channels in stats.hooks.items():
        K = stats.K
        for c, ch in enumerate(channels):
            k = ch.profile.knots
            low = ch.calibrated_tails.low if ch.calibrated_tails else float("nan")
            high = ch.calibrated_tails.high if ch.calibrated_tails else float("nan")
            rows.append((hook, c, ch.mean, ch.std, k[0], k[min(1, K)], float(np.median(k)), k[max(K - 1, 0)],
                         k[K], low, high))
    files.append(_csv(out, "channels.csv", ("hook", "channel", "mean", "std", "p_first", "p_second",
                                            "p_median_knot", "p_second_last", "p_last",
                                            "calibrated_low", "calibrated_high"), rows))
    return files


def run_adapt(cfg: ExperimentConfig, out: Path) -> list[Path]:
    tb = build_testbed(cfg, cfg.network.seed)
    stats = load_statistics(cfg.statistics) if cfg.statistics else source_statistics(cfg, tb, cfg.master_seed)
    methods = [m for m in METHODS if m != "oracle" or oracle_available(cfg, tb)]
    totals, per_neuron = [], []
    for b in cfg.param("batch_sizes"):
        x = draw_inputs(cfg, b * cfg.param("eval_batches"), [cfg.master_seed, 7, b])
        for method in methods:
            rep = evaluate(tb, stats, x, b, method)
            totals.append((method, b, rep.n_eval, rep.total))
            per_neuron.extend((method, b, i, v) for i, v in enumerate(rep.per_neuron))
    files = [_csv(out, "adapt.csv", ("method", "batch_size", "n_eval", "total_mse"), totals),
             _csv(out, "adapt_per_neuron.csv", ("method", "batch_size", "neuron", "mse"), per_neuron)]
    series = []
    for method in methods:
        pts = [(b, t) for m, b, _, t in totals if m == method and t > 0]
        if pts:
            series.append((method, [p[0] for p in pts], [p[1] for p in pts]))
    if series:
        files.append(svg.line_plot(series, out / "adapt.svg", "Recovery error by method", "batch size",
                                   "total MSE", logx=True, logy=True))
    return files


def run_theory_rates(cfg: ExperimentConfig, out: Path) -> list[Path]:
    seed = cfg.master_seed
    k_values = cfg.param("k_values") or (8, 16, 32, 64, 128)
    n_values = cfg.param("n_values")
    n_max = cfg.param("n_max")
    dist = TruncatedExponential(cfg.param("rate_lambda"))
    g = cfg.corruption.draw(np.random.default_rng([seed, 3]), 1)[0]
    k_top = max(k_values)

    sweeps = [
        rate_sweep(dist, g, "K", k_values, dict(K=k_top, n_source=n_max, n_target=n_max), cfg.trials,
                   cfg.eval_n, seed),
        rate_sweep(dist, g, "n_source", n_values, dict(K=k_top, n_source=n_max, n_target=n_max), cfg.trials,
                   cfg.eval_n, seed),
        rate_sweep(dist, g, "n_target", n_values, dict(K=k_top, n_source=n_max, n_target=n_max), cfg.trials,
                   cfg.eval_n, seed),
    ]
    files = [
        _csv(out, "rates.csv", ("sweep", "x", "mse"),
             [(s.name, x, y) for s in sweeps for x, y in zip(s.xs, s.mse)]),
        _csv(out, "rate_fits.csv", ("sweep", "slope", "intercept", "r_squared", "points"),
             [(s.name, s.fit.slope, s.fit.intercept, s.fit.r_squared, len(s.xs)) for s in sweeps]),
    ]
    for s in sweeps:
        files.append(svg.line_plot([(f"measured (slope {s.fit.slope:.2f})", s.xs, s.mse)],
                                   out / f"rate_{s.name}.svg", f"MSE against {s.name}", s.name, "MSE",
                                   logx=True, logy=True))

    tn = TruncatedNormal()
    consts = truncated_normal_constants()
    delta = cfg.param("delta")
    bound_rows = []
    for K, n in ((16, 2000), (64, 20000)):
        mses, bound = bound_dominance(tn, consts, K, n, n, delta, cfg.param("bound_trials"), cfg.eval_n, seed)
        bound_rows.append((K, n, n, delta, bound, mses.size, float(np.mean(mses <= bound)), float(mses.max())))
    files.append(_csv(out, "bound_dominance.csv", ("K", "n_source", "n_target", "delta", "bound", "trials",
                                                    "fraction_within", "max_mse"), bound_rows))

    exact_sup = truncated_normal_curvature_sup()
    lemma_rows = [("truncated-normal", K, discretization_gap(tn.ppf, K, 200 * K), lemma4_bound(exact_sup, K),
                   lemma4_bound(consts.quantile_curvature_bound, K)) for K in k_values]
    lemma_rows.append(("u-squared", 2, discretization_gap(lambda u: np.asarray(u) ** 2, 2, 20),
                       lemma4_bound(2.0, 2), lemma4_bound(2.0, 2)))
    files.append(_csv(out, "discretization.csv", ("quantile", "K", "gap", "bound_exact_curvature",
                                                  "bound_from_constants"), lemma_rows))

    dkw_n, dkw_delta, dkw_trials = 5000, 0.05, 400
    dev = dkw_exceedance(StandardNormal(), dkw_n, dkw_delta, dkw_trials, seed)
    eps = dkw_epsilon(dkw_n, dkw_delta)
    files.append(_csv(out, "dkw.csv", ("n", "delta", "epsilon", "trials", "exceed_fraction", "max_deviation"),
                      [(dkw_n, dkw_delta, eps, dkw_trials, float(np.mean(dev > eps)), float(dev.max()))]))
    return files


def run_tail_ablation(cfg: ExperimentConfig, out: Path) -> list[Path]:
    strategies = [TailStrategy.parse(s) for s in cfg.param("strategies")]
    batch_sizes = cfg.param("batch_sizes")
    runs = []
    for i in range(cfg.param("seeds")):
        seed = cfg.master_seed + i
        tb = build_testbed(cfg, seed)
        # calibrated tails are always recorded so every strategy can run on the same statistics
        stats = source_statistics(cfg, tb, seed, tail_strategy=TailStrategy.AVERAGE_SAMPLE_TAILS)
        for b in batch_sizes:
            x = draw_inputs(cfg, b * cfg.param("eval_batches"), [seed, 7, b])
            for s in strategies:
                runs.append((seed, s.value, b, evaluate(tb, stats, x, b, "aqr", s).total))
    summary = []
    for b in batch_sizes:
        for s in strategies:
            vals = np.array([r[3] for r in runs if r[1] == s.value and r[2] == b])
            summary.append((s.value, b, float(vals.mean()), float(vals.std()), vals.size))
    files = [_csv(out, "tail_ablation_runs.csv", ("seed", "strategy", "batch_size", "total_mse"), runs),
             _csv(out, "tail_ablation.csv", ("strategy", "batch_size", "mean_mse", "std_mse", "seeds"), summary)]
    b0 = batch_sizes[0]
    files.append(svg.box_plot([(s.value, [r[3] for r in runs if r[1] == s.value and r[2] == b0])
                               for s in strategies],
                              out / "tail_ablation.svg", f"Tail strategies, batch {b0}", "total MSE"))
    return files


def run_granularity(cfg: ExperimentConfig, out: Path) -> list[Path]:
    k_values = cfg.param("k_values") or (10, 100)
    batch_sizes = cfg.param("batch_sizes")
    runs = []
    for i in range(cfg.param("seeds")):
        seed = cfg.master_seed + i
        tb = build_testbed(cfg, seed)
        for K in k_values:
            stats = source_statistics(cfg, tb, seed, K=K)
            for b in batch_sizes:
                x = draw_inputs(cfg, b * cfg.param("eval_batches"), [seed, 8, b])
                runs.append((seed, K, b, evaluate(tb, stats, x, b, "aqr").total))
    summary = []
    for b in batch_sizes:
        for K in k_values:
            vals = np.array([r[3] for r in runs if r[1] == K and r[2] == b])
            summary.append((K, b, float(vals.mean()), float(vals.std()), vals.size))
    files = [_csv(out, "granularity_runs.csv", ("seed", "K", "batch_size", "total_mse"), runs),
             _csv(out, "granularity.csv", ("K", "batch_size", "mean_mse", "std_mse", "seeds"), summary)]
    series = [(f"batch {b}", list(k_values), [r[2] for r in summary if r[1] == b]) for b in batch_sizes]
    files.append(svg.line_plot(series, out / "granularity.svg", "Granularity", "K", "mean total MSE",
                               logx=True, logy=True))
    return files


def run_tail_deviation(cfg: ExperimentConfig, out: Path) -> list[Path]:
    dist = cfg.source.distributions[0]
    K = cfg.adaptation.K
    ref_n, small_n = cfg.param("reference_n"), cfg.param("small_n")
    summary, first = [], None
    for r in range(cfg.param("repetitions")):
        dev = tail_deviation_experiment(ref_n, small_n, cfg.trials, dist, K, cfg.master_seed + r)
        if first is None:
            first = dev
        summary.extend((r, j, float(dev[j].mean()), float(np.abs(dev[j]).mean())) for j in range(K + 1))
    files = [
        _csv(out, "tail_deviation.csv", ("repetition", "level", "mean_deviation", "mean_abs_deviation"), summary),
        _csv(out, "tail_deviation_trials.csv", ("level", "trial", "deviation"),
             [(j, t, first[j, t]) for j in range(K + 1) for t in range(first.shape[1])]),
    ]
    levels = sorted({0, min(1, K), K // 2, max(K - 1, 0), K})
    files.append(svg.box_plot([(f"{j}/{K}", first[j]) for j in levels], out / "tail_deviation.svg",
                              f"Batch of {small_n} minus reference of {ref_n}", "knot deviation"))
    return files


def _moments(x: np.ndarray):
    return float(x.mean()), float(x.std()), float(sps.skew(x)), float(sps.kurtosis(x))


def run_kde_demo(cfg: ExperimentConfig, out: Path) -> list[Path]:
    seed = cfg.master_seed
    dist = cfg.source.distributions[0]
    acfg = cfg.adaptation
    g = cfg.corruption.draw(np.random.default_rng([seed, 3]), 1)[0]
    src = dist.sample(np.random.default_rng([seed, 0]), acfg.n_source)
    clean = dist.sample(np.random.default_rng([seed, 1]), cfg.eval_n)
    shifted = np.asarray(g(clean))

    tails = None
    if acfg.tail_strategy is TailStrategy.AVERAGE_SAMPLE_TAILS:
        tails = calibrate_average_sample_tails(src, acfg.tail_batch, acfg.tail_repeats, rng_seed=[seed, 2])
    ch = ChannelStats(compute_quantile_profile(src, acfg.K), float(src.mean()), float(src.std()), tails)
    b = acfg.batch_size
    n_used = (cfg.eval_n // b) * b
    if n_used == 0:
        raise ValueError(f"eval_n is smaller than one batch of {b}")
    aqr, ttn = np.empty(n_used), np.empty(n_used)
    for start in range(0, n_used, b):
        col = shifted[start:start + b]
        target = compute_quantile_profile(col, acfg.K)
        aqr[start:start + b] = batch_transform(col, target, ch.profile, tail_rule_for(acfg.tail_strategy, ch, col))
        ttn[start:start + b] = ttn_transform(col, ch.mean, ch.std, col.mean(), col.std())

    named = (("source", src), ("corrupted", shifted[:n_used]), ("ttn", ttn), ("aqr", aqr))
    files = [_csv(out, "kde_moments.csv", ("distribution", "mean", "std", "skewness", "excess_kurtosis"),
                  [(name, *_moments(v)) for name, v in named])]
    lo = min(float(np.quantile(v, 0.001)) for _, v in named)
    hi = max(float(np.quantile(v, 0.999)) for _, v in named)
    edges = np.linspace(lo, hi, cfg.param("bins") + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = {name: np.histogram(v, bins=edges, density=True)[0] for name, v in named}
    files.append(_csv(out, "kde_density.csv", ("x", *dens), [(c, *(dens[k][i] for k in dens))
                                                               for i, c in enumerate(centers)]))
    files.append(svg.line_plot([(k, centers, v) for k, v in dens.items()], out / "kde_demo.svg",
                               "Channel distributions", "activation", "density"))
    return files


RUNNERS = {
    "setup": run_setup,
    "adapt": run_adapt,
    "theory-rates": run_theory_rates,
    "tail-ablation": run_tail_ablation,
    "tail-deviation": run_tail_deviation,
    "kde-demo": run_kde_demo,
    "granularity": run_granularity,
}


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Run ``cfg.experiment`` and return every written file, manifest last."""
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExperimentError(f"{cfg.experiment}: cannot create output directory {out}: {exc.strerror}") from exc
    try:
        files = RUNNERS[cfg.experiment](cfg, out)
    except (ValueError, KeyError, OSError, ArithmeticError) as exc:
        raise ExperimentError(f"{cfg.experiment}: {exc}") from exc
    manifest = write_manifest(out, files, {"experiment": cfg.experiment, "master_seed": cfg.master_seed})
    return [*files, manifest]
