"""Command-line harness: data simulation, single-algorithm runs, and named
experiments that write tidy CSV summaries plus rendered figures.

Config files are flat ``section.key = value`` text.  Every output CSV starts
with comment lines recording the config hash, the seed and the library
version; identical config and seed reproduce identical bytes (the run
summary's wall-clock field is the one documented exception).

Exit codes: 0 success, 2 config error, 3 runtime or filter-collapse error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .core import RngStream
from .diagnostics import (
    ChainTrace,
    hamming,
    lag1_acf,
    max_run_length,
    save_chain_trace,
    state_mse,
    update_rate_per_time,
)
from .exact_hmm import path_log_joint
from .models import (
    SVParams,
    SVPrior,
    dna_params,
    hmm_simulate,
    load_dna_series,
    load_sv_series,
    save_dna_series,
    save_sv_series,
    sv_initial_logdensity,
    sv_obs_logdensity,
    sv_simulate,
    sv_transition_logdensity,
    SVModel,
)
from .param_updates import sv_sample_beta2, sv_sample_mu_centered
from .pmcmc import (
    SV_PRESET,
    RWProposal,
    particle_gibbs,
    pilot_covariance,
    pmmh,
    sv_gibbs_theta_update,
    sv_natural_from_transformed,
    sv_param_map,
    sv_params_from_transformed,
    sv_transformed_from_natural,
    sv_transformed_log_prior,
)
from .smc import FilterCollapse, estimate_loglik_variance
from .state_updates import block_schedule, sv_block_sweep, sv_single_site_sweep, hmm_single_site_sweep

EXPERIMENT_NAMES = (
    "fig-hmm-acf",
    "fig-sv-acf",
    "fig-block-acceptance",
    "table-parameterisation",
    "pmmh-demo",
    "pgibbs-demo",
)

_KEY_RE = re.compile(r"[a-z0-9_]+\.[a-z0-9_]+")
_MISSING = object()


class ConfigError(ValueError):
    """Invalid configuration or command usage; maps to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Ordered flat key-value configuration.

    Keys are ``section.key``; values stay strings so the file round-trips
    losslessly.  Typed getters parse on access and raise ConfigError with
    the offending key in the message.
    """

    entries: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for key, value in self.entries:
            if not _KEY_RE.fullmatch(key):
                raise ConfigError(f"bad config key: {key!r}")
            if key in seen:
                raise ConfigError(f"duplicate config key: {key}")
            if not isinstance(value, str):
                raise ConfigError(f"config value for {key} must be a string")
            seen.add(key)

    def get(self, key, default=_MISSING) -> str:
        for k, v in self.entries:
            if k == key:
                return v
        if default is _MISSING:
            raise ConfigError(f"missing config key: {key}")
        return default

    def _typed(self, key, default, convert, kind):
        raw = self.get(key, None)
        if raw is None:
            if default is _MISSING:
                raise ConfigError(f"missing config key: {key}")
            return default
        try:
            return convert(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key} is not a valid {kind}: {raw!r}") from None

    def get_int(self, key, default=_MISSING) -> int:
        return self._typed(key, default, int, "integer")

    def get_float(self, key, default=_MISSING) -> float:
        return self._typed(key, default, float, "number")

    def get_bool(self, key, default=_MISSING) -> bool:
        def convert(raw):
            low = raw.strip().lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)

        return self._typed(key, default, convert, "boolean")

    def get_floats(self, key, default=_MISSING) -> tuple[float, ...]:
        def convert(raw):
            return tuple(float(part) for part in raw.split(",") if part.strip())

        return self._typed(key, default, convert, "number list")

    def get_ints(self, key, default=_MISSING) -> tuple[int, ...]:
        def convert(raw):
            return tuple(int(part) for part in raw.split(",") if part.strip())

        return self._typed(key, default, convert, "integer list")

    def with_entry(self, key, value) -> "ExperimentConfig":
        value = str(value)
        kept = tuple((k, value if k == key else v) for k, v in self.entries)
        if not any(k == key for k, _ in self.entries):
            kept = kept + ((key, value),)
        return ExperimentConfig(kept)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.entries)

    def to_json(self) -> str:
        nested: dict[str, dict[str, str]] = {}
        for key, value in self.entries:
            section, _, name = key.partition(".")
            nested.setdefault(section, {})[name] = value
        return json.dumps(nested, indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canonical = "\n".join(f"{k}={v}" for k, v in sorted(self.entries))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``section.key = value`` lines; blank lines and # comments skip."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno} is not 'section.key = value'")
        key, _, value = stripped.partition("=")
        entries.append((key.strip(), value.strip()))
    return ExperimentConfig(tuple(entries))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None


def make_config(mapping) -> ExperimentConfig:
    """Build a config from a plain dict; values are stringified."""
    return ExperimentConfig(tuple((k, str(v)) for k, v in mapping.items()))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _header_lines(cfg: ExperimentConfig, seed: int) -> tuple[str, ...]:
    return (
        f"config: {cfg.hash()}",
        f"seed: {seed}",
        f"version: {__version__}",
    )


def _write_csv(path, cfg, seed, columns, rows) -> None:
    lines = [f"# {text}" for text in _header_lines(cfg, seed)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_config_json(out_dir, cfg, seed) -> str:
    payload = json.loads(cfg.to_json())
    doc = {
        "config": payload,
        "config_hash": cfg.hash(),
        "seed": seed,
        "version": __version__,
    }
    path = os.path.join(out_dir, "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _savefig(fig, path) -> None:
    fig.savefig(path, dpi=150, metadata={"Software": "ssmcmc"})
    plt.close(fig)


def _map_jobs(fn, jobs, threads):
    """Run jobs and return results in submission order.

    With more than one worker the jobs fan out over a process pool; the
    aggregation order never depends on completion order.
    """
    if threads <= 1:
        return [fn(job) for job in jobs]
    results = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, job) for job in jobs]
        for k, fut in enumerate(futures):
            results[k] = fut.result()
    return results


def _safe_lag1(series) -> float:
    try:
        return lag1_acf(series)
    except ValueError:
        return float("nan")


def _sv_params_from_config(cfg) -> SVParams:
    return SVParams(
        beta=cfg.get_float("sv.beta", SV_PRESET.truth.beta),
        phi=cfg.get_float("sv.phi", SV_PRESET.truth.phi),
        sigma=cfg.get_float("sv.sigma", SV_PRESET.truth.sigma),
    )


def _sv_prior_from_config(cfg) -> SVPrior:
    return SVPrior(
        a=cfg.get_float("prior.a", 1.0),
        b=cfg.get_float("prior.b", 1.0),
        s0=cfg.get_float("prior.s0", 0.2),
        p=cfg.get_float("prior.p", 5.0),
    )


def _sv_log_joint(params: SVParams, x, y) -> float:
    x = np.asarray(x, dtype=float)
    total = float(sv_initial_logdensity(x[0], params))
    total += float(np.sum(sv_transition_logdensity(x[:-1], x[1:], params)))
    total += float(np.sum(sv_obs_logdensity(x, np.asarray(y, float), params)))
    return total


def cmd_simulate(cfg: ExperimentConfig, seed: int, out_dir: str) -> list[str]:
    kind = cfg.get("model.kind", "sv")
    gen = RngStream(seed).child(0).generator()
    written = []
    if kind == "sv":
        n = cfg.get_int("model.n", SV_PRESET.n_obs)
        if n < 2:
            raise ConfigError("model.n must be at least 2")
        params = _sv_params_from_config(cfg)
        x, y = sv_simulate(params, n, gen)
        path = os.path.join(out_dir, "sv_data.csv")
        save_sv_series(path, x, y, header_lines=_header_lines(cfg, seed))
        written.append(path)
    elif kind == "hmm":
        n = cfg.get_int("model.n", 200)
        if n < 2:
            raise ConfigError("model.n must be at least 2")
        hmm = dna_params(cfg.get_float("hmm.alpha", 0.11), cfg.get_float("hmm.beta", 0.11))
        states, symbols = hmm_simulate(hmm, n, gen)
        path = os.path.join(out_dir, "hmm_data.csv")
        save_dna_series(path, states, symbols, header_lines=_header_lines(cfg, seed))
        written.append(path)
    else:
        raise ConfigError(f"unknown model.kind: {kind!r} (expected sv or hmm)")
    written.append(_write_config_json(out_dir, cfg, seed))
    return written


def _load_run_data(cfg):
    data_path = cfg.get("run.data")
    if not os.path.exists(data_path):
        raise ConfigError(f"data file not found: {data_path}")
    kind = cfg.get("model.kind", "sv")
    if kind == "sv":
        return kind, load_sv_series(data_path)
    if kind == "hmm":
        return kind, load_dna_series(data_path)
    raise ConfigError(f"unknown model.kind: {kind!r} (expected sv or hmm)")


def _run_state_chain(cfg, seed, kind, data):
    """State-only samplers: single-site or block sweeps at fixed parameters.

    Records a per-iteration summary statistic against the stored true path
    (Hamming distance for the HMM, mean squared error for SV) plus the log
    joint density of the sampled path.
    """
    algorithm = cfg.get("run.algorithm")
    iterations = cfg.get_int("run.iterations", 1000)
    if iterations < 1:
        raise ConfigError("run.iterations must be positive")
    stream = RngStream(seed)
    gen = stream.child(1).generator()
    n_accept = 0
    n_moves = 0
    if algorithm == "hmm-gibbs":
        if kind != "hmm":
            raise ConfigError("hmm-gibbs needs model.kind = hmm")
        states, y = data
        hmm = dna_params(cfg.get_float("hmm.alpha", 0.11), cfg.get_float("hmm.beta", 0.11))
        x = hmm_simulate(hmm, len(y), stream.child(0).generator())[0]
        stats = np.empty(iterations)
        log_post = np.empty(iterations)
        paths = np.empty((iterations, len(y)))
        for i in range(iterations):
            x = hmm_single_site_sweep(x, y, hmm, gen)
            stats[i] = hamming(x, states)
            log_post[i] = path_log_joint(hmm, y, x)
            paths[i] = x
        accepted = np.ones(iterations, dtype=np.int64)
        name = "hamming"
        acc_rate = 1.0
    else:
        if kind != "sv":
            raise ConfigError(f"{algorithm} needs model.kind = sv")
        x_true, y = data
        params = _sv_params_from_config(cfg)
        # Single-site chains start from a prior draw; block chains start at
        # the prior mean, where the Gaussian proposal expansion is reliable
        # (a far-tail start can leave the independence-style block proposal
        # rejecting indefinitely).
        if algorithm == "sv-block":
            x = np.zeros(len(y))
        else:
            x = sv_simulate(params, len(y), stream.child(0).generator())[0]
        stats = np.empty(iterations)
        log_post = np.empty(iterations)
        paths = np.empty((iterations, len(y)))
        accepted = np.zeros(iterations, dtype=np.int64)
        if algorithm == "sv-single-site":
            for i in range(iterations):
                x, acc = sv_single_site_sweep(x, y, params, gen)
                n_accept += acc
                n_moves += len(y)
                accepted[i] = 1 if acc else 0
                stats[i] = state_mse(x, x_true)
                log_post[i] = _sv_log_joint(params, x, y)
                paths[i] = x
        elif algorithm == "sv-block":
            size = cfg.get_int("run.block_size", 50)
            scheme = cfg.get("run.block_scheme", "fixed")
            refine = cfg.get_int("run.refine_iters", 2)
            for i in range(iterations):
                schedule = block_schedule(len(y), scheme, size,
                                          gen if scheme == "random" else None)
                x, flags = sv_block_sweep(x, y, params, schedule, gen, refine)
                n_accept += sum(flags)
                n_moves += len(flags)
                accepted[i] = 1 if any(flags) else 0
                stats[i] = state_mse(x, x_true)
                log_post[i] = _sv_log_joint(params, x, y)
                paths[i] = x
        else:
            raise ConfigError(f"unknown run.algorithm: {algorithm!r}")
        name = "state_mse"
        acc_rate = n_accept / n_moves if n_moves else 1.0
    burn = cfg.get_int("run.burn_in", iterations // 10)
    trace = ChainTrace(
        theta_names=(name,),
        thetas=stats.reshape(-1, 1),
        log_post=log_post,
        accepted=accepted,
        paths=paths,
        seed=seed,
        config_hash=cfg.hash(),
        burn_in=burn,
    )
    return trace, acc_rate


def _run_pmcmc_chain(cfg, seed, kind, data):
    if kind != "sv":
        raise ConfigError("particle MCMC runs need model.kind = sv")
    algorithm = cfg.get("run.algorithm")
    _, y = data
    iterations = cfg.get_int("run.iterations", 1000)
    if iterations < 1:
        raise ConfigError("run.iterations must be positive")
    m = cfg.get_int("run.particles", 100)
    prior = _sv_prior_from_config(cfg)
    truth = _sv_params_from_config(cfg)
    stream = RngStream(seed)
    burn = cfg.get_int("run.burn_in", iterations // 10)
    names = ("beta", "phi", "sigma")
    if algorithm == "pmmh":
        lam = cfg.get_float("run.rw_scale", SV_PRESET.rw_scale)
        pilot_iters = cfg.get_int("run.pilot_iterations", 500)
        psi0 = sv_transformed_from_natural(
            np.array([truth.beta, truth.phi, truth.sigma]))
        log_prior = lambda psi: sv_transformed_log_prior(psi, prior)
        v_hat = np.diag([0.1, 1.0, 0.1])
        if pilot_iters > 0:
            pilot = pmmh(log_prior, RWProposal(lam, v_hat), SVModel(), y, m,
                         pilot_iters, psi0, stream.child(4),
                         param_map=sv_params_from_transformed)
            v_hat = pilot_covariance(pilot.thetas[pilot.burn_in:])
        trace = pmmh(log_prior, RWProposal(lam, v_hat), SVModel(), y, m,
                     iterations, psi0, stream.child(5),
                     param_map=sv_params_from_transformed, theta_names=names,
                     record_transform=sv_natural_from_transformed, burn_in=burn)
    elif algorithm == "particle-gibbs":
        path0 = sv_simulate(truth, len(y), stream.child(0).generator())[0]
        trace = particle_gibbs(
            SVModel(), y, m, iterations,
            (np.array([truth.beta, truth.phi, truth.sigma]), path0),
            stream.child(5),
            ancestor_sampling=cfg.get_bool("run.ancestor_sampling", False),
            theta_update=sv_gibbs_theta_update(prior), param_map=sv_param_map,
            theta_names=names, burn_in=burn)
    else:
        raise ConfigError(f"unknown run.algorithm: {algorithm!r}")
    trace = replace(trace, seed=seed, config_hash=cfg.hash())
    return trace, float(trace.accepted.mean())


def cmd_run(cfg: ExperimentConfig, seed: int, out_dir: str) -> list[str]:
    algorithm = cfg.get("run.algorithm")
    kind, data = _load_run_data(cfg)
    started = time.perf_counter()
    if algorithm in ("hmm-gibbs", "sv-single-site", "sv-block"):
        trace, acc_rate = _run_state_chain(cfg, seed, kind, data)
    elif algorithm in ("pmmh", "particle-gibbs"):
        trace, acc_rate = _run_pmcmc_chain(cfg, seed, kind, data)
    else:
        raise ConfigError(f"unknown run.algorithm: {algorithm!r}")
    runtime = time.perf_counter() - started

    trace_path = os.path.join(out_dir, "trace.csv")
    save_chain_trace(trace_path, trace,
                     path_stride=cfg.get_int("run.path_stride", 50))
    rows = [("algorithm", algorithm), ("iterations", len(trace)),
            ("acceptance_rate", acc_rate)]
    for name in trace.theta_names:
        rows.append((f"lag1_acf_{name}", _safe_lag1(trace.retained(name))))
    rows.append(("runtime_seconds", round(runtime, 3)))
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, cfg, seed, ("key", "value"), rows)
    return [trace_path, summary_path, _write_config_json(out_dir, cfg, seed)]


def _job_hmm_acf(args):
    seed, g, rep, alpha, beta_sep, n, iterations, burn_in = args
    stream = RngStream(seed).child(g, rep)
    hmm = dna_params(alpha, beta_sep)
    states, y = hmm_simulate(hmm, n, stream.child(0).generator())
    gen = stream.child(1).generator()
    x = hmm_simulate(hmm, n, gen)[0]
    series = np.empty(iterations)
    for i in range(iterations):
        x = hmm_single_site_sweep(x, y, hmm, gen)
        series[i] = hamming(x, states)
    return _safe_lag1(series[burn_in:])


def experiment_fig_hmm_acf(cfg, seed, threads):
    """Lag-1 autocorrelation of the Hamming distance to the true states for
    a single-site HMM Gibbs sampler over an (alpha, beta, n) grid."""
    default_alphas = tuple(round(float(v), 4) for v in np.linspace(0.02, 0.5, 10))
    alphas = cfg.get_floats("fig_hmm_acf.alpha_grid", default_alphas)
    betas = cfg.get_floats("fig_hmm_acf.beta_grid", (0.02, 0.065, 0.11, 0.155, 0.2))
    n_grid = cfg.get_ints("fig_hmm_acf.n_grid", (200, 500))
    iterations = cfg.get_int("fig_hmm_acf.iterations", 400)
    burn_in = cfg.get_int("fig_hmm_acf.burn_in", 100)
    reps = cfg.get_int("fig_hmm_acf.seed_count", 3)
    jobs = []
    coords = []
    g = 0
    for n in n_grid:
        for beta in betas:
            for alpha in alphas:
                for rep in range(reps):
                    jobs.append((seed, g, rep, alpha, beta, n, iterations, burn_in))
                    coords.append((n, beta, alpha, rep))
                g += 1
    values = _map_jobs(_job_hmm_acf, jobs, threads)
    rows = [coord + (val,) for coord, val in zip(coords, values)]
    return ("n", "beta", "alpha", "replicate", "lag1_acf"), rows


def _plot_hmm_acf(columns, rows, path):
    data = {}
    for n, beta, alpha, rep, val in rows:
        data.setdefault((n, beta), {}).setdefault(alpha, []).append(val)
    n_values = sorted({n for n, _ in data})
    fig, axes = plt.subplots(1, len(n_values), figsize=(5 * len(n_values), 4),
                             squeeze=False, sharey=True)
    for ax, n in zip(axes[0], n_values):
        for beta in sorted({b for m, b in data if m == n}):
            series = data[(n, beta)]
            alphas = sorted(series)
            med = [float(np.nanmedian(series[a])) for a in alphas]
            ax.plot(alphas, med, marker="o", label=f"beta={beta:g}")
        ax.set_title(f"n={n}")
        ax.set_xlabel("alpha")
        ax.set_ylabel("lag-1 ACF of Hamming distance")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, path)


def _job_sv_acf(args):
    seed, g, rep, phi, tau2, n, iterations, burn_in = args
    stream = RngStream(seed).child(g, rep)
    sigma = math.sqrt(tau2 * (1.0 - phi * phi))
    params = SVParams(beta=1.0, phi=phi, sigma=sigma)
    states, y = sv_simulate(params, n, stream.child(0).generator())
    gen = stream.child(1).generator()
    x = sv_simulate(params, n, gen)[0]
    series = np.empty(iterations)
    accepted = 0
    for i in range(iterations):
        x, acc = sv_single_site_sweep(x, y, params, gen)
        accepted += acc
        series[i] = state_mse(x, states)
    return _safe_lag1(series[burn_in:]), accepted / (iterations * n)


def experiment_fig_sv_acf(cfg, seed, threads):
    """Lag-1 autocorrelation of the state mean squared error for single-site
    volatility updates over a (phi, tau squared, n) grid."""
    phis = cfg.get_floats("fig_sv_acf.phi_grid", (0.5, 0.7, 0.8, 0.9, 0.95, 0.99))
    tau2s = cfg.get_floats("fig_sv_acf.tau2_grid", (0.5, 1.0, 2.0))
    n_grid = cfg.get_ints("fig_sv_acf.n_grid", (200, 500))
    iterations = cfg.get_int("fig_sv_acf.iterations", 400)
    burn_in = cfg.get_int("fig_sv_acf.burn_in", 100)
    reps = cfg.get_int("fig_sv_acf.seed_count", 3)
    jobs = []
    coords = []
    g = 0
    for n in n_grid:
        for tau2 in tau2s:
            for phi in phis:
                for rep in range(reps):
                    jobs.append((seed, g, rep, phi, tau2, n, iterations, burn_in))
                    coords.append((n, tau2, phi, rep))
                g += 1
    values = _map_jobs(_job_sv_acf, jobs, threads)
    rows = [coord + val for coord, val in zip(coords, values)]
    return ("n", "tau2", "phi", "replicate", "lag1_acf", "acceptance"), rows


def _plot_sv_acf(columns, rows, path):
    data = {}
    for n, tau2, phi, rep, val, _acc in rows:
        data.setdefault((n, tau2), {}).setdefault(phi, []).append(val)
    n_values = sorted({n for n, _ in data})
    fig, axes = plt.subplots(1, len(n_values), figsize=(5 * len(n_values), 4),
                             squeeze=False, sharey=True)
    for ax, n in zip(axes[0], n_values):
        for tau2 in sorted({t for m, t in data if m == n}):
            series = data[(n, tau2)]
            phis = sorted(series)
            med = [float(np.nanmedian(series[p])) for p in phis]
            ax.plot(phis, med, marker="o", label=f"tau2={tau2:g}")
        ax.set_title(f"n={n}")
        ax.set_xlabel("phi")
        ax.set_ylabel("lag-1 ACF of state MSE")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, path)


def _job_block_acceptance(args):
    seed, g, rep, phi, size, n, tau2, iterations, burn_in, refine = args
    stream = RngStream(seed).child(g, rep)
    sigma = math.sqrt(tau2 * (1.0 - phi * phi))
    params = SVParams(beta=1.0, phi=phi, sigma=sigma)
    _, y = sv_simulate(params, n, stream.child(0).generator())
    gen = stream.child(1).generator()
    x = np.zeros(n)
    flags = []
    for i in range(iterations):
        schedule = block_schedule(n, "fixed", size)
        x, acc = sv_block_sweep(x, y, params, schedule, gen, refine)
        if i >= burn_in:
            flags.extend(acc)
    return float(np.mean(flags))


def experiment_fig_block_acceptance(cfg, seed, threads):
    """Average block-update acceptance rate per data set over a grid of
    block sizes and phi values at fixed marginal state variance."""
    phis = cfg.get_floats("fig_block_acceptance.phi_grid", (0.8, 0.9, 0.99))
    sizes = cfg.get_ints("fig_block_acceptance.block_sizes", (25, 50, 100, 200, 400))
    n = cfg.get_int("fig_block_acceptance.n", 400)
    tau2 = cfg.get_float("fig_block_acceptance.tau2", 0.2)
    datasets = cfg.get_int("fig_block_acceptance.datasets", 20)
    iterations = cfg.get_int("fig_block_acceptance.iterations", 30)
    burn_in = cfg.get_int("fig_block_acceptance.burn_in", 5)
    refine = cfg.get_int("fig_block_acceptance.refine_iters", 2)
    if any(s > n for s in sizes):
        raise ConfigError("fig_block_acceptance.block_sizes must not exceed n")
    jobs = []
    coords = []
    g = 0
    for phi in phis:
        for size in sizes:
            for rep in range(datasets):
                jobs.append((seed, g, rep, phi, size, n, tau2, iterations, burn_in, refine))
                coords.append((phi, size, rep))
            g += 1
    values = _map_jobs(_job_block_acceptance, jobs, threads)
    rows = [coord + (val,) for coord, val in zip(coords, values)]
    return ("phi", "block_size", "dataset", "acceptance"), rows


def _plot_block_acceptance(columns, rows, path):
    data = {}
    for phi, size, rep, val in rows:
        data.setdefault(phi, {}).setdefault(size, []).append(val)
    phis = sorted(data)
    fig, axes = plt.subplots(1, len(phis), figsize=(4 * len(phis), 4),
                             squeeze=False, sharey=True)
    for ax, phi in zip(axes[0], phis):
        sizes = sorted(data[phi])
        for size in sizes:
            vals = data[phi][size]
            ax.plot([size] * len(vals), vals, "k.", markersize=3)
        means = [float(np.mean(data[phi][s])) for s in sizes]
        ax.plot(sizes, means, "r-", linewidth=1.5)
        ax.set_yscale("log")
        ax.set_title(f"phi={phi:g}")
        ax.set_xlabel("block size")
        ax.set_ylabel("acceptance rate")
    fig.tight_layout()
    _savefig(fig, path)


def _job_parameterisation(args):
    seed, g, rep, phi, sigma, n, iterations, burn_in, refine, centered = args
    stream = RngStream(seed).child(g, rep)
    truth = SVParams(beta=1.0, phi=phi, sigma=sigma)
    _, y = sv_simulate(truth, n, stream.child(0).generator())
    gen = stream.child(1).generator()
    x = np.zeros(n)
    betas = np.empty(iterations)
    schedule = block_schedule(n, "fixed", n)
    if centered:
        mu = 0.0
        xc = x + mu
        for i in range(iterations):
            params = SVParams(beta=math.exp(mu / 2.0), phi=phi, sigma=sigma)
            x, _ = sv_block_sweep(xc - mu, y, params, schedule, gen, refine)
            xc = x + mu
            mu = sv_sample_mu_centered(xc, phi, sigma, gen)
            betas[i] = math.exp(mu / 2.0)
    else:
        beta = 1.0
        for i in range(iterations):
            params = SVParams(beta=beta, phi=phi, sigma=sigma)
            x, _ = sv_block_sweep(x, y, params, schedule, gen, refine)
            beta = math.sqrt(sv_sample_beta2(x, y, gen))
            betas[i] = beta
    return _safe_lag1(betas[burn_in:])


def experiment_table_parameterisation(cfg, seed, threads):
    """Lag-1 autocorrelation of the beta chain under the centered and
    non-centered parameterisations, over a phi grid at small sigma."""
    phis = cfg.get_floats("table_parameterisation.phi_grid", (0.8, 0.9, 0.95, 0.975, 0.99))
    sigma = cfg.get_float("table_parameterisation.sigma", 0.05)
    n = cfg.get_int("table_parameterisation.n", 200)
    iterations = cfg.get_int("table_parameterisation.iterations", 2000)
    burn_in = cfg.get_int("table_parameterisation.burn_in", 200)
    refine = cfg.get_int("table_parameterisation.refine_iters", 2)
    reps = cfg.get_int("table_parameterisation.seed_count", 3)
    jobs = []
    coords = []
    g = 0
    for centered in (False, True):
        for phi in phis:
            for rep in range(reps):
                jobs.append((seed, g, rep, phi, sigma, n, iterations, burn_in,
                             refine, centered))
                coords.append(("centered" if centered else "noncentered", phi, rep))
            g += 1
    values = _map_jobs(_job_parameterisation, jobs, threads)
    rows = [coord + (val,) for coord, val in zip(coords, values)]
    return ("parameterisation", "phi", "replicate", "lag1_acf"), rows


def _parameterisation_table(rows):
    data = {}
    for name, phi, rep, val in rows:
        data.setdefault(phi, {}).setdefault(name, []).append(val)
    table = []
    for phi in sorted(data):
        nc = float(np.nanmedian(data[phi].get("noncentered", [float("nan")])))
        c = float(np.nanmedian(data[phi].get("centered", [float("nan")])))
        table.append((phi, nc, c))
    return table


def _plot_parameterisation(rows, path):
    table = _parameterisation_table(rows)
    phis = [r[0] for r in table]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(phis, [r[1] for r in table], marker="o", label="non-centered")
    ax.plot(phis, [r[2] for r in table], marker="s", label="centered")
    ax.set_xlabel("phi")
    ax.set_ylabel("lag-1 ACF of beta")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    _savefig(fig, path)


def _job_varlogp(args):
    seed, idx, t, m, replicates, beta, phi, sigma, y = args
    params = SVParams(beta=beta, phi=phi, sigma=sigma)
    return estimate_loglik_variance(SVModel(), params, np.asarray(y), m,
                                    replicates, RngStream(seed).child(1, idx))


def experiment_pmmh_demo(cfg, seed, threads, out_dir):
    """Variance of the log-likelihood estimator over a particle grid, plus
    PMMH runs at matched settings with their traces and stickiness stats."""
    truth = SV_PRESET.truth
    prior = SV_PRESET.prior
    t_full = cfg.get_int("pmmh_demo.n", SV_PRESET.n_obs)
    m_grid = cfg.get_ints("pmmh_demo.m_grid", (50, 100, 200))
    replicates = cfg.get_int("pmmh_demo.replicates", 200)
    iterations = cfg.get_int("pmmh_demo.iterations", 2000)
    pilot_iters = cfg.get_int("pmmh_demo.pilot_iterations", SV_PRESET.pilot_iterations)
    pilot_m = cfg.get_int("pmmh_demo.pilot_particles", SV_PRESET.pilot_particles)
    stride = cfg.get_int("pmmh_demo.path_stride", 100)
    stream = RngStream(seed)
    x, y = sv_simulate(truth, t_full, stream.child(0).generator())
    t_half = t_full // 2

    jobs = []
    var_coords = []
    for idx, (t, m) in enumerate([(t_full, m) for m in m_grid]
                                 + [(t_half, m) for m in m_grid]):
        jobs.append((seed, idx, t, m, replicates, truth.beta, truth.phi,
                     truth.sigma, tuple(y[:t])))
        var_coords.append((t, m))
    variances = _map_jobs(_job_varlogp, jobs, threads)
    var_rows = [(t, m, replicates, v) for (t, m), v in zip(var_coords, variances)]

    psi0 = sv_transformed_from_natural(
        np.array([truth.beta, truth.phi, truth.sigma]))
    log_prior = lambda psi: sv_transformed_log_prior(psi, prior)
    lam = cfg.get_float("pmmh_demo.rw_scale", SV_PRESET.rw_scale)
    pilot = pmmh(log_prior, RWProposal(lam, np.diag([0.1, 1.0, 0.1])), SVModel(),
                 y, pilot_m, pilot_iters, psi0, stream.child(2),
                 param_map=sv_params_from_transformed)
    v_hat = pilot_covariance(pilot.thetas[pilot.burn_in:])
    rw = RWProposal(lam, v_hat)

    runs = [(t_full, m_grid[0]),
            (t_full, m_grid[1] if len(m_grid) > 1 else m_grid[0]),
            (t_half, m_grid[0])]
    summary_rows = []
    trace_paths = []
    traces = []
    for k, (t, m) in enumerate(runs):
        label = f"T{t}_M{m}"
        trace = pmmh(log_prior, rw, SVModel(), y[:t], m, iterations, psi0,
                     stream.child(3, k), param_map=sv_params_from_transformed,
                     theta_names=("beta", "phi", "sigma"),
                     record_transform=sv_natural_from_transformed)
        trace = replace(trace, config_hash=cfg.hash())
        tpath = os.path.join(out_dir, f"pmmh_trace_{label}.csv")
        save_chain_trace(tpath, trace, path_stride=stride)
        trace_paths.append(tpath)
        traces.append((label, trace))
        summary_rows.append((label, t, m, iterations,
                             float(trace.accepted.mean()),
                             max_run_length(trace)))
    return var_rows, summary_rows, traces, trace_paths


def _plot_pmmh(traces, path):
    fig, axes = plt.subplots(len(traces), 1, figsize=(8, 2.4 * len(traces)),
                             squeeze=False, sharex=True)
    for ax, (label, trace) in zip(axes[:, 0], traces):
        ax.plot(np.log(trace.component("sigma")), linewidth=0.6, color="black")
        ax.set_ylabel("log sigma")
        ax.set_title(label, fontsize=9)
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    _savefig(fig, path)


def experiment_pgibbs_demo(cfg, seed, threads, out_dir):
    """Fixed-parameter particle Gibbs state mixing: trace series for an
    early and a late state coordinate over (M, T) settings, with and
    without ancestor sampling."""
    truth = SV_PRESET.truth
    t_full = cfg.get_int("pgibbs_demo.n", SV_PRESET.n_obs)
    iterations = cfg.get_int("pgibbs_demo.iterations", 1000)
    m_small = cfg.get_int("pgibbs_demo.m_small", 100)
    m_large = cfg.get_int("pgibbs_demo.m_large", 200)
    stream = RngStream(seed)
    x, y = sv_simulate(truth, t_full, stream.child(0).generator())
    t_half = t_full // 2
    theta0 = np.array([truth.beta, truth.phi, truth.sigma])

    runs = [(m_small, t_full, False),
            (m_large, t_full, False),
            (m_small, t_half, False),
            (m_small, t_full, True)]
    rate_rows = []
    series_rows = []
    panels = []
    for k, (m, t, anc) in enumerate(runs):
        label = f"M{m}_T{t}" + ("_anc" if anc else "")
        path0 = sv_simulate(truth, t, stream.child(1, k).generator())[0]
        trace = particle_gibbs(SVModel(), y[:t], m, iterations, (theta0, path0),
                               stream.child(2, k), ancestor_sampling=anc,
                               param_map=sv_param_map)
        late = int(round(0.9 * t))
        rates = update_rate_per_time(trace.paths)
        rate_rows.append((label, m, t, anc, iterations,
                          rates[0], rates[late - 1]))
        for i in range(iterations):
            series_rows.append((label, i, trace.paths[i, 0], trace.paths[i, late - 1]))
        panels.append((label, trace.paths[:, 0], trace.paths[:, late - 1]))
    return rate_rows, series_rows, panels


def _plot_pgibbs(panels, path_main, path_anc):
    main = [p for p in panels if not p[0].endswith("_anc")]
    fig, axes = plt.subplots(len(main), 1, figsize=(8, 2.2 * len(main)),
                             squeeze=False)
    for ax, (label, early, late) in zip(axes[:, 0], main):
        ax.plot(early, color="black", linewidth=0.6, label="x_1")
        ax.plot(late, color="grey", linewidth=0.6, label="x_0.9T")
        ax.set_title(label, fontsize=9)
        ax.legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    _savefig(fig, path_main)

    pair = [panels[0], panels[-1]]
    fig, axes = plt.subplots(len(pair), 1, figsize=(8, 2.2 * len(pair)),
                             squeeze=False)
    for ax, (label, early, late) in zip(axes[:, 0], pair):
        ax.plot(early, color="black", linewidth=0.6, label="x_1")
        ax.plot(late, color="grey", linewidth=0.6, label="x_0.9T")
        suffix = "with ancestor sampling" if label.endswith("_anc") else "plain"
        ax.set_title(f"{label.split('_anc')[0]}, {suffix}", fontsize=9)
        ax.legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    _savefig(fig, path_anc)


def cmd_experiment(name, cfg, seed, out_dir, threads) -> list[str]:
    if name not in EXPERIMENT_NAMES:
        valid = ", ".join(EXPERIMENT_NAMES)
        raise ConfigError(f"unknown experiment {name!r}; valid names: {valid}")
    written = []
    if name == "fig-hmm-acf":
        columns, rows = experiment_fig_hmm_acf(cfg, seed, threads)
        csv_path = os.path.join(out_dir, "hmm_acf.csv")
        _write_csv(csv_path, cfg, seed, columns, rows)
        png_path = os.path.join(out_dir, "hmm_acf.png")
        _plot_hmm_acf(columns, rows, png_path)
        written += [csv_path, png_path]
    elif name == "fig-sv-acf":
        columns, rows = experiment_fig_sv_acf(cfg, seed, threads)
        csv_path = os.path.join(out_dir, "sv_acf.csv")
        _write_csv(csv_path, cfg, seed, columns, rows)
        png_path = os.path.join(out_dir, "sv_acf.png")
        _plot_sv_acf(columns, rows, png_path)
        written += [csv_path, png_path]
    elif name == "fig-block-acceptance":
        columns, rows = experiment_fig_block_acceptance(cfg, seed, threads)
        csv_path = os.path.join(out_dir, "block_acceptance.csv")
        _write_csv(csv_path, cfg, seed, columns, rows)
        png_path = os.path.join(out_dir, "block_acceptance.png")
        _plot_block_acceptance(columns, rows, png_path)
        written += [csv_path, png_path]
    elif name == "table-parameterisation":
        columns, rows = experiment_table_parameterisation(cfg, seed, threads)
        csv_path = os.path.join(out_dir, "parameterisation_acf.csv")
        _write_csv(csv_path, cfg, seed, columns, rows)
        table_path = os.path.join(out_dir, "parameterisation_table.csv")
        _write_csv(table_path, cfg, seed, ("phi", "noncentered", "centered"),
                   _parameterisation_table(rows))
        png_path = os.path.join(out_dir, "parameterisation.png")
        _plot_parameterisation(rows, png_path)
        written += [csv_path, table_path, png_path]
    elif name == "pmmh-demo":
        var_rows, summary_rows, traces, trace_paths = experiment_pmmh_demo(
            cfg, seed, threads, out_dir)
        var_path = os.path.join(out_dir, "pmmh_varlogp.csv")
        _write_csv(var_path, cfg, seed, ("t", "m", "replicates", "var_log_p"),
                   var_rows)
        sum_path = os.path.join(out_dir, "pmmh_summary.csv")
        _write_csv(sum_path, cfg, seed,
                   ("run", "t", "m", "iterations", "acceptance", "max_run_length"),
                   summary_rows)
        png_path = os.path.join(out_dir, "pmmh_traces.png")
        _plot_pmmh(traces, png_path)
        written += [var_path, sum_path] + trace_paths + [png_path]
    elif name == "pgibbs-demo":
        rate_rows, series_rows, panels = experiment_pgibbs_demo(
            cfg, seed, threads, out_dir)
        rate_path = os.path.join(out_dir, "pgibbs_rates.csv")
        _write_csv(rate_path, cfg, seed,
                   ("run", "m", "t", "ancestor_sampling", "iterations",
                    "update_rate_x1", "update_rate_x09t"), rate_rows)
        series_path = os.path.join(out_dir, "pgibbs_series.csv")
        _write_csv(series_path, cfg, seed,
                   ("run", "iteration", "x_1", "x_09t"), series_rows)
        png_main = os.path.join(out_dir, "pgibbs_traces.png")
        png_anc = os.path.join(out_dir, "pgibbs_ancestor.png")
        _plot_pgibbs(panels, png_main, png_anc)
        written += [rate_path, series_path, png_main, png_anc]
    written.append(_write_config_json(out_dir, cfg, seed))
    return written


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmcmc",
        description="MCMC for state-space models: simulate data, run "
                    "samplers, reproduce the reference experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("simulate", "write a simulated data set"),
        ("run", "run one sampler on a data file"),
        ("experiment", "run a named experiment"),
    ]
    for name, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        if name == "experiment":
            sp.add_argument("name", help="experiment name, one of: "
                                         + ", ".join(EXPERIMENT_NAMES))
        sp.add_argument("--config", default=None, help="config file path")
        sp.add_argument("--seed", type=int, default=None, help="root RNG seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes for experiment grids")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        seed = args.seed if args.seed is not None else cfg.get_int("run.seed", 1)
        cfg = cfg.with_entry("run.seed", seed)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        os.makedirs(args.out, exist_ok=True)
        if args.command == "simulate":
            written = cmd_simulate(cfg, seed, args.out)
        elif args.command == "run":
            written = cmd_run(cfg, seed, args.out)
        else:
            written = cmd_experiment(args.name, cfg, seed, args.out, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FilterCollapse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
