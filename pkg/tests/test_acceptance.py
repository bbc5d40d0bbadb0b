"""Acceptance suite: one test per advertised guarantee of the package.

Each test prints a verdict line of the form ``criterion NN: PASS (...)``
and fails with the matching FAIL line, so a plain ``pytest -v`` run gives
one pass/fail line per criterion and ``-s`` shows the measured numbers.
Runtime budgets are asserted along with the statistical tolerances; the
budgets assume a single modern workstation core.

The chain-level checks (criteria 10 to 12) share one simulated volatility
series whose seed is pinned below, so every run of the suite sees the same
data and the same chains.
"""
import functools
import math
import time

import numpy as np
from scipy.special import logsumexp

from helpers import enumerate_paths, mcse_mean
from ssmcmc.cli import (
    experiment_fig_block_acceptance,
    experiment_fig_hmm_acf,
    experiment_fig_sv_acf,
    experiment_table_parameterisation,
    make_config,
)
from ssmcmc.core import RngStream
from ssmcmc.diagnostics import max_run_length, update_rate_per_time
from ssmcmc.exact_hmm import backward_sample, forward_filter
from ssmcmc.models import (
    HMMModel,
    HMMParams,
    SVModel,
    SVParams,
    SVPrior,
    dna_params,
    hmm_simulate,
    sv_simulate,
)
from ssmcmc.param_updates import (
    DirichletPrior,
    hmm_sample_conditionals,
    sv_sample_beta2,
    sv_sample_sigma2,
)
from ssmcmc.pmcmc import (
    RWProposal,
    exact_marginal_mh,
    particle_gibbs,
    pilot_covariance,
    pmmh,
    pseudo_marginal_mh,
    sv_param_map,
    sv_params_from_transformed,
    sv_transformed_from_natural,
    sv_transformed_log_prior,
)
from ssmcmc.smc import bootstrap_filter, estimate_loglik_variance
from ssmcmc.state_updates import gaussian_emission_site, sv_block_update

HMM = HMMModel()
SV = SVModel()
SV_TRUTH = SVParams(beta=1.0, phi=0.98, sigma=0.2)
DATA_SEED = 4


def _verdict(num, ok, detail):
    line = "criterion %02d: %s (%s)" % (num, "PASS" if ok else "FAIL", detail)
    print(line)
    assert ok, line


def _enum_log_joints(hmm, y):
    """Log joint density of every latent path, by direct probability
    products over an explicit enumeration.

    Written against the model definition only, independently of the
    package's forward recursion, so it can serve as an oracle for it.
    """
    y = np.asarray(y, dtype=np.int64)
    paths = enumerate_paths(hmm.n_states, y.size)
    logp = np.log(hmm.initial[paths[:, 0]]) + np.log(hmm.emissions[paths[:, 0], y[0]])
    for t in range(1, y.size):
        logp += np.log(hmm.transition[paths[:, t - 1], paths[:, t]])
        logp += np.log(hmm.emissions[paths[:, t], y[t]])
    return paths, logp


@functools.lru_cache(maxsize=1)
def _hmm_instance():
    """A fixed 20-step two-state instance with its enumerated truth.

    Returns the parameters, the observations, the exact log-likelihood and
    the exact smoothing probabilities Pr(X_t = 1 | y), all from the
    enumeration oracle (2^20 paths).
    """
    hmm = dna_params(0.3, 0.1)
    _, y = hmm_simulate(hmm, 20, RngStream(31).child(0).generator())
    paths, logp = _enum_log_joints(hmm, y)
    shift = logp.max()
    w = np.exp(logp - shift)
    total = w.sum()
    loglik = shift + math.log(total)
    marginals = np.array([w[paths[:, t] == 1].sum() for t in range(y.size)]) / total
    return hmm, y, loglik, marginals


@functools.lru_cache(maxsize=1)
def _sv_series():
    """The shared 400-step volatility series behind criteria 10 to 12."""
    _, y = sv_simulate(SV_TRUTH, 400, RngStream(DATA_SEED).child(0).generator())
    return y


def test_criterion_01_exact_loglik_matches_enumeration():
    start = time.time()
    gen = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        k = int(gen.integers(2, 4))
        n = int(gen.integers(2, 9))
        s = int(gen.integers(2, 5))
        hmm = HMMParams(
            transition=gen.dirichlet(np.ones(k), size=k),
            emissions=gen.dirichlet(np.ones(s), size=k),
            initial=gen.dirichlet(np.ones(k)),
        )
        y = gen.integers(0, s, size=n)
        _, logp = _enum_log_joints(hmm, y)
        worst = max(worst, abs(forward_filter(hmm, y).loglik - logsumexp(logp)))
    elapsed = time.time() - start
    _verdict(1, worst <= 1e-10 and elapsed < 5.0,
             "max |delta loglik| %.2e over 50 instances, %.1fs" % (worst, elapsed))


def test_criterion_02_backward_sampler_matches_enumerated_posterior():
    start = time.time()
    hmm = dna_params(0.25, 0.1)
    _, y = hmm_simulate(hmm, 5, RngStream(21).child(0).generator())
    paths, logp = _enum_log_joints(hmm, y)
    post = np.exp(logp - logsumexp(logp))
    fb = forward_filter(hmm, y)
    gen = RngStream(21).child(1).generator()
    digits = 2 ** np.arange(4, -1, -1)
    n_draws = 100_000
    counts = np.zeros(32)
    for _ in range(n_draws):
        idx = int(backward_sample(fb, hmm, gen) @ digits)
        counts[idx] += 1
    tv = 0.5 * np.abs(counts / n_draws - post).sum()
    elapsed = time.time() - start
    _verdict(2, tv < 0.01 and elapsed < 10.0,
             "TV %.4f over 32 paths, %d draws, %.1fs" % (tv, n_draws, elapsed))


def test_criterion_03_particle_filter_likelihood_is_unbiased():
    start = time.time()
    hmm, y, loglik, _ = _hmm_instance()
    reps = 10_000
    ratios = np.empty(reps)
    for r in range(reps):
        ps = bootstrap_filter(HMM, hmm, y, 50, RngStream(32).child(1, r).generator())
        ratios[r] = math.exp(ps.loglik_hat - loglik)
    err = abs(ratios.mean() - 1.0)
    se = ratios.std(ddof=1) / math.sqrt(reps)
    elapsed = time.time() - start
    _verdict(3, err <= 3.0 * se and elapsed < 60.0,
             "mean estimate/truth %.4f, 3se %.4f, %.0fs" % (ratios.mean(), 3 * se, elapsed))


def test_criterion_04_conditional_smc_keeps_smoothing_marginals():
    start = time.time()
    hmm, y, _, marginals = _hmm_instance()
    sweeps = 10_000
    worst = {}
    for anc in (False, True):
        stream = RngStream(33).child(int(anc))
        init = backward_sample(forward_filter(hmm, y), hmm, stream.child(0).generator())
        trace = particle_gibbs(HMM, y, 20, sweeps, (np.zeros(1), init),
                               stream.child(1), ancestor_sampling=anc,
                               param_map=lambda th: hmm, burn_in=0)
        indicators = (trace.paths == 1.0).astype(float)
        z = 0.0
        for t in range(y.size):
            se = max(mcse_mean(indicators[:, t]), 1e-4)
            z = max(z, abs(indicators[:, t].mean() - marginals[t]) / se)
        worst[anc] = z
    elapsed = time.time() - start
    _verdict(4, max(worst.values()) <= 3.0 and elapsed < 120.0,
             "max |z| plain %.2f, ancestor %.2f over 20 marginals, %.0fs"
             % (worst[False], worst[True], elapsed))


def test_criterion_05_block_ratio_vanishes_for_gaussian_emissions():
    start = time.time()
    params = SVParams(beta=1.3, phi=0.9, sigma=0.35)
    gen = RngStream(34).child(0).generator()
    x, _ = sv_simulate(params, 60, gen)
    y = x + gen.standard_normal(60)
    site = gaussian_emission_site(1.0)
    worst = 0.0
    for _ in range(1000):
        t = int(gen.integers(1, 61))
        s = int(gen.integers(t, 61))
        _, _, log_ratio = sv_block_update(t, s, x, y, params, gen, 2, site)
        worst = max(worst, abs(log_ratio))
    elapsed = time.time() - start
    _verdict(5, worst <= 1e-8 and elapsed < 10.0,
             "max |log ratio| %.2e over 1000 blocks, %.1fs" % (worst, elapsed))


def test_criterion_06_parameterisation_table_entries_and_crossover():
    # The target entries and their crossover location pin the state noise:
    # the two-block sampler's orderings flip at phi = 1 - sigma/sqrt(2),
    # which sits between 0.95 and 0.975 only for sigma near 0.05.
    start = time.time()
    cfg = make_config({
        "table_parameterisation.sigma": "0.05",
        "table_parameterisation.iterations": "2000",
        "table_parameterisation.burn_in": "200",
        "table_parameterisation.seed_count": "5",
    })
    _, rows = experiment_table_parameterisation(cfg, DATA_SEED, threads=1)
    by_phi = {}
    for name, phi, _, val in rows:
        by_phi.setdefault(phi, {}).setdefault(name, []).append(val)
    phis = sorted(by_phi)
    nc = [float(np.nanmedian(by_phi[p]["noncentered"])) for p in phis]
    c = [float(np.nanmedian(by_phi[p]["centered"])) for p in phis]
    nc_target = (0.11, 0.21, 0.37, 0.62, 0.98)
    c_target = (0.89, 0.79, 0.64, 0.43, 0.29)
    worst = max(max(abs(a - b) for a, b in zip(nc, nc_target)),
                max(abs(a - b) for a, b in zip(c, c_target)))
    ok = (all(a < b for a, b in zip(nc, nc[1:]))
          and all(a > b for a, b in zip(c, c[1:]))
          and nc[2] < c[2] and nc[4] > c[4]
          and worst <= 0.15)
    elapsed = time.time() - start
    _verdict(6, ok and elapsed < 600.0,
             "max entry error %.3f, crossover in (0.95, 0.99), %.0fs" % (worst, elapsed))


def test_criterion_07_single_site_hmm_mixing_degrades_at_small_alpha():
    start = time.time()
    cfg = make_config({
        "fig_hmm_acf.alpha_grid": "0.02, 0.3",
        "fig_hmm_acf.beta_grid": "0.11",
        "fig_hmm_acf.n_grid": "200",
        "fig_hmm_acf.iterations": "400",
        "fig_hmm_acf.burn_in": "100",
        "fig_hmm_acf.seed_count": "5",
    })
    _, rows = experiment_fig_hmm_acf(cfg, DATA_SEED, threads=1)
    med = {alpha: float(np.nanmedian([v for _, _, a, _, v in rows if a == alpha]))
           for alpha in (0.02, 0.3)}
    gap = med[0.02] - med[0.3]
    elapsed = time.time() - start
    _verdict(7, gap >= 0.1 and elapsed < 300.0,
             "median lag-1 ACF %.3f at alpha 0.02 vs %.3f at 0.3, %.0fs"
             % (med[0.02], med[0.3], elapsed))


def test_criterion_08_single_site_sv_mixing_degrades_at_high_phi():
    start = time.time()
    cfg = make_config({
        "fig_sv_acf.phi_grid": "0.9, 0.99",
        "fig_sv_acf.tau2_grid": "1.0",
        "fig_sv_acf.n_grid": "200",
        "fig_sv_acf.iterations": "400",
        "fig_sv_acf.burn_in": "100",
        "fig_sv_acf.seed_count": "5",
    })
    _, rows = experiment_fig_sv_acf(cfg, DATA_SEED, threads=1)
    med = {phi: float(np.nanmedian([v for _, _, p, _, v, _ in rows if p == phi]))
           for phi in (0.9, 0.99)}
    gap = med[0.99] - med[0.9]
    min_acc = min(acc for *_, acc in rows)
    elapsed = time.time() - start
    _verdict(8, gap >= 0.1 and min_acc > 0.99 and elapsed < 300.0,
             "ACF gap %.3f, min acceptance %.4f, %.0fs" % (gap, min_acc, elapsed))


def test_criterion_09_block_acceptance_trends():
    start = time.time()
    _, rows = experiment_fig_block_acceptance(make_config({}), DATA_SEED, threads=1)
    means = {}
    for phi, size, _, val in rows:
        means.setdefault((phi, size), []).append(val)
    means = {key: float(np.mean(vals)) for key, vals in means.items()}
    phis = sorted({p for p, _ in means})
    sizes = sorted({s for _, s in means})
    decreasing = all(
        means[(phi, a)] > means[(phi, b)]
        for phi in phis for a, b in zip(sizes, sizes[1:])
    )
    phi_order = all(means[(0.99, s)] > means[(0.8, s)] for s in sizes)
    floor = min(means.values())
    elapsed = time.time() - start
    _verdict(9, decreasing and phi_order and floor > 0.01 and elapsed < 900.0,
             "decreasing in size %s, phi ordering %s, min mean %.3f, %.0fs"
             % (decreasing, phi_order, floor, elapsed))


def test_criterion_10_loglik_estimator_variance_calibration():
    start = time.time()
    y = _sv_series()
    grid = [(400, 50), (400, 100), (400, 200), (200, 50), (200, 100), (200, 200)]
    targets = [4.4, 1.8, 0.8, 2.0, 0.8, 0.4]
    variances = []
    for idx, (t, m) in enumerate(grid):
        variances.append(estimate_loglik_variance(
            SV, SV_TRUTH, y[:t], m, 200, RngStream(DATA_SEED).child(1, idx)))
    ratios = [v / target for v, target in zip(variances, targets)]
    constants = [v * m / t for v, (t, m) in zip(variances, grid)]
    spread = max(constants) / min(constants)
    ok = all(0.5 <= r <= 2.0 for r in ratios) and spread <= 1.5
    elapsed = time.time() - start
    _verdict(10, ok and elapsed < 1200.0,
             "variance/target in [%.2f, %.2f], T/M scaling spread %.2f, %.0fs"
             % (min(ratios), max(ratios), spread, elapsed))


def test_criterion_11_estimator_noise_drives_rejection_runs():
    start = time.time()
    y = _sv_series()
    prior = SVPrior()
    psi0 = sv_transformed_from_natural(np.array([1.0, 0.98, 0.2]))
    log_prior = lambda psi: sv_transformed_log_prior(psi, prior)
    pilot = pmmh(log_prior, RWProposal(1.3, np.diag([0.1, 1.0, 0.1])), SV, y,
                 200, 1500, psi0, RngStream(DATA_SEED).child(2),
                 param_map=sv_params_from_transformed)
    v_hat = pilot_covariance(pilot.thetas[pilot.burn_in:])
    rw = RWProposal(1.3, v_hat)
    medians = {}
    for t, m in [(400, 50), (400, 100), (200, 50)]:
        runs = [
            max_run_length(pmmh(log_prior, rw, SV, y[:t], m, 2000, psi0,
                                RngStream(DATA_SEED).child(3, t, m, s),
                                param_map=sv_params_from_transformed))
            for s in range(5)
        ]
        medians[(t, m)] = float(np.median(runs))
    ratio = medians[(200, 50)] / medians[(400, 100)]
    ok = medians[(400, 50)] > medians[(400, 100)] and 0.5 <= ratio <= 2.0
    elapsed = time.time() - start
    _verdict(11, ok and elapsed < 1800.0,
             "median max run %.0f/%.0f/%.0f for (400,50)/(400,100)/(200,50), %.0fs"
             % (medians[(400, 50)], medians[(400, 100)], medians[(200, 50)], elapsed))


def test_criterion_12_ancestor_sampling_restores_early_path_updates():
    start = time.time()
    y = _sv_series()
    theta0 = np.array([1.0, 0.98, 0.2])
    rates = {}
    for anc in (False, True):
        path0, _ = sv_simulate(SV_TRUTH, 400,
                               RngStream(DATA_SEED).child(1, int(anc)).generator())
        trace = particle_gibbs(SV, y, 100, 1000, (theta0, path0),
                               RngStream(DATA_SEED).child(2, int(anc)),
                               ancestor_sampling=anc, param_map=sv_param_map)
        per_time = update_rate_per_time(trace.paths)
        rates[anc] = (float(per_time[0]), float(per_time[359]))
    ok = (rates[False][0] < 0.05 and rates[True][0] > 0.5
          and rates[False][1] > 0.5 and rates[True][1] > 0.5)
    elapsed = time.time() - start
    _verdict(12, ok and elapsed < 1200.0,
             "x_1 rate %.3f plain vs %.3f ancestor, x_360 %.3f/%.3f, %.0fs"
             % (rates[False][0], rates[True][0], rates[False][1], rates[True][1], elapsed))


def test_criterion_13_pseudo_marginal_matches_exact_chain():
    start = time.time()
    hmm = dna_params(0.3, 0.1)
    _, y = hmm_simulate(hmm, 30, RngStream(61).child(0).generator())

    def log_prior(theta):
        return 0.0 if 0.01 < theta[0] < 0.6 else -np.inf

    def loglik(theta):
        return forward_filter(dna_params(theta[0], 0.1), y).loglik

    def estimator(theta, rng):
        return bootstrap_filter(HMM, dna_params(theta[0], 0.1), y, 10, rng).loglik_hat

    rw = RWProposal(0.08, np.eye(1))
    pm = pseudo_marginal_mh(log_prior, rw, estimator, 8000, np.array([0.3]),
                            RngStream(61).child(1))
    ex = exact_marginal_mh(log_prior, rw, loglik, 8000, np.array([0.3]),
                           RngStream(61).child(2))
    a_pm = pm.retained("theta_1")
    a_ex = ex.retained("theta_1")
    mean_gap = abs(a_pm.mean() - a_ex.mean())
    mean_se = math.hypot(mcse_mean(a_pm), mcse_mean(a_ex))
    acc_gap = pm.accepted.mean() - ex.accepted.mean()
    acc_se = math.hypot(mcse_mean(pm.accepted.astype(float)),
                        mcse_mean(ex.accepted.astype(float)))
    ok = mean_gap <= 3.0 * mean_se and acc_gap <= 3.0 * acc_se
    elapsed = time.time() - start
    _verdict(13, ok and elapsed < 600.0,
             "posterior mean gap %.4f (3se %.4f), acceptance %.3f vs %.3f, %.0fs"
             % (mean_gap, 3 * mean_se, pm.accepted.mean(), ex.accepted.mean(), elapsed))


def test_criterion_14_conjugate_updates_match_closed_form_moments():
    start = time.time()
    draws = 100_000
    gen0 = np.random.default_rng(71)
    x = 0.5 * gen0.standard_normal(30)
    y = 1.2 * np.exp(x / 2.0) * gen0.standard_normal(30)
    checks = []

    gen = RngStream(71).child(1).generator()
    sample = np.array([sv_sample_beta2(x, y, gen) for _ in range(draws)])
    truth = float(np.sum(y**2 * np.exp(-x))) / (x.size - 2)
    checks.append(abs(sample.mean() - truth) / (3 * sample.std(ddof=1) / math.sqrt(draws)))

    prior = SVPrior()
    phi = 0.9
    gen = RngStream(71).child(2).generator()
    sample = np.array([sv_sample_sigma2(x, phi, prior, gen) for _ in range(draws)])
    resid = x[1:] - phi * x[:-1]
    scale = prior.s0 + x[0] ** 2 * (1.0 - phi**2) + float(np.sum(resid**2))
    truth = scale / (x.size + prior.p - 2)
    checks.append(abs(sample.mean() - truth) / (3 * sample.std(ddof=1) / math.sqrt(draws)))

    hmm = dna_params(0.3, 0.1)
    path, obs = hmm_simulate(hmm, 60, RngStream(71).child(0).generator())
    dprior = DirichletPrior(np.full((2, 2), 0.5), np.ones((2, 4)))
    gen = RngStream(71).child(3).generator()
    trans = np.empty(draws)
    emis = np.empty(draws)
    for i in range(draws):
        drawn = hmm_sample_conditionals(path, obs, dprior, gen)
        trans[i] = drawn.transition[0, 1]
        emis[i] = drawn.emissions[1, 2]
    c01 = float(np.sum((path[:-1] == 0) & (path[1:] == 1)))
    c0 = float(np.sum(path[:-1] == 0))
    truth = (0.5 + c01) / (1.0 + c0)
    checks.append(abs(trans.mean() - truth) / (3 * trans.std(ddof=1) / math.sqrt(draws)))
    e12 = float(np.sum((path == 1) & (obs == 2)))
    e1 = float(np.sum(path == 1))
    truth = (1.0 + e12) / (4.0 + e1)
    checks.append(abs(emis.mean() - truth) / (3 * emis.std(ddof=1) / math.sqrt(draws)))

    elapsed = time.time() - start
    _verdict(14, max(checks) <= 1.0 and elapsed < 60.0,
             "worst |error|/3se %.2f over 4 moments, %.0fs" % (max(checks), elapsed))
