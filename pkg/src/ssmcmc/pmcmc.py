"""Chain drivers built on particle filters: pseudo-marginal MH, PMMH with
path output, particle Gibbs, and an exact-marginal MH baseline for models
whose likelihood is tractable.

All drivers share RNG conventions: the chain's own proposal and acceptance
draws come from ``rng.child(0)``, while per-iteration helper randomness
(likelihood estimators, conditional filters, path selection) comes from
``rng.child(kind, iteration)`` so that replacing one ingredient leaves the
others' draws untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .diagnostics import ChainTrace
from .models import HMMParams, SVParams, SVPrior
from .param_updates import (
    hmm_sample_conditionals,
    sv_sample_beta2,
    sv_sample_sigma2,
    sv_update_phi,
)
from .smc import FilterCollapse, bootstrap_filter, conditional_smc, csmc_select_path, sample_backward_path

__all__ = [
    "ChainState",
    "RWProposal",
    "pseudo_marginal_mh",
    "pmmh",
    "exact_marginal_mh",
    "particle_gibbs",
    "sv_gibbs_theta_update",
    "hmm_gibbs_theta_update",
    "sv_param_map",
    "sv_params_from_transformed",
    "sv_natural_from_transformed",
    "sv_transformed_from_natural",
    "sv_transformed_log_prior",
    "hmm_theta_vector",
    "hmm_param_map",
    "pilot_covariance",
    "SVExperimentPreset",
    "SV_PRESET",
]


@dataclass(frozen=True)
class ChainState:
    """Current position of a marginal-space chain.

    ``log_post_hat`` is the (possibly estimated) log posterior at ``theta``;
    ``path`` carries the latent trajectory for drivers that track one.
    """

    theta: np.ndarray
    log_post_hat: float
    path: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_post_hat):
            raise ValueError("log posterior must be finite")


@dataclass(frozen=True)
class RWProposal:
    """Gaussian random-walk proposal ``theta' = theta + scale * L z`` with
    ``L`` the Cholesky factor of ``covariance`` and ``z`` standard normal."""

    scale: float
    covariance: np.ndarray

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    def sample(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        step = self._chol @ rng.standard_normal(self.covariance.shape[0])
        return np.asarray(theta, dtype=float) + self.scale * step


def _assemble_trace(thetas_raw, log_post, accepted, paths, rng, iterations,
                    theta_names, record_transform, burn_in):
    if record_transform is not None:
        thetas = np.asarray([record_transform(row) for row in thetas_raw], dtype=float)
    else:
        thetas = thetas_raw
    if theta_names is None:
        theta_names = tuple(f"theta_{j + 1}" for j in range(thetas.shape[1]))
    if burn_in is None:
        burn_in = iterations // 10
    return ChainTrace(
        theta_names=tuple(theta_names),
        thetas=thetas,
        log_post=log_post,
        accepted=accepted,
        paths=paths,
        seed=rng.seed,
        burn_in=int(burn_in),
    )


def _run_mh(log_prior, rw, evaluate, iterations, init, rng, n_path,
            theta_names, record_transform, burn_in):
    """Shared Metropolis-Hastings loop over (theta, estimate, path) states.

    ``evaluate(theta, i)`` returns ``(loglik, path)`` for iteration ``i``
    (``i = 0`` initialises the chain); ``path`` is ``None`` when the driver
    does not track trajectories.
    """
    if iterations < 1:
        raise ValueError("iterations must be positive")
    chain_gen = rng.child(0).generator()
    theta0 = np.array(init, dtype=float, copy=True).reshape(-1)
    lp0 = float(log_prior(theta0))
    if not np.isfinite(lp0):
        raise ValueError("initial parameter has zero prior density")
    ll0, path0 = evaluate(theta0, 0)
    if not np.isfinite(ll0):
        raise ValueError("non-finite initial likelihood estimate")
    state = ChainState(theta0, lp0 + ll0, path0)

    thetas_raw = np.empty((iterations, theta0.size))
    log_post = np.empty(iterations)
    accepted = np.zeros(iterations, dtype=np.int64)
    paths = np.empty((iterations, n_path)) if n_path else None
    for i in range(1, iterations + 1):
        prop = np.asarray(rw.sample(state.theta, chain_gen), dtype=float).reshape(-1)
        u = chain_gen.random()
        lp_prop = float(log_prior(prop))
        if np.isfinite(lp_prop):
            ll_prop, path_prop = evaluate(prop, i)
            log_ratio = (lp_prop + ll_prop) - state.log_post_hat
            if u < math.exp(min(0.0, log_ratio)):
                state = ChainState(prop, lp_prop + ll_prop, path_prop)
                accepted[i - 1] = 1
        thetas_raw[i - 1] = state.theta
        log_post[i - 1] = state.log_post_hat
        if paths is not None:
            paths[i - 1] = state.path
    return _assemble_trace(thetas_raw, log_post, accepted, paths, rng,
                           iterations, theta_names, record_transform, burn_in)


def pseudo_marginal_mh(log_prior, rw, lik_estimator, iterations, init,
                       rng: RngStream, theta_names=None, record_transform=None,
                       burn_in=None) -> ChainTrace:
    """Metropolis-Hastings on theta with an unbiased log-likelihood estimate
    in place of the exact likelihood.

    Parameters
    ----------
    log_prior : callable
        Maps a parameter vector to its log prior density (``-inf`` outside
        the support).
    rw : RWProposal
        Symmetric proposal; any object with a matching ``sample`` method works.
    lik_estimator : callable
        ``lik_estimator(theta, rng)`` returning a log-likelihood estimate
        whose exponential is unbiased.  Fresh estimator randomness is drawn
        at every proposal; the current estimate is carried forward unchanged
        on rejection.
    iterations : int
        Number of recorded moves (the initial state is not a row).
    init : array_like
        Starting parameter vector; must have positive prior density and a
        finite initial estimate.
    rng : RngStream
        Root stream; proposals use child 0, the estimator child (1, i).

    Returns
    -------
    ChainTrace
    """
    def evaluate(theta, i):
        return float(lik_estimator(theta, rng.child(1, i).generator())), None

    return _run_mh(log_prior, rw, evaluate, iterations, init, rng, 0,
                   theta_names, record_transform, burn_in)


def pmmh(log_prior, rw, model, y, m, iterations, init, rng: RngStream,
         param_map=None, theta_names=None, record_transform=None,
         burn_in=None) -> ChainTrace:
    """Particle marginal Metropolis-Hastings: pseudo-marginal MH whose
    estimator is a bootstrap particle filter, recording one latent path per
    iteration.

    A backward path is drawn from the proposed filter's output before the
    accept decision; on rejection the previous theta, estimate and path are
    all retained bitwise.  ``param_map`` converts the chain's parameter
    vector into the model's parameter record (identity by default).  A
    filter collapse aborts the run with the iteration index attached.
    """
    obs = np.asarray(y)
    to_params = param_map if param_map is not None else (lambda theta: theta)

    def evaluate(theta, i):
        try:
            ps = bootstrap_filter(model, to_params(theta), obs, m,
                                  rng.child(1, i).generator())
        except FilterCollapse as exc:
            raise FilterCollapse(exc.t, iteration=i) from None
        _, path = sample_backward_path(ps, rng.child(2, i).generator())
        return ps.loglik_hat, path

    return _run_mh(log_prior, rw, evaluate, iterations, init, rng, obs.shape[0],
                   theta_names, record_transform, burn_in)


def exact_marginal_mh(log_prior, rw, loglik, iterations, init, rng: RngStream,
                      theta_names=None, record_transform=None,
                      burn_in=None) -> ChainTrace:
    """Standard Metropolis-Hastings on the exact posterior, for models whose
    likelihood can be evaluated directly (``loglik(theta) -> float``)."""
    if iterations < 1:
        raise ValueError("iterations must be positive")
    chain_gen = rng.child(0).generator()
    theta = np.array(init, dtype=float, copy=True).reshape(-1)
    lp = float(log_prior(theta))
    if not np.isfinite(lp):
        raise ValueError("initial parameter has zero prior density")
    ll = float(loglik(theta))
    if not np.isfinite(ll):
        raise ValueError("non-finite initial likelihood")

    thetas_raw = np.empty((iterations, theta.size))
    log_post = np.empty(iterations)
    accepted = np.zeros(iterations, dtype=np.int64)
    for i in range(iterations):
        prop = np.asarray(rw.sample(theta, chain_gen), dtype=float).reshape(-1)
        u = chain_gen.random()
        lp_prop = float(log_prior(prop))
        if np.isfinite(lp_prop):
            ll_prop = float(loglik(prop))
            log_ratio = (lp_prop + ll_prop) - (lp + ll)
            if u < math.exp(min(0.0, log_ratio)):
                theta, lp, ll = prop, lp_prop, ll_prop
                accepted[i] = 1
        thetas_raw[i] = theta
        log_post[i] = lp + ll
    return _assemble_trace(thetas_raw, log_post, accepted, None, rng,
                           iterations, theta_names, record_transform, burn_in)


def particle_gibbs(model, y, m, iterations, init, rng: RngStream,
                   ancestor_sampling=False, theta_update=None, param_map=None,
                   theta_names=None, record_transform=None,
                   burn_in=None) -> ChainTrace:
    """Particle Gibbs: alternate a parameter draw given the current path
    with a conditional SMC pass and a backward path selection.

    Parameters
    ----------
    init : tuple
        ``(theta, path)`` starting point; the path length must match ``y``.
    theta_update : callable, optional
        ``theta_update(path, y, theta, rng) -> theta`` drawing from the
        parameter conditional.  ``None`` keeps theta fixed, which turns the
        driver into a pure conditional-SMC state sampler.
    param_map : callable, optional
        Converts the chain's parameter vector into the model's parameter
        record (identity by default).
    ancestor_sampling : bool
        Resample the reference path's history inside the conditional filter.

    Every iteration's path move is a Gibbs draw, so the accepted column is
    identically one and ``log_post`` records the conditional filter's
    likelihood estimate.
    """
    if iterations < 1:
        raise ValueError("iterations must be positive")
    obs = np.asarray(y)
    theta0, path0 = init
    theta = np.array(theta0, dtype=float, copy=True).reshape(-1)
    path = np.asarray(path0)
    if path.shape[0] != obs.shape[0]:
        raise ValueError("initial path length must match the observations")
    to_params = param_map if param_map is not None else (lambda th: th)

    thetas_raw = np.empty((iterations, theta.size))
    log_post = np.empty(iterations)
    paths = np.empty((iterations, obs.shape[0]))
    for i in range(1, iterations + 1):
        if theta_update is not None:
            theta = np.asarray(
                theta_update(path, obs, theta, rng.child(1, i).generator()),
                dtype=float,
            ).reshape(-1)
        try:
            ps = conditional_smc(model, to_params(theta), obs, m, path,
                                 rng.child(2, i).generator(), ancestor_sampling)
        except FilterCollapse as exc:
            raise FilterCollapse(exc.t, iteration=i) from None
        path = csmc_select_path(ps, rng.child(3, i).generator())
        thetas_raw[i - 1] = theta
        log_post[i - 1] = ps.loglik_hat
        paths[i - 1] = path
    accepted = np.ones(iterations, dtype=np.int64)
    return _assemble_trace(thetas_raw, log_post, accepted, paths, rng,
                           iterations, theta_names, record_transform, burn_in)


def sv_gibbs_theta_update(prior: SVPrior):
    """Parameter conditional for the volatility model inside particle Gibbs.

    Draws beta squared from its conjugate conditional, then sigma squared at
    the current phi, then the phi independence move at the new sigma.  The
    chain vector is (beta, phi, sigma) on the natural scale.
    """
    def update(path, y, theta, rng):
        beta2 = sv_sample_beta2(path, y, rng)
        phi = float(theta[1])
        sigma = math.sqrt(sv_sample_sigma2(path, phi, prior, rng))
        phi, _ = sv_update_phi(path, sigma, prior, phi, rng)
        return np.array([math.sqrt(beta2), phi, sigma])

    return update


def hmm_gibbs_theta_update(prior):
    """Parameter conditional for a discrete HMM inside particle Gibbs: row
    Dirichlet draws given the current path, flattened via hmm_theta_vector."""
    def update(path, y, theta, rng):
        params = hmm_sample_conditionals(np.asarray(path, dtype=np.int64), y, prior, rng)
        return hmm_theta_vector(params)

    return update


def sv_param_map(theta) -> SVParams:
    """Chain vector (beta, phi, sigma) to the model parameter record."""
    return SVParams(beta=float(theta[0]), phi=float(theta[1]), sigma=float(theta[2]))


def sv_transformed_from_natural(theta) -> np.ndarray:
    """Map (beta, phi, sigma) to the unconstrained chain scale
    (log beta, logit((1+phi)/2), log sigma)."""
    beta, phi, sigma = (float(v) for v in theta)
    if beta <= 0 or sigma <= 0:
        raise ValueError("beta and sigma must be positive")
    if not -1.0 < phi < 1.0:
        raise ValueError("phi must lie in (-1, 1)")
    return np.array([math.log(beta), 2.0 * math.atanh(phi), math.log(sigma)])


def sv_natural_from_transformed(psi) -> np.ndarray:
    """Inverse of sv_transformed_from_natural."""
    psi = np.asarray(psi, dtype=float)
    return np.array([math.exp(psi[0]), math.tanh(psi[1] / 2.0), math.exp(psi[2])])


def sv_params_from_transformed(psi) -> SVParams:
    beta, phi, sigma = sv_natural_from_transformed(psi)
    return SVParams(beta=beta, phi=phi, sigma=sigma)


def sv_transformed_log_prior(psi, prior: SVPrior) -> float:
    """Log prior density on the unconstrained scale, Jacobian included.

    The natural-scale prior is flat in log beta, Beta(a, b) on (1+phi)/2 and
    scaled inverse chi squared on sigma squared; pushing each through its
    transform gives, up to constants, sigmoid powers in the phi coordinate
    and an exponential tilt in the log sigma coordinate.
    """
    psi = np.asarray(psi, dtype=float)
    phi_part = -prior.a * np.logaddexp(0.0, -psi[1]) - prior.b * np.logaddexp(0.0, psi[1])
    sigma_part = -prior.p * psi[2] - 0.5 * prior.s0 * math.exp(-2.0 * psi[2])
    return float(phi_part + sigma_part)


def hmm_theta_vector(params: HMMParams) -> np.ndarray:
    """Flatten transition rows then emission rows into one chain vector."""
    return np.concatenate([params.transition.ravel(), params.emissions.ravel()])


def hmm_param_map(n_states: int, n_symbols: int, initial=None):
    """Build the inverse of hmm_theta_vector for fixed dimensions."""
    k, s = int(n_states), int(n_symbols)

    def to_params(theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != k * k + k * s:
            raise ValueError("parameter vector has wrong length")
        return HMMParams(theta[: k * k].reshape(k, k),
                         theta[k * k:].reshape(k, s), initial)

    return to_params


def pilot_covariance(draws, cond_limit: float = 1e8) -> np.ndarray:
    """Empirical covariance of pilot-chain draws, falling back to its
    diagonal when the full matrix is ill-conditioned.

    The diagonal fallback floors each variance at a small positive value so
    the result is always usable as a proposal covariance.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two pilot draws")
    if not np.all(np.isfinite(x)):
        raise ValueError("pilot draws must be finite")
    v = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    d = np.diag(v)
    if np.linalg.cond(v) > cond_limit:
        floor = 1e-8 * max(1.0, float(d.max()))
        v = np.diag(np.maximum(d, floor))
    return v


@dataclass(frozen=True)
class SVExperimentPreset:
    """Default configuration for the volatility particle-MCMC experiments."""

    n_obs: int = 400
    truth: SVParams = SVParams(beta=1.0, phi=0.98, sigma=0.2)
    prior: SVPrior = SVPrior()
    rw_scale: float = 1.3
    pilot_iterations: int = 1500
    pilot_particles: int = 100


SV_PRESET = SVExperimentPreset()
