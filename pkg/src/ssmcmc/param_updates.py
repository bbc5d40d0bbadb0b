"""Parameter moves conditional on the latent path.

Covers the conjugate and independence updates for the stochastic volatility
model, Dirichlet conditionals for the discrete HMM, transformations between
state parameterisations, a joint parameter-and-path Metropolis move, and an
estimator of the Bayesian fraction of missing information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import RngStream
from .diagnostics import ChainTrace
from .models import HMMParams, SVParams, SVPrior

__all__ = [
    "Parameterisation",
    "DirichletPrior",
    "sv_sample_beta2",
    "sv_sample_sigma2",
    "sv_update_phi",
    "sv_sample_mu_centered",
    "reparam_transform",
    "hmm_sample_conditionals",
    "joint_update",
    "estimate_gamma_f",
]


class Parameterisation(Enum):
    """State representations for the SV model.

    NONCENTERED_BETA is the model's own scale: the path does not depend on
    beta. CENTERED_MU absorbs mu = 2 log beta into the path (x' = x + mu) so
    the observation variance is exp(x'). NONCENTERED_BETA_SIGMA standardises
    the innovations (x' = x / sigma).
    """

    NONCENTERED_BETA = "noncenteredBeta"
    CENTERED_MU = "centeredMu"
    NONCENTERED_BETA_SIGMA = "noncenteredBetaSigma"


@dataclass(frozen=True)
class DirichletPrior:
    """Independent Dirichlet priors for the rows of an HMM.

    Parameters
    ----------
    transition : ndarray, shape (K, K)
        Concentration parameters for each transition row.
    emission : ndarray, shape (K, S)
        Concentration parameters for each emission row.
    initial : ndarray, shape (K,), optional
        Fixed law of the first state, copied into sampled parameters.
        Uniform when omitted. Keeping it fixed (rather than tied to the
        transition matrix) is what makes the row posteriors independent.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.transition, dtype=float)
        e = np.asarray(self.emission, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("transition concentrations must be square")
        if e.ndim != 2 or e.shape[0] != t.shape[0]:
            raise ValueError("need one emission row per state")
        if np.any(t <= 0) or np.any(e <= 0):
            raise ValueError("concentrations must be positive")
        init = self.initial
        if init is None:
            init = np.full(t.shape[0], 1.0 / t.shape[0])
        else:
            init = np.asarray(init, dtype=float)
            if init.shape != (t.shape[0],) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
                raise ValueError("initial must be a length-K probability vector")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "emission", e)
        object.__setattr__(self, "initial", init)


def sv_sample_beta2(traj, y, rng: np.random.Generator) -> float:
    """Draw beta^2 from its inverse-chi-squared full conditional.

    The scale is sum(y_t^2 exp(-x_t)) with n degrees of freedom; the draw is
    exact under the improper scale prior p(beta) proportional to 1/beta.
    """
    x = np.asarray(traj, dtype=float)
    obs = np.asarray(y, dtype=float)
    if x.shape != obs.shape or x.ndim != 1 or x.size == 0:
        raise ValueError("need matching one dimensional path and observations")
    scale = float(np.sum(obs**2 * np.exp(-x)))
    if scale == 0.0:
        raise ValueError("degenerate sufficient statistic")
    return scale / rng.chisquare(x.size)


def sv_sample_sigma2(traj, phi: float, prior: SVPrior, rng: np.random.Generator) -> float:
    """Draw sigma^2 from its inverse-chi-squared full conditional.

    Scale S0 + x_1^2 (1 - phi^2) + sum_{t>=2} (x_t - phi x_{t-1})^2 with
    n + p degrees of freedom.
    """
    if not abs(phi) < 1:
        raise ValueError("phi must lie in (-1, 1)")
    x = np.asarray(traj, dtype=float)
    resid = x[1:] - phi * x[:-1]
    scale = prior.s0 + x[0] ** 2 * (1.0 - phi**2) + float(np.sum(resid**2))
    return scale / rng.chisquare(x.size + prior.p)


def sv_update_phi(
    traj, sigma: float, prior: SVPrior, phi_current: float, rng: np.random.Generator
) -> tuple[float, bool]:
    """Independence-sampler update of phi given the path and sigma.

    The Gaussian proposal has mean sum_{t=2}^n x_t x_{t-1} / sum_{t=2}^{n-1}
    x_t^2 and variance sigma^2 / sum_{t=2}^{n-1} x_t^2; it absorbs the whole
    exponential factor of the conditional (including the stationary initial
    term), so the acceptance ratio reduces to
    [(1+phi')^(a-1/2) (1-phi')^(b+1/2)] / [(1+phi)^(a-1/2) (1-phi)^(b+1/2)].
    Proposals outside (-1, 1) are rejected outright.
    """
    if not abs(phi_current) < 1:
        raise ValueError("phi must lie in (-1, 1)")
    x = np.asarray(traj, dtype=float)
    denom = float(np.sum(x[1:-1] ** 2))
    if denom == 0.0:
        raise ValueError("degenerate proposal")
    cross = float(np.sum(x[1:] * x[:-1]))
    proposal = cross / denom + sigma / math.sqrt(denom) * rng.standard_normal()
    if not abs(proposal) < 1:
        return phi_current, False
    log_ratio = (prior.a - 0.5) * (math.log1p(proposal) - math.log1p(phi_current)) + (
        prior.b + 0.5
    ) * (math.log1p(-proposal) - math.log1p(-phi_current))
    if math.log(rng.random()) < log_ratio:
        return proposal, True
    return phi_current, False


def sv_sample_mu_centered(
    traj_centered, phi: float, sigma: float, rng: np.random.Generator
) -> float:
    """Draw mu = 2 log beta given a path in the centered representation.

    The conditional is N(b/a, sigma^2/a) with
    a = (n-1)(1-phi)^2 + (1-phi^2) and
    b = (1-phi) sum_{t=2}^n (x'_t - phi x'_{t-1}) + x'_1 (1-phi^2),
    under a flat prior on mu.
    """
    if not abs(phi) < 1:
        raise ValueError("phi must lie in (-1, 1)")
    x = np.asarray(traj_centered, dtype=float)
    n = x.size
    a = (n - 1) * (1.0 - phi) ** 2 + (1.0 - phi**2)
    b = (1.0 - phi) * float(np.sum(x[1:] - phi * x[:-1])) + x[0] * (1.0 - phi**2)
    return b / a + sigma / math.sqrt(a) * rng.standard_normal()


def _to_model_scale(params: SVParams, traj: np.ndarray, rep: Parameterisation) -> np.ndarray:
    if rep is Parameterisation.NONCENTERED_BETA:
        return traj.copy()
    if rep is Parameterisation.CENTERED_MU:
        return traj - 2.0 * math.log(params.beta)
    return traj * params.sigma


def _from_model_scale(params: SVParams, traj: np.ndarray, rep: Parameterisation) -> np.ndarray:
    if rep is Parameterisation.NONCENTERED_BETA:
        return traj
    if rep is Parameterisation.CENTERED_MU:
        return traj + 2.0 * math.log(params.beta)
    return traj / params.sigma


def reparam_transform(
    params: SVParams,
    traj,
    from_rep: Parameterisation,
    to_rep: Parameterisation,
) -> tuple[SVParams, np.ndarray]:
    """Map an SV path between state representations.

    The parameters are returned unchanged; only the path coordinates move.
    Transforms compose through the model's own scale, so any ordered pair of
    representations is a bijection and round trips are exact.
    """
    x = np.asarray(traj, dtype=float)
    if from_rep is to_rep:
        return params, x.copy()
    return params, _from_model_scale(params, _to_model_scale(params, x, from_rep), to_rep)


def hmm_sample_conditionals(
    traj, y, prior: DirichletPrior, rng: np.random.Generator
) -> HMMParams:
    """Draw HMM parameters from their conditional given a state path.

    Transition rows come from Dirichlet(prior + transition counts) and
    emission rows from Dirichlet(prior + emission counts); the rows are
    mutually independent because the law of the first state is held fixed.
    """
    path = np.asarray(traj, dtype=np.int64)
    obs = np.asarray(y, dtype=np.int64)
    if path.shape != obs.shape or path.ndim != 1 or path.size == 0:
        raise ValueError("need matching one dimensional path and observations")
    k = prior.transition.shape[0]
    s = prior.emission.shape[1]
    if np.any(path < 0) or np.any(path >= k):
        raise ValueError("path state out of range")
    if np.any(obs < 0) or np.any(obs >= s):
        raise ValueError("symbol out of range")
    trans_counts = np.zeros((k, k))
    np.add.at(trans_counts, (path[:-1], path[1:]), 1.0)
    emis_counts = np.zeros((k, s))
    np.add.at(emis_counts, (path, obs), 1.0)
    transition = np.vstack([rng.dirichlet(prior.transition[i] + trans_counts[i]) for i in range(k)])
    emissions = np.vstack([rng.dirichlet(prior.emission[i] + emis_counts[i]) for i in range(k)])
    return HMMParams(transition=transition, emissions=emissions, initial=prior.initial)


def joint_update(
    theta,
    traj,
    theta_proposal,
    exact_state_sampler,
    y,
    rng: np.random.Generator,
    log_prior=None,
    state_rng: np.random.Generator | None = None,
) -> tuple[object, np.ndarray, bool]:
    """One Metropolis move proposing theta and then an exact path draw.

    ``theta_proposal`` must expose ``sample(theta, rng)`` and
    ``logpdf(origin, destination)``; ``exact_state_sampler(theta, y, rng)``
    must return a pair (path, log marginal likelihood). The acceptance ratio
    uses only the prior, the marginal likelihoods, and the proposal
    densities, so it does not depend on which paths happen to be drawn.
    Passing ``state_rng`` keeps path draws off the chain's stream, leaving
    the theta transcript identical to a marginal Metropolis run.
    """
    gen_state = rng if state_rng is None else state_rng
    _, loglik_cur = exact_state_sampler(theta, y, gen_state)
    proposal = theta_proposal.sample(theta, rng)
    lp_prop = 0.0 if log_prior is None else log_prior(proposal)
    lp_cur = 0.0 if log_prior is None else log_prior(theta)
    if lp_prop == -math.inf:
        rng.random()
        return theta, traj, False
    path_prop, loglik_prop = exact_state_sampler(proposal, y, gen_state)
    log_ratio = (
        lp_prop
        + loglik_prop
        + theta_proposal.logpdf(proposal, theta)
        - lp_cur
        - loglik_cur
        - theta_proposal.logpdf(theta, proposal)
    )
    if math.log(rng.random()) < log_ratio:
        return proposal, path_prop, True
    return theta, traj, False


def estimate_gamma_f(
    chain: ChainTrace,
    conditional_sampler,
    f,
    repeats: int,
    rng: RngStream,
    thin: int = 10,
) -> float:
    """Estimate the Bayesian fraction of missing information for f(theta).

    One minus the ratio of the average conditional variance of f given the
    path (estimated from ``repeats`` draws of ``conditional_sampler(path,
    generator)`` at every ``thin``-th retained path) to the marginal
    variance of f over the retained chain. Clipped to [0, 1].
    """
    if len(chain) - chain.burn_in < 100:
        raise ValueError("need at least 100 retained iterations")
    if repeats < 2:
        raise ValueError("repeats must be at least 2")
    if chain.paths is None:
        raise ValueError("trace carries no paths")
    kept = np.arange(chain.burn_in, len(chain))
    marginal = np.asarray([f(chain.thetas[i]) for i in kept], dtype=float)
    denom = float(np.var(marginal, ddof=1))
    if denom <= 1e-12 * max(1.0, float(np.mean(marginal)) ** 2):
        raise ValueError("constant functional")
    cond_vars = []
    for j, i in enumerate(kept[::thin]):
        gen = rng.child(j).generator()
        draws = np.asarray(
            [f(conditional_sampler(chain.paths[i], gen)) for _ in range(repeats)], dtype=float
        )
        cond_vars.append(float(np.var(draws, ddof=1)))
    gamma = 1.0 - float(np.mean(cond_vars)) / denom
    return float(min(1.0, max(0.0, gamma)))
