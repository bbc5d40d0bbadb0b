"""Particle filtering with full ancestry.

Bootstrap and general-proposal filters, the log-likelihood estimator, the
backward ancestral-path extraction, and conditional SMC with optional
ancestor sampling. Weights are kept per time step in the log domain and
resampling happens at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream, log_sum_exp, multinomial_resample

__all__ = [
    "FilterCollapse",
    "ParticleSystem",
    "ProposalKernel",
    "prior_proposal",
    "particle_filter",
    "bootstrap_filter",
    "sample_backward_path",
    "conditional_smc",
    "csmc_select_path",
    "estimate_loglik_variance",
    "save_particle_system",
]


class FilterCollapse(RuntimeError):
    """Raised when every particle weight vanishes at one time step.

    ``t`` is the 1-based time index; drivers may attach the MCMC iteration
    at which the collapse happened.
    """

    def __init__(self, t: int, iteration: int | None = None):
        self.t = int(t)
        self.iteration = iteration
        msg = f"filter collapse at t={self.t}"
        if iteration is not None:
            msg += f" (iteration {iteration})"
        super().__init__(msg)


@dataclass(frozen=True)
class ParticleSystem:
    """Everything one filter run produced.

    ``particles[t, m]`` and ``log_weights[t, m]`` hold the state and log
    weight of particle m at time t; ``ancestors[t - 1, m]`` is the 0-based
    index of the time t-1 parent resampled for particle m at time t.
    ``loglik_hat`` is the running sum of log row-mean weights.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    loglik_hat: float

    def __post_init__(self) -> None:
        x = np.asarray(self.particles)
        lw = np.asarray(self.log_weights, dtype=float)
        anc = np.asarray(self.ancestors, dtype=np.int64)
        if x.ndim != 2 or lw.shape != x.shape:
            raise ValueError("particles and log_weights must share a (T, M) shape")
        t, m = x.shape
        if anc.shape != (t - 1, m):
            raise ValueError("ancestors must have shape (T - 1, M)")
        if t > 1 and (anc.min() < 0 or anc.max() >= m):
            raise ValueError("ancestor index out of range")
        object.__setattr__(self, "particles", x)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "ancestors", anc)

    @property
    def n_steps(self) -> int:
        return self.particles.shape[0]

    @property
    def n_particles(self) -> int:
        return self.particles.shape[1]

    def ancestry(self, k: int) -> np.ndarray:
        """Indices b_1..b_T of the ancestral line ending at final particle k."""
        t = self.n_steps
        idx = np.empty(t, dtype=np.int64)
        idx[-1] = k
        for s in range(t - 2, -1, -1):
            idx[s] = self.ancestors[s, idx[s + 1]]
        return idx

    def path_from(self, k: int) -> np.ndarray:
        """The stored state values along :meth:`ancestry`."""
        idx = self.ancestry(k)
        return self.particles[np.arange(self.n_steps), idx]


@dataclass(frozen=True)
class ProposalKernel:
    """Proposal q(x_1) q(x_2|x_1) ... for a particle filter.

    The sampler fields mirror the model contract: ``initial_sample(theta,
    size, rng)`` and ``transition_sample(theta, x_prev, rng)``. The logpdf
    fields may be ``None`` when ``matches_prior`` is set, in which case the
    filter never evaluates them and weights reduce to emission densities.
    """

    initial_sample: object
    transition_sample: object
    initial_logpdf: object = None
    transition_logpdf: object = None
    matches_prior: bool = False


def prior_proposal(model) -> ProposalKernel:
    """The model's own dynamics as a proposal (bootstrap filtering)."""
    return ProposalKernel(
        initial_sample=model.initial_sample,
        transition_sample=model.transition_sample,
        initial_logpdf=getattr(model, "initial_logpdf", None),
        transition_logpdf=getattr(model, "transition_logpdf", None),
        matches_prior=True,
    )


def _check_row(lw: np.ndarray, t: int) -> float:
    """Log mean weight of a row, or a collapse error if it has no mass."""
    total = log_sum_exp(lw)
    if total == -math.inf or not np.isfinite(total):
        raise FilterCollapse(t)
    return total - math.log(lw.size)


def particle_filter(model, theta, y, m: int, proposal: ProposalKernel, rng: np.random.Generator) -> ParticleSystem:
    """Resample-propagate-weight filter with ancestry recorded every step.

    Weights are w_t = p(y_t|x_t) p(x_t|x_prev) / q(x_t|x_prev), dropping the
    transition and proposal factors when the proposal matches the prior.
    Raises :class:`FilterCollapse` when a whole weight row has zero mass.
    """
    obs = np.asarray(y)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("need at least one observation")
    if m < 1:
        raise ValueError("need at least one particle")
    x = proposal.initial_sample(theta, m, rng)
    lw = np.asarray(model.emission_logpdf(theta, x, obs[0]), dtype=float)
    if not proposal.matches_prior:
        lw = lw + (model.initial_logpdf(theta, x) - proposal.initial_logpdf(theta, x))
    loglik = _check_row(lw, 1)
    particles = np.empty((n,) + x.shape, dtype=x.dtype)
    log_weights = np.empty((n, m))
    ancestors = np.empty((max(n - 1, 0), m), dtype=np.int64)
    particles[0] = x
    log_weights[0] = lw
    for t in range(1, n):
        anc = multinomial_resample(lw, m, rng)
        x_prev = particles[t - 1][anc]
        x = proposal.transition_sample(theta, x_prev, rng)
        lw = np.asarray(model.emission_logpdf(theta, x, obs[t]), dtype=float)
        if not proposal.matches_prior:
            lw = lw + (
                model.transition_logpdf(theta, x_prev, x)
                - proposal.transition_logpdf(theta, x_prev, x)
            )
        loglik += _check_row(lw, t + 1)
        particles[t] = x
        log_weights[t] = lw
        ancestors[t - 1] = anc
    return ParticleSystem(particles, log_weights, ancestors, float(loglik))


def bootstrap_filter(model, theta, y, m: int, rng: np.random.Generator) -> ParticleSystem:
    """Particle filter proposing from the model's own dynamics.

    Only simulation of the transitions is required; their densities are
    never evaluated.
    """
    return particle_filter(model, theta, y, m, prior_proposal(model), rng)


def sample_backward_path(ps: ParticleSystem, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Pick a final index proportional to the last weights, trace it back.

    Returns the chosen 0-based final index and the ancestral path of stored
    particle values.
    """
    final = ps.log_weights[-1]
    if log_sum_exp(final) == -math.inf:
        raise ValueError("degenerate final weights")
    k = int(multinomial_resample(final, 1, rng)[0])
    return k, ps.path_from(k)


def csmc_select_path(ps: ParticleSystem, rng: np.random.Generator) -> np.ndarray:
    """The new-reference step of particle Gibbs: a backward path draw."""
    return sample_backward_path(ps, rng)[1]


def conditional_smc(
    model,
    theta,
    y,
    m: int,
    reference,
    rng: np.random.Generator,
    ancestor_sampling: bool = False,
) -> ParticleSystem:
    """Bootstrap filter with column 0 pinned to a reference path.

    Without ancestor sampling the pinned column keeps ancestor 0 throughout.
    With it, the reference's parent at each step is redrawn with probability
    proportional to w_{t-1}^j p(x_t^ref | x_{t-1}^j), which needs a model
    with a tractable transition density.
    """
    obs = np.asarray(y)
    ref = np.asarray(reference)
    n = obs.shape[0]
    if ref.shape[0] != n:
        raise ValueError("reference length must match the observations")
    if m < 1:
        raise ValueError("need at least one particle")
    if ancestor_sampling and not getattr(model, "has_transition_density", False):
        raise ValueError("intractable transition")

    if m > 1:
        free = np.asarray(model.initial_sample(theta, m - 1, rng))
        x = np.empty(m, dtype=free.dtype)
        x[1:] = free
    else:
        x = np.empty(1, dtype=ref.dtype)
    x[0] = ref[0]
    lw = np.asarray(model.emission_logpdf(theta, x, obs[0]), dtype=float)
    loglik = _check_row(lw, 1)
    particles = np.empty((n,) + x.shape, dtype=x.dtype)
    log_weights = np.empty((n, m))
    ancestors = np.empty((max(n - 1, 0), m), dtype=np.int64)
    particles[0] = x
    log_weights[0] = lw
    for t in range(1, n):
        anc = np.empty(m, dtype=np.int64)
        if m > 1:
            anc[1:] = multinomial_resample(lw, m - 1, rng)
        if ancestor_sampling:
            link = np.asarray(
                model.transition_logpdf(theta, particles[t - 1], np.broadcast_to(ref[t], (m,))),
                dtype=float,
            )
            hist = lw + link
            if log_sum_exp(hist) == -math.inf:
                raise FilterCollapse(t + 1)
            anc[0] = multinomial_resample(hist, 1, rng)[0]
        else:
            anc[0] = 0
        x = np.empty_like(particles[t - 1])
        if m > 1:
            x[1:] = model.transition_sample(theta, particles[t - 1][anc[1:]], rng)
        x[0] = ref[t]
        lw = np.asarray(model.emission_logpdf(theta, x, obs[t]), dtype=float)
        loglik += _check_row(lw, t + 1)
        particles[t] = x
        log_weights[t] = lw
        ancestors[t - 1] = anc
    return ParticleSystem(particles, log_weights, ancestors, float(loglik))


def estimate_loglik_variance(model, theta, y, m: int, replicates: int, rng: RngStream) -> float:
    """Sample variance of the log-likelihood estimate over independent runs."""
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    values = np.empty(replicates)
    for i in range(replicates):
        values[i] = bootstrap_filter(model, theta, y, m, rng.child(i).generator()).loglik_hat
    return float(np.var(values, ddof=1))


def save_particle_system(path, ps: ParticleSystem) -> None:
    """Dump a particle system as CSV rows (t, m, x, logw, ancestor).

    Times, particle indices, and ancestors are written 1-based to match the
    usual notation; the ancestor of a time-1 particle is written as 0.
    """
    lines = ["t,m,x,logw,ancestor"]
    for t in range(ps.n_steps):
        for j in range(ps.n_particles):
            parent = 0 if t == 0 else int(ps.ancestors[t - 1, j]) + 1
            lines.append(
                f"{t + 1},{j + 1},{ps.particles[t, j]:.17g},{ps.log_weights[t, j]:.17g},{parent}"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
