"""State-updating kernels with the parameters held fixed.

Single-site Gibbs for the discrete HMM, single-site and block independence
samplers for the SV model (Gaussian proposals from quadratic expansions of
the emission terms), and block schedules.

Time indices in this module are 1-based, matching the (t, s) interval
notation used throughout; trajectories and observation arrays remain plain
0-based numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import HMMParams, SVParams

__all__ = [
    "GaussianProposal",
    "GaussianChainProposal",
    "BlockSchedule",
    "EmissionSite",
    "sv_emission_site",
    "gaussian_emission_site",
    "hmm_full_conditional",
    "hmm_single_site_sweep",
    "sv_single_site_proposal",
    "sv_single_site_update",
    "sv_single_site_sweep",
    "sv_block_proposal",
    "sv_block_update",
    "sv_block_sweep",
    "block_schedule",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


@dataclass(frozen=True)
class GaussianProposal:
    """Scalar normal proposal."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    def logpdf(self, x: float) -> float:
        return float(_norm_logpdf(x, self.mean, self.variance))

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(self.mean, math.sqrt(self.variance)))


@dataclass(frozen=True)
class EmissionSite:
    """Handles on one emission term, as the block machinery needs them.

    ``logpdf(x, y)`` is the exact emission log-density.  ``expand(x_hat, y)``
    returns (linear, precision) of the quadratic expansion of the emission
    log-density about ``x_hat``, written as linear*x - precision*x^2/2 plus a
    constant.
    """

    logpdf: Callable
    expand: Callable


def sv_emission_site(params: SVParams) -> EmissionSite:
    """Quadratic handles for the SV emission N(y; 0, beta^2 e^x)."""
    beta2 = params.beta**2

    def logpdf(x, y):
        var = beta2 * np.exp(np.asarray(x, dtype=float))
        return _norm_logpdf(y, 0.0, var)

    def expand(x_hat, y):
        c = y * y / (2.0 * beta2) * math.exp(-x_hat)
        return (c - 0.5) + c * x_hat, c

    return EmissionSite(logpdf, expand)


def gaussian_emission_site(obs_var: float) -> EmissionSite:
    """Handles for the linear-Gaussian emission N(y; x, obs_var); the
    expansion is exact, so block proposals built from it are exact too."""

    def logpdf(x, y):
        return _norm_logpdf(y, np.asarray(x, dtype=float), obs_var)

    def expand(x_hat, y):
        return y / obs_var, 1.0 / obs_var

    return EmissionSite(logpdf, expand)


def _categorical_unnorm(weights: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def hmm_full_conditional(t: int, traj, y, hmm: HMMParams) -> np.ndarray:
    """Exact full conditional of X_t given its neighbours and y_t; O(K)."""
    traj = np.asarray(traj, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if not 1 <= t <= n:
        raise ValueError("t out of range")
    i = t - 1
    w = hmm.emissions[:, y[i]].copy()
    if i > 0:
        w *= hmm.transition[traj[i - 1], :]
    else:
        w *= hmm.initial
    if i < n - 1:
        w *= hmm.transition[:, traj[i + 1]]
    total = w.sum()
    if total <= 0.0:
        raise ValueError("impossible configuration")
    return w / total


def hmm_single_site_sweep(traj, y, hmm: HMMParams, rng: np.random.Generator) -> np.ndarray:
    """One Gibbs sweep resampling x_1, ..., x_n in order.  Returns a new
    trajectory; every site draw is from the exact full conditional."""
    x = np.asarray(traj, dtype=np.int64).copy()
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    emis = hmm.emissions
    trans = hmm.transition
    for i in range(n):
        w = emis[:, y[i]].copy()
        if i > 0:
            w *= trans[x[i - 1], :]
        else:
            w *= hmm.initial
        if i < n - 1:
            w *= trans[:, x[i + 1]]
        total = w.sum()
        if total <= 0.0:
            raise ValueError("impossible configuration")
        x[i] = _categorical_unnorm(w, rng)
    return x


def _sv_local_prior(i: int, x: np.ndarray, params: SVParams) -> tuple[float, float]:
    """Mean and variance of p(x_i | neighbours) under the AR prior, using
    0-based position i.  Reduces to N(phi x_2, sigma^2) style endpoint forms
    at the boundaries (the stationary initial makes the t=1 case exact)."""
    n = x.shape[0]
    phi = params.phi
    s2 = params.sigma**2
    if n == 1:
        return 0.0, params.stationary_var
    if i == 0:
        return phi * x[1], s2
    if i == n - 1:
        return phi * x[n - 2], s2
    return phi * (x[i - 1] + x[i + 1]) / (1.0 + phi**2), s2 / (1.0 + phi**2)


def sv_single_site_proposal(t: int, traj, y, params: SVParams) -> GaussianProposal:
    """Normal proposal for x_t from the quadratic expansion of the exact
    conditional about the prior-conditional mean.

    Interior sites use mu_t = phi (x_{t-1} + x_{t+1}) / (1 + phi^2) and
    tau^2 = sigma^2 / (1 + phi^2); the endpoints condition on their single
    neighbour only.
    """
    x = np.asarray(traj, dtype=float)
    mu, tau2 = _sv_local_prior(t - 1, x, params)
    y_t = float(np.asarray(y, dtype=float)[t - 1])
    c = y_t * y_t / (2.0 * params.beta**2) * math.exp(-mu)
    var = 1.0 / (1.0 / tau2 + c)
    mean = mu + var * (c - 0.5)
    return GaussianProposal(mean, var)


def _sv_site_log_target(value: float, mu: float, tau2: float, y_t: float, params: SVParams) -> float:
    # exact conditional of one site, up to the normalizing constant
    return (
        -((value - mu) ** 2) / (2.0 * tau2)
        - 0.5 * value
        - y_t * y_t / (2.0 * params.beta**2) * math.exp(-value)
    )


def sv_single_site_update(
    t: int, traj, y, params: SVParams, rng: np.random.Generator
) -> tuple[float, bool]:
    """Independence-sampler move for x_t against its exact conditional.

    Returns (new value, accepted); the trajectory is not mutated.
    """
    x = np.asarray(traj, dtype=float)
    i = t - 1
    mu, tau2 = _sv_local_prior(i, x, params)
    y_t = float(np.asarray(y, dtype=float)[i])
    prop = sv_single_site_proposal(t, x, y, params)
    cand = prop.sample(rng)
    log_ratio = (
        _sv_site_log_target(cand, mu, tau2, y_t, params)
        - _sv_site_log_target(x[i], mu, tau2, y_t, params)
        - prop.logpdf(cand)
        + prop.logpdf(x[i])
    )
    if math.log(rng.random()) < log_ratio:
        return cand, True
    return float(x[i]), False


def sv_single_site_sweep(
    traj, y, params: SVParams, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Sweep the single-site sampler over t = 1..n; returns the new
    trajectory and the number of accepted moves."""
    x = np.asarray(traj, dtype=float).copy()
    n = x.shape[0]
    n_accepted = 0
    for t in range(1, n + 1):
        x[t - 1], ok = sv_single_site_update(t, x, y, params, rng)
        n_accepted += ok
    return x, n_accepted


class GaussianChainProposal:
    """Gaussian Markov-chain proposal over a block x_{t:s}, stored in
    factored form (filtered means/variances plus the AR backward kernels).

    Sampling runs backwards from the endpoint; the log-density of any block
    vector is the sum of the same one-dimensional conditionals.  The site
    potentials actually used are kept on the object (``site_linear``,
    ``site_precision``) so oracles can rebuild the dense system.
    """

    def __init__(self, filt_mean, filt_var, params: SVParams, x_next, site_linear, site_precision):
        self.filt_mean = np.asarray(filt_mean, dtype=float)
        self.filt_var = np.asarray(filt_var, dtype=float)
        self.phi = params.phi
        self.sigma2 = params.sigma**2
        self.x_next = x_next
        self.site_linear = np.asarray(site_linear, dtype=float)
        self.site_precision = np.asarray(site_precision, dtype=float)

    def __len__(self) -> int:
        return self.filt_mean.shape[0]

    def _backward_moments(self, j: int, value_next: float) -> tuple[float, float]:
        prec = 1.0 / self.filt_var[j] + self.phi**2 / self.sigma2
        var = 1.0 / prec
        mean = var * (self.filt_mean[j] / self.filt_var[j] + self.phi * value_next / self.sigma2)
        return mean, var

    def _terminal_moments(self) -> tuple[float, float]:
        j = len(self) - 1
        if self.x_next is None:
            return self.filt_mean[j], self.filt_var[j]
        return self._backward_moments(j, self.x_next)

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Draw a block and return it with its exact log-density."""
        length = len(self)
        x = np.empty(length)
        mean, var = self._terminal_moments()
        x[-1] = rng.normal(mean, math.sqrt(var))
        logq = float(_norm_logpdf(x[-1], mean, var))
        for j in range(length - 2, -1, -1):
            mean, var = self._backward_moments(j, x[j + 1])
            x[j] = rng.normal(mean, math.sqrt(var))
            logq += float(_norm_logpdf(x[j], mean, var))
        return x, logq

    def logpdf(self, block) -> float:
        block = np.asarray(block, dtype=float)
        mean, var = self._terminal_moments()
        logq = float(_norm_logpdf(block[-1], mean, var))
        for j in range(len(self) - 2, -1, -1):
            mean, var = self._backward_moments(j, block[j + 1])
            logq += float(_norm_logpdf(block[j], mean, var))
        return logq

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Smoothed per-site means and variances of the proposal."""
        length = len(self)
        sm = np.empty(length)
        sv = np.empty(length)
        sm[-1], sv[-1] = self._terminal_moments()
        for j in range(length - 2, -1, -1):
            pred_var = self.phi**2 * self.filt_var[j] + self.sigma2
            gain = self.filt_var[j] * self.phi / pred_var
            sm[j] = self.filt_mean[j] + gain * (sm[j + 1] - self.phi * self.filt_mean[j])
            sv[j] = self.filt_var[j] + gain**2 * (sv[j + 1] - pred_var)
        return sm, sv


def _build_chain(
    x_prev, x_next, x_hat, ys, params: SVParams, site: EmissionSite
) -> GaussianChainProposal:
    phi = params.phi
    s2 = params.sigma**2
    length = ys.shape[0]
    lin = np.empty(length)
    prec = np.empty(length)
    for j in range(length):
        a, p = site.expand(float(x_hat[j]), float(ys[j]))
        if p < 0.0:
            # non-concave expansion: drop the whole pseudo-observation
            a, p = 0.0, 0.0
        lin[j] = a
        prec[j] = p
    fm = np.empty(length)
    fv = np.empty(length)
    for j in range(length):
        if j == 0:
            if x_prev is None:
                pm, pv = 0.0, params.stationary_var
            else:
                pm, pv = phi * x_prev, s2
        else:
            pm, pv = phi * fm[j - 1], phi**2 * fv[j - 1] + s2
        post_prec = 1.0 / pv + prec[j]
        fv[j] = 1.0 / post_prec
        fm[j] = fv[j] * (pm / pv + lin[j])
    return GaussianChainProposal(fm, fv, params, x_next, lin, prec)


def sv_block_proposal(
    t: int,
    s: int,
    traj,
    y,
    params: SVParams,
    refine_iters: int = 2,
    site: EmissionSite | None = None,
) -> GaussianChainProposal:
    """Gaussian chain proposal for the block x_{t:s} given its neighbours.

    The expansion point starts at the mean of the conditioned AR bridge
    p(x_{t:s} | x_{t-1}, x_{s+1}) and is refined ``refine_iters`` times by
    re-expanding about the previous proposal mean.  Boundary blocks simply
    drop the missing endpoint conditioning.
    """
    x = np.asarray(traj, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if not (1 <= t <= s <= n):
        raise ValueError("block indices out of range")
    if refine_iters < 0:
        raise ValueError("refine_iters must be non-negative")
    if site is None:
        site = sv_emission_site(params)
    x_prev = float(x[t - 2]) if t > 1 else None
    x_next = float(x[s]) if s < n else None
    ys = y[t - 1 : s]

    zero = np.zeros(s - t + 1)
    flat = EmissionSite(logpdf=None, expand=lambda x_hat, y_j: (0.0, 0.0))
    x_hat, _ = _build_chain(x_prev, x_next, zero, ys, params, flat).marginals()
    for _ in range(refine_iters):
        chain = _build_chain(x_prev, x_next, x_hat, ys, params, site)
        x_hat, _ = chain.marginals()
    return _build_chain(x_prev, x_next, x_hat, ys, params, site)


def _block_log_target(
    block: np.ndarray, x_prev, x_next, ys, params: SVParams, site: EmissionSite
) -> float:
    phi = params.phi
    s2 = params.sigma**2
    if x_prev is None:
        total = float(_norm_logpdf(block[0], 0.0, params.stationary_var))
    else:
        total = float(_norm_logpdf(block[0], phi * x_prev, s2))
    if block.shape[0] > 1:
        total += float(np.sum(_norm_logpdf(block[1:], phi * block[:-1], s2)))
    if x_next is not None:
        total += float(_norm_logpdf(x_next, phi * block[-1], s2))
    total += float(np.sum(site.logpdf(block, ys)))
    return total


def sv_block_update(
    t: int,
    s: int,
    traj,
    y,
    params: SVParams,
    rng: np.random.Generator,
    refine_iters: int = 2,
    site: EmissionSite | None = None,
) -> tuple[np.ndarray, bool, float]:
    """Independence MH move on the block x_{t:s}.

    Returns (block values, accepted, log acceptance ratio); the trajectory
    itself is not mutated.
    """
    if site is None:
        site = sv_emission_site(params)
    x = np.asarray(traj, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    x_prev = float(x[t - 2]) if t > 1 else None
    x_next = float(x[s]) if s < n else None
    ys = y[t - 1 : s]
    current = x[t - 1 : s].copy()

    prop = sv_block_proposal(t, s, x, y, params, refine_iters, site)
    cand, logq_cand = prop.sample(rng)
    logq_cur = prop.logpdf(current)
    log_ratio = (
        _block_log_target(cand, x_prev, x_next, ys, params, site)
        - _block_log_target(current, x_prev, x_next, ys, params, site)
        - logq_cand
        + logq_cur
    )
    if math.log(rng.random()) < log_ratio:
        return cand, True, log_ratio
    return current, False, log_ratio


def sv_block_sweep(
    traj,
    y,
    params: SVParams,
    schedule: "BlockSchedule",
    rng: np.random.Generator,
    refine_iters: int = 2,
    site: EmissionSite | None = None,
) -> tuple[np.ndarray, list[bool]]:
    """Apply block updates over a schedule in order; returns the new
    trajectory and the per-block acceptance flags."""
    x = np.asarray(traj, dtype=float).copy()
    flags = []
    for t, s in schedule.intervals:
        block, ok, _ = sv_block_update(t, s, x, y, params, rng, refine_iters, site)
        x[t - 1 : s] = block
        flags.append(ok)
    return x, flags


@dataclass(frozen=True)
class BlockSchedule:
    """An ordered list of 1-based inclusive (t, s) intervals covering 1..n."""

    n: int
    intervals: tuple[tuple[int, int], ...]
    scheme: str

    def __post_init__(self) -> None:
        covered = np.zeros(self.n, dtype=bool)
        for t, s in self.intervals:
            if not (1 <= t <= s <= self.n):
                raise ValueError("interval out of range")
            covered[t - 1 : s] = True
        if not covered.all():
            raise ValueError("schedule must cover every time index")


def block_schedule(
    n: int, scheme: str, size: int, rng: np.random.Generator | None = None
) -> BlockSchedule:
    """Build a block schedule for one sweep.

    fixed: consecutive disjoint blocks of the given size.
    random: the same, shifted by a uniform random offset in 0..size-1 (the
      short leading block keeps coverage); a fresh offset per call.
    overlapping: blocks of the given size at stride size // 2.
    """
    if not 1 <= size <= n:
        raise ValueError("size out of range")
    intervals: list[tuple[int, int]] = []
    if scheme == "fixed":
        start = 1
        while start <= n:
            intervals.append((start, min(start + size - 1, n)))
            start += size
    elif scheme == "random":
        if rng is None:
            raise ValueError("random scheme needs an rng")
        offset = int(rng.integers(size))
        if offset > 0:
            intervals.append((1, offset))
        start = offset + 1
        while start <= n:
            intervals.append((start, min(start + size - 1, n)))
            start += size
    elif scheme == "overlapping":
        stride = max(size // 2, 1)
        start = 1
        while True:
            end = start + size - 1
            if end >= n:
                intervals.append((start, n))
                break
            intervals.append((start, end))
            start += stride
    else:
        raise ValueError(f"unknown scheme: {scheme}")
    return BlockSchedule(n, tuple(intervals), scheme)
