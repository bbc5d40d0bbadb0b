"""Exact inference for discrete HMMs.

Forward filtering with per-step normalizers, exact backward simulation from
the path posterior, a brute-force path-enumeration oracle, and the
independence proposal that reuses one filter pass at a fixed parameter point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import log_sum_exp
from .models import HMMParams

__all__ = [
    "FilterBank",
    "forward_filter",
    "brute_force_loglik",
    "path_log_joints",
    "path_log_joint",
    "backward_sample",
    "backward_path_logdensity",
    "fb_independence_update",
]


@dataclass(frozen=True)
class FilterBank:
    """Filtering densities and per-step normalizers from one forward pass.

    ``filt[t, k]`` is Pr(X_t = k | y_{1:t}); ``log_increments[t]`` is
    log p(y_t | y_{1:t-1}).  Immutable, so a single bank can be shared
    across chains.
    """

    filt: np.ndarray
    log_increments: np.ndarray

    @property
    def loglik(self) -> float:
        return float(np.sum(self.log_increments))

    def __len__(self) -> int:
        return self.filt.shape[0]


def forward_filter(hmm: HMMParams, y) -> FilterBank:
    """Run the forward recursion; O(n K^2).

    Raises ValueError if some observation has zero probability under every
    reachable state.
    """
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty observation sequence")
    k = hmm.n_states
    filt = np.empty((n, k))
    log_increments = np.empty(n)
    pred = hmm.initial
    for t in range(n):
        if t > 0:
            pred = filt[t - 1] @ hmm.transition
        unnorm = pred * hmm.emissions[:, y[t]]
        norm = unnorm.sum()
        if norm <= 0.0:
            raise ValueError(f"impossible observation at time {t + 1}")
        filt[t] = unnorm / norm
        log_increments[t] = np.log(norm)
    return FilterBank(filt, log_increments)


def path_log_joints(hmm: HMMParams, y) -> np.ndarray:
    """Log joint density log p(x_{1:n}, y_{1:n}) for every one of the K^n
    paths, enumerated with x_1 as the most significant digit.

    This is the brute-force oracle behind :func:`brute_force_loglik`; it
    never normalizes or marginalizes until the caller does.
    """
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    k = hmm.n_states
    if k**n > 10**7:
        raise ValueError("instance too large for enumeration")
    with np.errstate(divide="ignore"):
        log_p = np.log(hmm.transition)
        log_e = np.log(hmm.emissions)
        log_pi = np.log(hmm.initial)
    vals = log_pi + log_e[:, y[0]]
    last = np.arange(k)
    for t in range(1, n):
        vals = (vals[:, None] + log_p[last] + log_e[:, y[t]][None, :]).ravel()
        last = np.tile(np.arange(k), last.shape[0])
    return vals


def brute_force_loglik(hmm: HMMParams, y) -> float:
    """Exact log-likelihood by explicit summation over all K^n paths."""
    return log_sum_exp(path_log_joints(hmm, y))


def path_log_joint(hmm: HMMParams, y, path) -> float:
    """Log joint density of one (path, observations) pair."""
    path = np.asarray(path, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    with np.errstate(divide="ignore"):
        total = np.log(hmm.initial[path[0]])
        total += np.sum(np.log(hmm.transition[path[:-1], path[1:]]))
        total += np.sum(np.log(hmm.emissions[path, y]))
    return float(total)


def _categorical(weights: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def _backward_draw(fb: FilterBank, hmm: HMMParams, rng: np.random.Generator):
    """Sample a path from the backward kernels; also return its log density."""
    n = len(fb)
    path = np.empty(n, dtype=np.int64)
    logq = 0.0
    w = fb.filt[n - 1]
    path[n - 1] = _categorical(w, rng)
    logq += np.log(w[path[n - 1]] / w.sum())
    for t in range(n - 2, -1, -1):
        w = fb.filt[t] * hmm.transition[:, path[t + 1]]
        path[t] = _categorical(w, rng)
        logq += np.log(w[path[t]] / w.sum())
    return path, float(logq)


def backward_sample(fb: FilterBank, hmm: HMMParams, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from p(x_{1:n} | y_{1:n}); O(n K)."""
    path, _ = _backward_draw(fb, hmm, rng)
    return path


def backward_path_logdensity(fb: FilterBank, hmm: HMMParams, path) -> float:
    """Log p(path | y_{1:n}) evaluated through the backward kernels of
    ``fb`` (the same factorization backward_sample draws from)."""
    path = np.asarray(path, dtype=np.int64)
    n = len(fb)
    w = fb.filt[n - 1]
    with np.errstate(divide="ignore"):
        logq = np.log(w[path[n - 1]] / w.sum())
        for t in range(n - 2, -1, -1):
            w = fb.filt[t] * hmm.transition[:, path[t + 1]]
            total = w.sum()
            if total <= 0.0:
                return -np.inf
            logq += np.log(w[path[t]] / total)
    return float(logq)


def fb_independence_update(
    current,
    theta: HMMParams,
    theta_hat: HMMParams,
    fb_hat: FilterBank,
    y,
    rng: np.random.Generator,
):
    """One move of the independence sampler that proposes whole paths from
    p(x | y, theta_hat) and corrects toward p(x | y, theta).

    ``fb_hat`` must be the filter bank computed at ``theta_hat``; it is
    computed once and reused across moves.  The proposal's own log density
    comes from the draw itself, so only the current path's density is
    evaluated per move.  Returns (path, accepted).
    """
    current = np.asarray(current, dtype=np.int64)
    proposal, logq_prop = _backward_draw(fb_hat, theta_hat, rng)
    logq_cur = backward_path_logdensity(fb_hat, theta_hat, current)
    log_ratio = (
        path_log_joint(theta, y, proposal)
        + logq_cur
        - path_log_joint(theta, y, current)
        - logq_prop
    )
    if np.log(rng.random()) < log_ratio:
        return proposal, True
    return current.copy(), False
