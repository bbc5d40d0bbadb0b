"""Shared test utilities: autocorrelation-aware standard errors and small
enumeration helpers used as oracles."""
import numpy as np


def acf(x, max_lag):
    """Autocorrelations rho_0..rho_max_lag with 1/N normalization."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    ac = np.fft.irfft(f * np.conj(f))[: max_lag + 1]
    if ac[0] <= 0:
        raise ValueError("zero variance series")
    return ac / ac[0]


def iact(x, max_lag=None):
    """Integrated autocorrelation time via Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = min(n // 3, 2000)
    if np.all(x == x[0]):
        return float(n)  # a constant chain carries one draw of information
    rho = acf(x, max_lag)
    total = 1.0
    k = 1
    while k + 1 <= max_lag:
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += 2.0 * pair
        k += 2
    return float(max(total, 1.0))


def mcse_mean(x):
    """Monte Carlo standard error of the mean, IACT-adjusted."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.var(x) * iact(x) / x.size))


def enumerate_paths(k, n):
    """All k^n integer paths, ordered with x_1 as the most significant digit
    (the same order as ssmcmc.exact_hmm.path_log_joints)."""
    grids = np.meshgrid(*[np.arange(k)] * n, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def binned_tv(samples, bin_edges, bin_probs):
    """Total-variation distance between a sample histogram and exact bin
    probabilities (the bins must cover essentially all mass)."""
    counts, _ = np.histogram(samples, bins=bin_edges)
    freq = counts / samples.size
    leftover = 1.0 - freq.sum()
    return 0.5 * (np.sum(np.abs(freq - bin_probs)) + abs(leftover - (1.0 - np.sum(bin_probs))))
