"""Shared numeric primitives: splittable RNG streams, weighted samples,
log-domain arithmetic and multinomial resampling.

Weights are carried in the log domain end-to-end; linear-domain weights are
only materialized inside resampling and normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "WeightedSample",
    "log_sum_exp",
    "normalize_weights",
    "effective_sample_size",
    "multinomial_resample",
]


@dataclass(frozen=True)
class RngStream:
    """A splittable random stream identified by a seed and an integer key path.

    Identical (seed, path) pairs yield identical draw sequences; distinct
    paths yield statistically independent streams.  Streams are cheap value
    objects: derive children with :meth:`child` and materialize a concrete
    generator with :meth:`generator` at the point where draws are consumed.
    """

    seed: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not all(isinstance(k, (int, np.integer)) and k >= 0 for k in self.path):
            raise ValueError("path keys must be non-negative integers")

    def child(self, *keys: int) -> "RngStream":
        """Return the stream at ``path + keys``."""
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        """Materialize a fresh generator for this (seed, path) pair."""
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class WeightedSample:
    """Values paired with log-weights, as produced by importance sampling.

    ``log_weights`` entries must be finite or ``-inf`` (zero weight); at
    least one entry must be finite for any operation that normalizes.
    """

    values: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        lw = np.asarray(self.log_weights, dtype=float)
        if values.shape[0] != lw.shape[0]:
            raise ValueError("values and log_weights lengths differ")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must be finite or -inf")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_weights", lw)

    def __len__(self) -> int:
        return self.log_weights.shape[0]


def log_sum_exp(log_values) -> float:
    """Return log(sum(exp(v))) without overflow.

    Accepts any non-empty sequence of reals (``-inf`` entries allowed).
    """
    arr = np.asarray(log_values, dtype=float)
    if arr.size == 0:
        raise ValueError("empty sequence")
    hi = np.max(arr)
    if hi == -np.inf:
        return -np.inf
    return float(hi + np.log(np.sum(np.exp(arr - hi))))


def _as_log_weights(ws) -> np.ndarray:
    if isinstance(ws, WeightedSample):
        return ws.log_weights
    return np.asarray(ws, dtype=float)


def normalize_weights(ws) -> np.ndarray:
    """Normalize log-weights to probabilities summing to one.

    Parameters
    ----------
    ws : WeightedSample or array-like of log-weights

    Returns
    -------
    ndarray of probabilities, in the input order.
    """
    lw = _as_log_weights(ws)
    if lw.size == 0:
        raise ValueError("empty sequence")
    hi = np.max(lw)
    if hi == -np.inf:
        raise ValueError("degenerate weights")
    w = np.exp(lw - hi)
    return w / np.sum(w)


def effective_sample_size(ws) -> float:
    """Effective sample size 1 / sum of squared normalized weights."""
    w = normalize_weights(ws)
    return float(1.0 / np.sum(w * w))


def multinomial_resample(ws, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` indices independently with the normalized weights.

    Returns an integer array of length ``count``.  Deterministic given the
    generator state.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    w = normalize_weights(ws)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = rng.random(count)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)
