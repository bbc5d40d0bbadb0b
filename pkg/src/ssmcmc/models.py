"""Concrete state-space models: stochastic volatility and discrete HMMs.

Both models sit behind the same small contract (simulate, initial/transition/
emission log-densities, tractability flags) so the particle and MCMC code
never needs to know which model it is running on.

Conventions: HMM states and observation symbols are integers 0..K-1 / 0..S-1
internally; file serialization uses 1-based states and, for the DNA model,
the characters A/C/G/T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SVParams",
    "SVPrior",
    "HMMParams",
    "SVModel",
    "HMMModel",
    "sv_simulate",
    "sv_obs_logdensity",
    "sv_transition_logdensity",
    "sv_initial_logdensity",
    "dna_params",
    "hmm_simulate",
    "stationary_distribution",
    "save_sv_series",
    "load_sv_series",
    "save_dna_series",
    "load_dna_series",
    "DNA_ALPHABET",
]

DNA_ALPHABET = "ACGT"

_LOG_2PI = math.log(2.0 * math.pi)

_ATOL = 1e-12


@dataclass(frozen=True)
class SVParams:
    """Stochastic volatility parameters (observation scale, AR coefficient,
    innovation standard deviation)."""

    beta: float
    phi: float
    sigma: float

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not abs(self.phi) < 1:
            raise ValueError("phi must lie in (-1, 1)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (1.0 - self.phi**2)


@dataclass(frozen=True)
class SVPrior:
    """Priors for the SV parameters.

    (phi+1)/2 ~ Beta(a, b), sigma^2 ~ s0 * inverse-chi-squared with p degrees
    of freedom, and the scale prior is the fixed improper p(beta) ∝ 1/beta.
    """

    a: float = 1.0
    b: float = 1.0
    s0: float = 0.2
    p: float = 5.0

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.s0, self.p) <= 0:
            raise ValueError("prior hyperparameters must be positive")


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix."""
    p = np.asarray(transition, dtype=float)
    k = p.shape[0]
    a = np.vstack([p.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class HMMParams:
    """Discrete HMM: K x K transition matrix, K x S emission matrix over
    integer symbols, and an initial distribution (stationary by default)."""

    transition: np.ndarray
    emissions: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.transition, dtype=float)
        e = np.asarray(self.emissions, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > _ATOL):
            raise ValueError("transition rows must be probability vectors")
        if e.ndim != 2 or e.shape[0] != p.shape[0]:
            raise ValueError("need one emission row per state")
        if np.any(e < 0) or np.any(np.abs(e.sum(axis=1) - 1.0) > _ATOL):
            raise ValueError("emission rows must be probability vectors")
        if self.initial is None:
            pi = stationary_distribution(p)
        else:
            pi = np.asarray(self.initial, dtype=float)
            if pi.shape != (p.shape[0],) or np.any(pi < 0) or abs(pi.sum() - 1.0) > _ATOL:
                raise ValueError("initial must be a length-K probability vector")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "emissions", e)
        object.__setattr__(self, "initial", pi)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emissions.shape[1]


def dna_params(alpha: float, beta_sep: float) -> HMMParams:
    """Two-state DNA HMM: switching probability ``alpha`` and emission
    separation ``beta_sep``.

    State 0 favours A/C, state 1 favours G/T; ``beta_sep`` = 0 would make the
    states indistinguishable and 1/4 would make the emissions degenerate, so
    both endpoints are excluded.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 < beta_sep < 0.25:
        raise ValueError("beta_sep must lie in (0, 1/4)")
    transition = np.array([[1.0 - alpha, alpha], [alpha, 1.0 - alpha]])
    base = np.full(4, 0.25)
    sep = beta_sep * np.array([1.0, 1.0, -1.0, -1.0])
    emissions = np.vstack([base + sep, base - sep])
    return HMMParams(transition, emissions, np.array([0.5, 0.5]))


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def sv_obs_logdensity(x, y, params: SVParams):
    """Log density of an observation: N(y; 0, beta^2 e^x).  Vectorized."""
    x = np.asarray(x, dtype=float)
    var = params.beta**2 * np.exp(x)
    return _norm_logpdf(np.asarray(y, dtype=float), 0.0, var)


def sv_transition_logdensity(x_prev, x, params: SVParams):
    """Log density of a state transition: N(x; phi x_prev, sigma^2)."""
    return _norm_logpdf(
        np.asarray(x, dtype=float), params.phi * np.asarray(x_prev, dtype=float), params.sigma**2
    )


def sv_initial_logdensity(x, params: SVParams):
    """Log density of the stationary initial state N(0, sigma^2/(1-phi^2))."""
    return _norm_logpdf(np.asarray(x, dtype=float), 0.0, params.stationary_var)


def sv_simulate(params: SVParams, n: int, rng: np.random.Generator):
    """Simulate ``n`` steps of the SV model.

    Returns (states, observations) as float arrays; the first state is drawn
    from the stationary normal.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = np.empty(n)
    x[0] = rng.normal(0.0, math.sqrt(params.stationary_var))
    noise = rng.normal(0.0, params.sigma, size=n - 1)
    for t in range(1, n):
        x[t] = params.phi * x[t - 1] + noise[t - 1]
    y = rng.normal(0.0, params.beta * np.exp(x / 2.0))
    return x, y


def _categorical_rows(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a matrix of probability vectors."""
    cdf = np.cumsum(prob_rows, axis=1)
    u = rng.random(prob_rows.shape[0])
    idx = np.sum(cdf < u[:, None], axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1).astype(np.int64)


def hmm_simulate(params: HMMParams, n: int, rng: np.random.Generator):
    """Simulate ``n`` steps of the HMM; returns integer (states, symbols)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = np.empty(n, dtype=np.int64)
    x[0] = _categorical_rows(params.initial[None, :], rng)[0]
    for t in range(1, n):
        x[t] = _categorical_rows(params.transition[x[t - 1]][None, :], rng)[0]
    y = _categorical_rows(params.emissions[x], rng)
    return x, y


class SVModel:
    """SV model behind the shared state-space contract."""

    has_transition_density = True
    has_emission_density = True

    def simulate(self, theta: SVParams, n: int, rng: np.random.Generator):
        return sv_simulate(theta, n, rng)

    def initial_sample(self, theta: SVParams, size: int, rng: np.random.Generator):
        return rng.normal(0.0, math.sqrt(theta.stationary_var), size=size)

    def transition_sample(self, theta: SVParams, x_prev, rng: np.random.Generator):
        x_prev = np.asarray(x_prev, dtype=float)
        return theta.phi * x_prev + rng.normal(0.0, theta.sigma, size=x_prev.shape)

    def initial_logpdf(self, theta: SVParams, x):
        return sv_initial_logdensity(x, theta)

    def transition_logpdf(self, theta: SVParams, x_prev, x):
        return sv_transition_logdensity(x_prev, x, theta)

    def emission_logpdf(self, theta: SVParams, x, y):
        return sv_obs_logdensity(x, y, theta)


class HMMModel:
    """Discrete HMM behind the shared state-space contract.

    States are integer arrays; ``theta`` is an :class:`HMMParams`.
    """

    has_transition_density = True
    has_emission_density = True

    def simulate(self, theta: HMMParams, n: int, rng: np.random.Generator):
        return hmm_simulate(theta, n, rng)

    def initial_sample(self, theta: HMMParams, size: int, rng: np.random.Generator):
        rows = np.broadcast_to(theta.initial, (size, theta.n_states))
        return _categorical_rows(rows, rng)

    def transition_sample(self, theta: HMMParams, x_prev, rng: np.random.Generator):
        x_prev = np.asarray(x_prev, dtype=np.int64)
        return _categorical_rows(theta.transition[x_prev], rng)

    def initial_logpdf(self, theta: HMMParams, x):
        with np.errstate(divide="ignore"):
            return np.log(theta.initial[np.asarray(x, dtype=np.int64)])

    def transition_logpdf(self, theta: HMMParams, x_prev, x):
        i = np.asarray(x_prev, dtype=np.int64)
        j = np.asarray(x, dtype=np.int64)
        with np.errstate(divide="ignore"):
            return np.log(theta.transition[i, j])

    def emission_logpdf(self, theta: HMMParams, x, y):
        k = np.asarray(x, dtype=np.int64)
        with np.errstate(divide="ignore"):
            return np.log(theta.emissions[k, int(y)])


def _write_rows(path, header_lines, columns, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_rows(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    return rows[0], rows[1:]


def save_sv_series(path, x, y, header_lines=()) -> None:
    """Write an SV series as CSV with columns time,x,y (time is 1-based)."""
    rows = (
        (str(t + 1), format(float(xv), ".17g"), format(float(yv), ".17g"))
        for t, (xv, yv) in enumerate(zip(x, y))
    )
    _write_rows(path, header_lines, ("time", "x", "y"), rows)


def load_sv_series(path):
    header, rows = _read_rows(path)
    if header != ["time", "x", "y"]:
        raise ValueError("expected columns time,x,y")
    x = np.array([float(r[1]) for r in rows])
    y = np.array([float(r[2]) for r in rows])
    return x, y


def save_dna_series(path, states, symbols, header_lines=()) -> None:
    """Write a DNA HMM series: states as 1-based integers, symbols as A/C/G/T."""
    rows = (
        (str(t + 1), str(int(s) + 1), DNA_ALPHABET[int(c)])
        for t, (s, c) in enumerate(zip(states, symbols))
    )
    _write_rows(path, header_lines, ("time", "x", "y"), rows)


def load_dna_series(path):
    header, rows = _read_rows(path)
    if header != ["time", "x", "y"]:
        raise ValueError("expected columns time,x,y")
    states = np.array([int(r[1]) - 1 for r in rows], dtype=np.int64)
    symbols = np.array([DNA_ALPHABET.index(r[2]) for r in rows], dtype=np.int64)
    return states, symbols
