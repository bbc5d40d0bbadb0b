"""Mixing and accuracy summaries for MCMC output.

The central carrier is :class:`ChainTrace`: one row per iteration holding the
parameter vector (natural scale), the log posterior value used by the chain,
an accepted flag, and optionally the latent path. All statistics here are
pure functions of a trace or of plain arrays, and traces round-trip through
CSV exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__

__all__ = [
    "ChainTrace",
    "save_chain_trace",
    "load_chain_trace",
    "lag1_acf",
    "hamming",
    "state_mse",
    "acceptance_rate",
    "max_run_length",
    "update_rate_per_time",
]


@dataclass(frozen=True)
class ChainTrace:
    """Per-iteration record of an MCMC run.

    Parameters
    ----------
    theta_names : tuple of str
        Column names for the parameter vector, in storage order.
    thetas : ndarray, shape (n, d)
        Parameter values on the natural (reporting) scale.
    log_post : ndarray, shape (n,)
        Log posterior (or log posterior estimate) of the recorded state.
    accepted : ndarray, shape (n,)
        1 where the move at that iteration was accepted, else 0.
    paths : ndarray, shape (n, T), optional
        Latent path recorded at each iteration, when the sampler carries one.
    seed, config_hash, burn_in
        Run metadata. ``burn_in`` rows are dropped by :meth:`retained`.
    """

    theta_names: tuple
    thetas: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    paths: np.ndarray | None = None
    seed: int | None = None
    config_hash: str | None = None
    burn_in: int = 0

    def __post_init__(self) -> None:
        names = tuple(str(s) for s in self.theta_names)
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        log_post = np.asarray(self.log_post, dtype=float)
        accepted = np.asarray(self.accepted, dtype=np.int64)
        n = thetas.shape[0]
        if thetas.shape[1] != len(names):
            raise ValueError("theta_names does not match theta columns")
        if log_post.shape != (n,) or accepted.shape != (n,):
            raise ValueError("column lengths differ")
        paths = self.paths
        if paths is not None:
            paths = np.asarray(paths, dtype=float)
            if paths.ndim != 2 or paths.shape[0] != n:
                raise ValueError("paths must have one row per iteration")
        if not 0 <= self.burn_in <= n:
            raise ValueError("burn_in outside the trace")
        object.__setattr__(self, "theta_names", names)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "log_post", log_post)
        object.__setattr__(self, "accepted", accepted)
        object.__setattr__(self, "paths", paths)

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def component(self, name: str) -> np.ndarray:
        """Full series of one parameter component."""
        if name not in self.theta_names:
            raise ValueError(f"unknown component {name!r}")
        return self.thetas[:, self.theta_names.index(name)]

    def retained(self, name: str) -> np.ndarray:
        """Post burn-in series of one parameter component."""
        return self.component(name)[self.burn_in :]

    @property
    def retained_thetas(self) -> np.ndarray:
        return self.thetas[self.burn_in :]


def save_chain_trace(path, trace: ChainTrace, path_stride: int = 1) -> None:
    """Write a trace as CSV.

    Floats are written with ``%.17g`` so numeric columns survive a round
    trip bit for bit. With ``path_stride`` > 1 only every stride-th path
    column is kept (the first is always included); statistics recomputed
    from such a file refer to the subsampled path.
    """
    if path_stride < 1:
        raise ValueError("path_stride must be at least 1")
    cols = ["iteration"] + list(trace.theta_names) + ["log_post_hat", "accepted"]
    path_idx = []
    if trace.paths is not None:
        path_idx = list(range(0, trace.paths.shape[1], path_stride))
        cols += [f"x_{j + 1}" for j in path_idx]
    lines = []
    lines.append("# ssmcmc chain trace")
    lines.append(f"# version: {__version__}")
    if trace.seed is not None:
        lines.append(f"# seed: {trace.seed}")
    if trace.config_hash is not None:
        lines.append(f"# config_hash: {trace.config_hash}")
    lines.append(f"# burn_in: {trace.burn_in}")
    lines.append(f"# theta: {','.join(trace.theta_names)}")
    if trace.paths is not None:
        lines.append(f"# path_stride: {path_stride}")
    lines.append(",".join(cols))
    for i in range(len(trace)):
        row = [str(i)]
        row += [f"{v:.17g}" for v in trace.thetas[i]]
        row.append(f"{trace.log_post[i]:.17g}")
        row.append(str(int(trace.accepted[i])))
        if trace.paths is not None:
            row += [f"{trace.paths[i, j]:.17g}" for j in path_idx]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_chain_trace(path) -> ChainTrace:
    """Read a trace written by :func:`save_chain_trace`."""
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None:
        raise ValueError("no header row")
    names = tuple(meta.get("theta", "").split(",")) if meta.get("theta") else ()
    d = len(names)
    if any(len(r) != len(header) for r in rows):
        raise ValueError("ragged rows")
    data = np.asarray([[float(v) for v in r] for r in rows], dtype=float)
    data = data.reshape(len(rows), len(header))
    idx = data[:, 0].astype(np.int64)
    if np.any(idx != np.arange(len(rows))):
        raise ValueError("iteration indices must be contiguous from 0")
    thetas = data[:, 1 : 1 + d]
    log_post = data[:, 1 + d]
    accepted = data[:, 2 + d].astype(np.int64)
    paths = data[:, 3 + d :] if data.shape[1] > 3 + d else None
    seed = int(meta["seed"]) if "seed" in meta else None
    return ChainTrace(
        theta_names=names,
        thetas=thetas,
        log_post=log_post,
        accepted=accepted,
        paths=paths,
        seed=seed,
        config_hash=meta.get("config_hash"),
        burn_in=int(meta.get("burn_in", 0)),
    )


def lag1_acf(series) -> float:
    """Lag-1 autocorrelation with the biased (1/N) covariance normalization.

    Raises for series shorter than 3 or with zero variance; the estimate
    always lies in [-1, 1].
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one dimensional")
    if x.size < 3:
        raise ValueError("need at least 3 values")
    a = x - x.mean()
    c0 = float(np.dot(a, a)) / x.size
    if c0 == 0.0:
        raise ValueError("zero variance")
    c1 = float(np.dot(a[:-1], a[1:])) / x.size
    return c1 / c0


def hamming(a, b) -> int:
    """Number of positions at which two paths differ."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    return int(np.count_nonzero(a != b))


def state_mse(traj, truth) -> float:
    """Mean squared error between a sampled path and a reference path."""
    a = np.asarray(traj, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    return float(np.mean((a - b) ** 2))


def acceptance_rate(trace: ChainTrace) -> float:
    """Fraction of iterations whose move was accepted."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    return float(np.mean(trace.accepted))


def max_run_length(trace: ChainTrace) -> int:
    """Length of the longest run of identical consecutive parameter rows."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    best = 1
    run = 1
    for i in range(1, len(trace)):
        if np.array_equal(trace.thetas[i], trace.thetas[i - 1]):
            run += 1
            best = max(best, run)
        else:
            run = 1
    return best


def update_rate_per_time(paths) -> np.ndarray:
    """Per time index, the fraction of iterations at which x_t changed.

    ``paths`` holds one path per row; rates compare each row with the one
    before it, so at least two rows are required.
    """
    p = np.asarray(paths)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ValueError("need at least two path rows")
    return np.mean(p[1:] != p[:-1], axis=0)
