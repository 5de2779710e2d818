"""Probability vectors, type approximation and constant-composition sampling.

Random streams are numpy ``Generator`` objects on the PCG64 bit generator,
seeded explicitly; the seed is stored with every experiment record.
"""
from dataclasses import dataclass

import numpy as np

from .errors import (
    DivisionByZeroProbability,
    InfeasibleApproximation,
    InvalidComposition,
)

SIMPLEX_TOL = 1e-12


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def check_simplex(p, tol=SIMPLEX_TOL):
    """Return ``p`` as a float array, raising if it is not a distribution."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be 1-D and non-empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True, eq=False)
class TypeApproximation:
    """Integer composition ``counts`` of a length-``N`` sequence."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or not np.issubdtype(counts.dtype, np.integer):
            raise InvalidComposition("counts must be a 1-D integer array")
        if np.any(counts < 1):
            raise InvalidComposition("every symbol needs at least one occurrence")
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def N(self):
        return int(self.counts.sum())

    @property
    def M(self):
        return self.counts.size

    @property
    def q(self):
        return self.counts / self.N


def total_variation(p, counts, N):
    return float(np.abs(np.asarray(p) - np.asarray(counts) / N).sum())


def approximate_vd(p, N):
    """Composition of N with every n_m >= 1 minimizing sum |p_m - n_m/N|.

    Greedy on the separable convex objective: start at max(1, floor(p N)),
    then add units where the residual p_m - n_m/N is largest, or remove them
    (never below 1) where it is most negative. Ties go to the lowest index.
    """
    p = np.asarray(p, dtype=float)
    M = p.size
    N = int(N)
    if N < M:
        raise InfeasibleApproximation(f"N={N} cannot give each of {M} symbols a count >= 1")
    n = np.maximum(1, np.floor(p * N)).astype(np.int64)
    total = int(n.sum())
    while total < N:
        r = p - n / N
        k = int(np.argmax(r))
        n[k] += 1
        total += 1
    while total > N:
        r = n / N - p
        r[n <= 1] = -np.inf
        k = int(np.argmax(r))
        n[k] -= 1
        total -= 1
    return TypeApproximation(n)


def weights_from(p, q):
    q = np.asarray(q, dtype=float)
    if np.any(q == 0):
        raise DivisionByZeroProbability("sampling probability q_m = 0")
    return np.asarray(p, dtype=float) / q


def probs_from(w, q):
    q = np.asarray(q, dtype=float)
    if np.any(q == 0):
        raise DivisionByZeroProbability("sampling probability q_m = 0")
    return np.asarray(w, dtype=float) * q


def draw_batch(t, rng):
    """Uniformly random ordering of the multiset with symbol m exactly n_m times."""
    return rng.permutation(np.repeat(np.arange(t.M), t.counts))


def random_dirichlet(M, rng):
    p = rng.dirichlet(np.ones(M))
    return p / p.sum()
