"""
Core Markov chain objects and their dynamics.

This module provides:
- Immutable value types: Distribution, TransitionMatrix, MarkovChain,
  SampleSequence and TransitionCounts (validated on construction)
- Seeded sampling on Philox substreams keyed by (master_seed, trial, ...)
- Transition counting, marginals, stationary law, hitting-time pmf
- Random delta-clamped chains and sqrt(n) burn-in trimming

States are 0-indexed inside the library. Everything that leaves the process
(CSV, CLI, HTTP) labels states 1..k.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from markovrisk.services.utility.errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


# ============================================================================
# VALUE TYPES
# ============================================================================


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability vector over k >= 2 states."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 1 or probs.size < 2:
            raise ValidationError(
                f"Distribution needs a vector of at least 2 entries, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValidationError("Distribution entries must be finite and >= 0")
        total = float(probs.sum())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValidationError(f"Distribution must sum to 1, sums to {total!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, state: int) -> float:
        return float(self.probs[state])

    def __len__(self) -> int:
        return self.k

    @classmethod
    def uniform(cls, k: int) -> "Distribution":
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def point_mass(cls, k: int, state: int) -> "Distribution":
        probs = np.zeros(k)
        probs[state] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic k x k matrix; row i is the law of the next state given i."""

    array: np.ndarray

    def __post_init__(self):
        array = _frozen(self.array)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ValidationError(f"Transition matrix must be square, got shape {array.shape}")
        if array.shape[0] < 2:
            raise ValidationError("Transition matrix needs k >= 2 states")
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise ValidationError("Transition matrix entries must be finite and >= 0")
        row_sums = array.sum(axis=1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > SUM_TOLERANCE:
            raise ValidationError(f"Every row must sum to 1 (worst deviation {worst!r})")
        object.__setattr__(self, "array", array)

    @property
    def k(self) -> int:
        return int(self.array.shape[0])

    def row(self, state: int) -> Distribution:
        return Distribution(self.array[state])

    @property
    def rows(self) -> tuple:
        return tuple(self.row(i) for i in range(self.k))

    @property
    def min_entry(self) -> float:
        return float(self.array.min())

    @classmethod
    def from_rows(cls, rows: Iterable) -> "TransitionMatrix":
        return cls(np.stack([np.asarray(getattr(r, "probs", r), dtype=float) for r in rows]))


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Initial law mu plus transition matrix M."""

    mu: Distribution
    matrix: TransitionMatrix

    def __post_init__(self):
        if self.mu.k != self.matrix.k:
            raise ValidationError(
                f"Initial law has {self.mu.k} states but the matrix has {self.matrix.k}"
            )

    @property
    def k(self) -> int:
        return self.matrix.k


@dataclass(frozen=True, eq=False)
class SampleSequence:
    """A path X_1..X_n of 0-indexed states over an alphabet of size k."""

    states: np.ndarray
    k: int

    def __post_init__(self):
        states = _frozen(self.states, dtype=np.int64)
        if states.ndim != 1 or states.size < 1:
            raise ValidationError("A sample sequence needs at least one state")
        if self.k < 2:
            raise ValidationError("Alphabet size k must be >= 2")
        if states.min() < 0 or states.max() >= self.k:
            raise ValidationError(f"States must lie in 0..{self.k - 1}")
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return int(self.states.size)

    @property
    def last(self) -> int:
        return int(self.states[-1])

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_labels(cls, labels: Iterable[int], k: int) -> "SampleSequence":
        """Build from 1-indexed external labels."""
        return cls(np.asarray(list(labels), dtype=np.int64) - 1, k)

    def labels(self) -> list:
        """The path as 1-indexed external labels."""
        return [int(s) + 1 for s in self.states]


@dataclass(frozen=True, eq=False)
class TransitionCounts:
    """N_i (visits to i in X^{n-1}) and N_ij (j right after i)."""

    n_i: np.ndarray
    n_ij: np.ndarray

    def __post_init__(self):
        n_i = _frozen(self.n_i, dtype=np.int64)
        n_ij = _frozen(self.n_ij, dtype=np.int64)
        k = n_i.size
        if n_ij.shape != (k, k):
            raise ValidationError("n_ij must be k x k with k = len(n_i)")
        if np.any(n_i < 0) or np.any(n_ij < 0):
            raise ValidationError("Counts must be non-negative")
        if not np.array_equal(n_ij.sum(axis=1), n_i):
            raise ValidationError("Row sums of n_ij must equal n_i")
        object.__setattr__(self, "n_i", n_i)
        object.__setattr__(self, "n_ij", n_ij)

    @property
    def k(self) -> int:
        return int(self.n_i.size)

    @property
    def transitions(self) -> int:
        """Total number of observed transitions, n - 1."""
        return int(self.n_i.sum())


# ============================================================================
# RANDOMNESS
# ============================================================================


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Counter-based Philox generator from an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if isinstance(seed, (int, np.integer)) and seed >= 0:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    raise ValidationError(f"Seed must be a non-negative integer, got {seed!r}")


def trial_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Substream for (master_seed, keys...); independent of how trials are scheduled."""
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def dirichlet_flat(rng: np.random.Generator, k: int) -> np.ndarray:
    """Flat Dirichlet draw: k unit exponentials, normalized."""
    draws = rng.standard_exponential(k)
    return draws / draws.sum()


# ============================================================================
# OPERATIONS
# ============================================================================


def _closed_classes(m: np.ndarray, labels: np.ndarray) -> int:
    """Number of communicating classes with no positive transition leaving them."""
    src, dst = np.nonzero(m > 0)
    leaking = np.unique(labels[src][labels[src] != labels[dst]])
    return int(np.unique(labels).size - leaking.size)


def stationary_distribution(
    matrix: TransitionMatrix, tol: float = 1e-12, max_iters: int = 10**6
) -> Distribution:
    """
    Stationary law by power iteration on the row action pi -> pi M.

    Args:
        matrix: transition matrix
        tol: stop once ||pi M - pi||_1 <= tol
        max_iters: iteration cap

    Returns:
        Distribution: pi with ||pi M - pi||_1 <= tol

    Raises:
        ConvergenceError: more than one closed class, or no convergence within max_iters
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")

    m = matrix.array
    _, labels = connected_components(csr_matrix(m > 0), directed=True, connection="strong")
    closed = _closed_classes(m, labels)
    if closed != 1:
        raise ConvergenceError(
            f"Chain has {closed} closed communicating classes; stationary law is not unique"
        )

    pi = np.full(matrix.k, 1.0 / matrix.k)
    for iteration in range(1, max_iters + 1):
        nxt = pi @ m
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual <= tol:
            logger.debug(f"Power iteration converged after {iteration} steps")
            return Distribution(pi / pi.sum())

    raise ConvergenceError(
        f"Power iteration did not reach tol={tol} within {max_iters} steps (periodic chain?)"
    )


def sample_sequence(chain: MarkovChain, n: int, seed: SeedLike) -> SampleSequence:
    """
    Draw X^n from the chain: X_1 ~ mu, X_{t+1} ~ M(X_t, .).

    All uniforms are drawn up front, so the path is a deterministic function
    of the seed.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")

    rng = make_rng(seed)
    k = chain.k
    first = int(min(np.searchsorted(np.cumsum(chain.mu.probs), rng.random(), side="right"), k - 1))
    if n == 1:
        return SampleSequence(np.array([first]), k)

    uniforms = rng.random(n - 1)
    cumulative = np.cumsum(chain.matrix.array, axis=1)
    # jumps[s][t]: the state reached at step t when leaving s
    jumps = np.minimum(
        np.stack([np.searchsorted(row, uniforms, side="right") for row in cumulative]),
        k - 1,
    ).tolist()

    states = [first]
    state = first
    for t in range(n - 1):
        state = jumps[state][t]
        states.append(state)
    return SampleSequence(np.asarray(states, dtype=np.int64), k)


def count_transitions(x: SampleSequence) -> TransitionCounts:
    """Tally N_i over positions 1..n-1 and N_ij over adjacent pairs."""
    if x.n < 2:
        raise ValidationError("Counting transitions needs n >= 2")
    k = x.k
    codes = x.states[:-1] * k + x.states[1:]
    n_ij = np.bincount(codes, minlength=k * k).reshape(k, k)
    return TransitionCounts(n_ij.sum(axis=1), n_ij)


def marginal_distribution(chain: MarkovChain, t: int) -> Distribution:
    """Law of X_t: mu M^{t-1} by repeated vector-matrix products."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    p = chain.mu.probs.copy()
    m = chain.matrix.array
    for _ in range(t - 1):
        p = p @ m
    return Distribution(p / p.sum())


def hitting_time_pmf(chain: MarkovChain, start: int, target: int, horizon: int) -> np.ndarray:
    """
    Exact Pr_start(tau(target) = t) for t = 0..horizon (entry 0 is always 0).

    Dynamic programming on the taboo chain: propagate the mass that has not
    yet visited `target`, record the inflow into `target`, then remove it.
    """
    k = chain.k
    if not (0 <= start < k and 0 <= target < k):
        raise ValidationError(f"States must lie in 0..{k - 1}")
    if start == target:
        raise ValidationError("start and target must differ")
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")

    m = chain.matrix.array
    pmf = np.zeros(horizon + 1)
    mass = np.zeros(k)
    mass[start] = 1.0
    for t in range(1, horizon + 1):
        mass = mass @ m
        pmf[t] = mass[target]
        mass[target] = 0.0
    return pmf


def clamp_matrix(m_prime: Union[TransitionMatrix, np.ndarray], delta: float) -> TransitionMatrix:
    """M = M'(1 - k delta) + delta J: every entry >= delta, rows still stochastic."""
    array = m_prime.array if isinstance(m_prime, TransitionMatrix) else np.asarray(m_prime, float)
    k = array.shape[0]
    if not 0 <= delta < 1.0 / k:
        raise ValidationError(f"delta must lie in [0, 1/k) = [0, {1.0 / k!r}), got {delta!r}")
    return TransitionMatrix(array * (1.0 - k * delta) + delta)


def random_chain(k: int, delta: float, seed: SeedLike) -> MarkovChain:
    """
    Random chain following the experiment protocol.

    mu and every row of M' are flat-Dirichlet draws; the matrix is then
    clamped so that each entry is at least delta.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    if not 0 <= delta < 1.0 / k:
        raise ValidationError(
            f"delta must lie in [0, 1/k); the delta-class is trivial for delta >= 1/k (got {delta!r})"
        )
    rng = make_rng(seed)
    mu = Distribution(dirichlet_flat(rng, k))
    m_prime = np.stack([dirichlet_flat(rng, k) for _ in range(k)])
    return MarkovChain(mu, clamp_matrix(m_prime, delta))


def burn_in(x: SampleSequence) -> SampleSequence:
    """Drop the first floor(sqrt(n)) samples."""
    if x.n < 4:
        raise ValidationError("Burn-in needs n >= 4")
    dropped = math.isqrt(x.n)
    if x.n - dropped < 2:
        raise ValidationError("Burn-in would leave fewer than 2 samples")
    return SampleSequence(x.states[dropped:], x.k)


def sequence_probability(chain: MarkovChain, x: SampleSequence) -> float:
    """Pr(X^n = x) = mu(x_1) prod_t M(x_t, x_{t+1})."""
    states = x.states
    prob = chain.mu.probs[states[0]]
    if x.n > 1:
        prob = prob * np.prod(chain.matrix.array[states[:-1], states[1:]])
    return float(prob)


def l1_distance(p: Distribution, q: Distribution) -> float:
    return float(np.abs(p.probs - q.probs).sum())


def mixing_bound(delta: float, t: int) -> float:
    """L1(P^t, pi) <= 2 (1 - delta)^(t - 1) for chains with every entry >= delta."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    return 2.0 * (1.0 - delta) ** (t - 1)


def mixing_time(chain: MarkovChain, threshold: float = 0.5, max_t: int = 10**5) -> int:
    """Smallest t with L1(P^t, pi) < threshold."""
    pi = stationary_distribution(chain.matrix).probs
    p = chain.mu.probs.copy()
    m = chain.matrix.array
    for t in range(1, max_t + 1):
        if float(np.abs(p - pi).sum()) < threshold:
            return t
        p = p @ m
    raise ConvergenceError(f"L1 distance stayed above {threshold} for {max_t} steps")


def empirical_frequencies(x: SampleSequence, upto: Optional[int] = None) -> np.ndarray:
    """Visit frequencies of each state among the first `upto` positions."""
    states = x.states if upto is None else x.states[:upto]
    return np.bincount(states, minlength=x.k) / states.size
