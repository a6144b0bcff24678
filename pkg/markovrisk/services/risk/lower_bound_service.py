"""
Executable lower-bound constructions.

Prediction prior: k even, a = 1/n, b = 1 - (k-2)/n. Odd-labelled states keep
b - a on the diagonal; even-labelled state i moves to i - 1 with probability
p_i drawn from V_n and stays with probability b - p_i. Sequences ending in a
fresh run of i are the hard event, and the Bayes-optimal predictor and its
risk on that event have closed forms computed here.

Estimation prior: rows 1..k-1 equal p* = (pi_bar/(k-1), ..., pi_bar/(k-1), pi*);
the last row is (pi_bar p', pi*) with p' uniform on a small L-infinity ball
around the uniform law on k - 1 states.

Labels in the docstrings are 1-indexed (state 1..k); code indexes 0..k-1,
so the even-labelled states are the odd indices 1, 3, ..., k - 1.
"""

import enum
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from markovrisk.services.divergence.divergence_service import DivergenceSpec, evaluate
from markovrisk.services.markov.estimator_service import EstimatorSpec, TailRunClassification
from markovrisk.services.markov.markov_service import (
    Distribution,
    MarkovChain,
    SampleSequence,
    TransitionMatrix,
    make_rng,
    sample_sequence,
    sequence_probability,
    trial_rng,
)
from markovrisk.services.risk.risk_service import (
    BAYES_ROW,
    RiskEstimate,
    as_array,
    mean_and_stderr,
    resolve_workers,
    seed_keys,
    run_trials,
)
from markovrisk.services.utility.errors import ConvergenceError, ValidationError
from markovrisk.services.utility.logger import log_with_context

logger = logging.getLogger(__name__)

MIN_PRIOR_N = 16
REJECTION_CAP = 10**6
REJECTION_BATCH = 4096


# ============================================================================
# PREDICTION PRIOR
# ============================================================================


def build_v_n(n: int) -> Tuple[float, ...]:
    """
    V_n = {1 / (ln n)^t : 1 <= t <= floor(ln n / (2 ln ln n))}, descending.

    Raises:
        ValidationError: n < 16
    """
    if n < MIN_PRIOR_N:
        raise ValidationError(f"V_n needs n >= {MIN_PRIOR_N}, got {n}")
    log_n = math.log(n)
    top = math.floor(log_n / (2.0 * math.log(log_n)))
    if top < 1:
        raise ValidationError(f"V_n is empty for n = {n}")
    return tuple(1.0 / log_n**t for t in range(1, top + 1))


def even_states(k: int) -> Tuple[int, ...]:
    """0-based indices of the even-labelled states 2, 4, ..., k."""
    return tuple(range(1, k, 2))


@dataclass(frozen=True)
class PredictionPrior:
    """Uniform product prior over the V_n parameters of the even-labelled rows."""

    k: int
    n: int
    v_set: Tuple[float, ...]

    def __post_init__(self):
        if self.k < 2 or self.k % 2:
            raise ValidationError(f"The prediction prior needs an even k >= 2, got {self.k}")
        if self.n <= self.k:
            raise ValidationError(f"The prediction prior needs n > k, got n = {self.n}")
        if not self.v_set:
            raise ValidationError("v_set must be non-empty")
        for v in self.v_set:
            if not 0.0 < v < self.b:
                raise ValidationError(f"Every v must lie in (0, b) = (0, {self.b!r}), got {v!r}")

    @property
    def a(self) -> float:
        return 1.0 / self.n

    @property
    def b(self) -> float:
        return 1.0 - (self.k - 2) / self.n

    @classmethod
    def create(cls, k: int, n: int, v_set: Optional[Sequence[float]] = None) -> "PredictionPrior":
        """Prior over V_n, or over an explicit grid (small-n oracle checks)."""
        values = build_v_n(n) if v_set is None else tuple(float(v) for v in v_set)
        return cls(k=k, n=n, v_set=values)


def prediction_prior_chain(
    prior: PredictionPrior, p_even: Union[Mapping[int, float], Sequence[float]]
) -> MarkovChain:
    """
    The prior member M_n(p_2, ..., p_k) with the uniform initial law.

    Args:
        prior: the prediction prior
        p_even: parameter per even-labelled state, either a mapping keyed by
            0-based state index or a sequence ordered as even_states(k)

    Raises:
        ValidationError: missing states or a parameter outside v_set
    """
    states = even_states(prior.k)
    if isinstance(p_even, Mapping):
        if set(p_even) != set(states):
            raise ValidationError(f"p_even must assign exactly the states {list(states)}")
        params = [float(p_even[s]) for s in states]
    else:
        params = [float(p) for p in p_even]
        if len(params) != len(states):
            raise ValidationError(f"p_even needs {len(states)} values, got {len(params)}")

    for p in params:
        if not any(math.isclose(p, v, rel_tol=0.0, abs_tol=1e-15) for v in prior.v_set):
            raise ValidationError(f"Parameter {p!r} is not in the prior's value set")

    k, a, b = prior.k, prior.a, prior.b
    matrix = np.full((k, k), a)
    for state in range(0, k, 2):
        matrix[state, state] = b - a
    for state, p in zip(states, params):
        matrix[state, state] = b - p
        matrix[state, state - 1] = p
    return MarkovChain(Distribution.uniform(k), TransitionMatrix(matrix))


def prediction_prior_set(prior: PredictionPrior) -> list:
    """Every chain of the product prior, |v_set|^(k/2) of them."""
    count = len(even_states(prior.k))
    return [
        prediction_prior_chain(prior, params)
        for params in itertools.product(prior.v_set, repeat=count)
    ]


def tail_run_sequences(
    k: int, n: int, state: Optional[int] = None, run_length: Optional[int] = None
) -> Iterator[SampleSequence]:
    """
    Every x^n ending in a fresh run, optionally restricted to one state
    and/or one run length. Prefixes are visited in lexicographic order.
    """
    states = range(k) if state is None else (state,)
    lengths = range(1, n) if run_length is None else (run_length,)
    for i in states:
        others = [s for s in range(k) if s != i]
        for ell in lengths:
            for prefix in itertools.product(others, repeat=n - ell):
                yield SampleSequence(np.array(prefix + (i,) * ell, dtype=np.int64), k)


def bayes_bruteforce(prior_set: Sequence[MarkovChain], x: SampleSequence) -> Distribution:
    """
    Posterior-weighted mixture of next-state rows under a uniform prior.

    Raises:
        ValidationError: mixed alphabets or zero total likelihood
    """
    if not prior_set:
        raise ValidationError("prior_set must be non-empty")
    if any(chain.k != x.k for chain in prior_set):
        raise ValidationError("All chains must share the sequence's alphabet")

    weights = np.array([sequence_probability(chain, x) for chain in prior_set])
    total = weights.sum()
    if not total > 0:
        raise ValidationError("Sequence has zero probability under every chain in the prior")
    rows = np.stack([chain.matrix.array[x.last] for chain in prior_set])
    mixture = weights @ rows / total
    return Distribution(mixture / mixture.sum())


def _log_power_sums(prior: PredictionPrior, run_lengths: np.ndarray):
    """
    Log-space sums over v in v_set, one per run length l:
    A = sum (b-v)^l, B = sum (b-v)^(l-1), C = sum (b-v)^(l-1) v.
    """
    v = np.asarray(prior.v_set)
    log_stay = np.log(prior.b - v)
    exponents = (run_lengths[:, None] - 1) * log_stay[None, :]
    log_b = logsumexp(exponents, axis=1)
    log_a = logsumexp(exponents + log_stay[None, :], axis=1)
    log_c = logsumexp(exponents + np.log(v)[None, :], axis=1)
    return log_a, log_b, log_c


def bayes_closed_form(
    prior: PredictionPrior, classification: TailRunClassification
) -> Distribution:
    """
    Bayes-optimal prediction on a fresh tail run of state i.

    Even label: the posterior over p_i is proportional to (b - p_i)^(l - 1),
    so i gets sum (b-v)^l / sum (b-v)^(l-1), i - 1 gets
    sum (b-v)^(l-1) v / sum (b-v)^(l-1), and every other state gets a.
    Odd label: the row is known, b - a at i and a elsewhere.
    """
    if not classification.member:
        raise ValidationError("Closed form applies only to fresh tail runs")

    k, state = prior.k, classification.state
    probs = np.full(k, prior.a)
    if state % 2 == 0:
        probs[state] = prior.b - prior.a
        return Distribution(probs)

    log_a, log_b, log_c = _log_power_sums(prior, np.array([classification.run_length]))
    probs[state] = math.exp(log_a[0] - log_b[0])
    probs[state - 1] = math.exp(log_c[0] - log_b[0])
    return Distribution(probs)


def k_ell_probability(prior: PredictionPrior, v: float, ell: int) -> float:
    """
    Pr(X^n is a fresh run of length ell of an even-labelled state with parameter v)
    = (k-1)/k (1 - 1/n)^(n-ell-1) (1/n) (b - v)^(ell-1).
    """
    n, k = prior.n, prior.k
    if not 1 <= ell <= n - 1:
        raise ValidationError(f"ell must lie in 1..n-1, got {ell}")
    log_prob = (
        math.log((k - 1) / k)
        + (n - ell - 1) * math.log1p(-1.0 / n)
        - math.log(n)
        + (ell - 1) * math.log(prior.b - v)
    )
    return math.exp(log_prob)


def prediction_prior_partial_bayes_risk(prior: PredictionPrior) -> float:
    """
    Bayes KL risk of the optimal predictor restricted to fresh tail runs,
    averaged over the prior, with no sequence enumeration.

    Only even-labelled states contribute; each contributes the same amount,
    sum_v (1/|V|) sum_l Pr_v(fresh run of length l) KL(row_v, Bayes row l).
    """
    n, k, b = prior.n, prior.k, prior.b
    run_lengths = np.arange(1, n, dtype=float)
    log_a, log_b, log_c = _log_power_sums(prior, run_lengths)
    log_stay_hat = log_a - log_b
    log_move_hat = log_c - log_b

    total = 0.0
    for v in prior.v_set:
        log_probs = (
            math.log((k - 1) / k)
            + (n - run_lengths - 1) * math.log1p(-1.0 / n)
            - math.log(n)
            + (run_lengths - 1) * math.log(b - v)
        )
        kl = (b - v) * (math.log(b - v) - log_stay_hat) + v * (math.log(v) - log_move_hat)
        total += float(np.sum(np.exp(log_probs) * kl))

    risk = len(even_states(k)) * total / len(prior.v_set)
    log_with_context(logger, logging.DEBUG, "Partial Bayes risk computed", k=k, n=n, risk=risk)
    return max(risk, 0.0)


# ============================================================================
# ESTIMATION PRIOR
# ============================================================================


class Baseline(enum.Enum):
    ORACLE = "oracle"


# Scores the sampled chain itself
ORACLE = Baseline.ORACLE


@dataclass(frozen=True)
class EstimationPrior:
    """Single-informative-row prior over chains with minimum stationary mass pi*."""

    k: int
    n: int
    delta: float
    pi_star: float
    epsilon: float

    def __post_init__(self):
        if self.k < 3:
            raise ValidationError("The estimation prior needs k >= 3")
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if not 0.0 < self.pi_star <= 1.0 / self.k:
            raise ValidationError(f"pi_star must lie in (0, 1/k], got {self.pi_star!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValidationError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not self.radius < 1.0 / (self.k - 1):
            raise ValidationError(
                f"Ball radius {self.radius!r} must be below 1/(k-1) = {1.0 / (self.k - 1)!r}; increase n"
            )
        if not 0.0 <= self.delta <= self.min_entry:
            raise ValidationError(
                f"delta must lie in [0, {self.min_entry!r}] for the prior chains to be delta-bounded"
            )

    @property
    def n_prime(self) -> float:
        return (self.n * (1.0 + self.epsilon) * self.pi_star) ** 0.2

    @property
    def radius(self) -> float:
        return 1.0 / self.n_prime

    @property
    def pi_bar(self) -> float:
        return 1.0 - self.pi_star

    @property
    def min_entry(self) -> float:
        """Smallest entry any prior chain can have."""
        return min(self.pi_star, self.pi_bar * (1.0 / (self.k - 1) - self.radius))

    @property
    def p_star(self) -> np.ndarray:
        head = np.full(self.k - 1, self.pi_bar / (self.k - 1))
        return np.append(head, self.pi_star)


def _sample_ball(prior: EstimationPrior, rng: np.random.Generator) -> np.ndarray:
    """p' uniform on {p in simplex_{k-1} : ||p - u||_inf < r} by slab rejection."""
    m = prior.k - 1
    center, radius = 1.0 / m, prior.radius
    attempts = 0
    while attempts < REJECTION_CAP:
        batch = min(REJECTION_BATCH, REJECTION_CAP - attempts)
        free = rng.uniform(center - radius, center + radius, size=(batch, m - 1))
        last = 1.0 - free.sum(axis=1)
        accepted = np.flatnonzero(np.abs(last - center) < radius)
        if accepted.size:
            row = accepted[0]
            return np.append(free[row], last[row])
        attempts += batch
    raise ConvergenceError(f"Rejection sampling found no point in the ball after {REJECTION_CAP} draws")


def estimation_prior_chain(prior: EstimationPrior, p_prime: np.ndarray) -> MarkovChain:
    """M_n(p') with initial law p*."""
    p_prime = np.asarray(p_prime, dtype=float)
    if p_prime.shape != (prior.k - 1,):
        raise ValidationError(f"p' must have k - 1 = {prior.k - 1} entries")
    p_star = prior.p_star
    matrix = np.tile(p_star, (prior.k, 1))
    matrix[-1, :-1] = prior.pi_bar * p_prime
    return MarkovChain(Distribution(p_star), TransitionMatrix(matrix))


def estimation_prior_sample(prior: EstimationPrior, seed) -> MarkovChain:
    """Draw one prior chain."""
    rng = make_rng(seed)
    return estimation_prior_chain(prior, _sample_ball(prior, rng))


def estimation_prior_stationary(prior: EstimationPrior, p_prime: np.ndarray) -> Distribution:
    """
    Stationary law of M_n(p'): the last column is constant, so pi_k = pi*
    exactly, and pi_j = pi_bar (pi_bar/(k-1) + pi* p'_j) for j < k.
    """
    p_prime = np.asarray(p_prime, dtype=float)
    pi_bar = prior.pi_bar
    head = pi_bar * (pi_bar / (prior.k - 1) + prior.pi_star * p_prime)
    return Distribution(np.append(head, prior.pi_star))


def _bayes_gap_chunk(task) -> np.ndarray:
    prior, estimator, spec, keys, trial_ids = task
    losses = np.empty(len(trial_ids))
    for slot, trial in enumerate(trial_ids):
        rng = trial_rng(keys[0], *keys[1:], int(trial))
        chain = estimation_prior_sample(prior, rng)
        x = sample_sequence(chain, prior.n, rng)
        truth = chain.matrix.array
        if estimator is ORACLE:
            estimate = truth
        elif isinstance(estimator, EstimatorSpec):
            estimate = estimator.estimate(x).array
        else:
            estimate = as_array(estimator(x))
        losses[slot] = evaluate(spec, truth[-1], estimate[-1])
    return losses


def estimation_prior_bayes_gap(
    prior: EstimationPrior,
    estimator,
    spec: DivergenceSpec,
    trials: int,
    seed,
    workers: Optional[int] = None,
) -> RiskEstimate:
    """
    Prior-averaged loss of an estimator on the informative last row.

    Each trial draws a chain from the prior and a sequence of length n from
    it. Pass ORACLE to score the true chain.
    """
    if trials < 2:
        raise ValidationError("Monte Carlo risk needs trials >= 2")
    keys = seed_keys(seed)
    workers = resolve_workers(workers)
    losses = run_trials(
        _bayes_gap_chunk,
        lambda ids: (prior, estimator, spec, keys, ids),
        trials,
        workers,
    )
    mean, stderr = mean_and_stderr(losses)
    log_with_context(
        logger, logging.INFO, "Estimation prior risk", k=prior.k, n=prior.n, value=float(mean)
    )
    return RiskEstimate(
        value=float(mean), stderr=float(stderr), trials=trials, mode=BAYES_ROW, exact=False
    )
