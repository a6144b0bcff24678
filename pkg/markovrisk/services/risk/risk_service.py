"""
Prediction and estimation risk.

Exact risks enumerate every x^n in lexicographic order (tiny instances only);
Monte Carlo risks average independent restarts, each drawn on its own
(seed, trial) substream so results do not depend on how trials are split
across workers.
"""

import itertools
import logging
import math
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from markovrisk.services.divergence.divergence_service import (
    DivergenceSpec,
    evaluate,
    evaluate_rows,
)
from markovrisk.services.markov.estimator_service import EstimatorSpec
from markovrisk.services.markov.markov_service import (
    MarkovChain,
    SampleSequence,
    burn_in as trim_burn_in,
    sample_sequence,
    sequence_probability,
    stationary_distribution,
    trial_rng,
)
from markovrisk.services.utility.errors import EnumerationBudgetError, ValidationError
from markovrisk.services.utility.logger import log_with_context

logger = logging.getLogger(__name__)

PREDICTION = "prediction"
ESTIMATION_MAX = "estimation_max"
ESTIMATION_WEIGHTED = "estimation_weighted"
BAYES_ROW = "bayes_row"
RISK_MODES = (PREDICTION, ESTIMATION_MAX, ESTIMATION_WEIGHTED, BAYES_ROW)

_MODE_ALIASES = {
    "max": ESTIMATION_MAX,
    "weighted": ESTIMATION_WEIGHTED,
    ESTIMATION_MAX: ESTIMATION_MAX,
    ESTIMATION_WEIGHTED: ESTIMATION_WEIGHTED,
}

Predictor = Union[EstimatorSpec, Callable]
Estimator = Union[EstimatorSpec, Callable]
SeedKeys = Union[int, Tuple[int, ...]]


# ============================================================================
# RESULT TYPE
# ============================================================================


@dataclass(frozen=True)
class RiskEstimate:
    """A risk value with its Monte Carlo uncertainty (zero when exact)."""

    value: float
    stderr: float
    trials: int
    mode: str
    exact: bool
    per_state: Optional[Tuple[float, ...]] = None
    per_state_stderr: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.mode not in RISK_MODES:
            raise ValidationError(f"Unknown risk mode '{self.mode}'")
        if self.stderr < 0:
            raise ValidationError("stderr must be >= 0")
        if self.exact and (self.stderr != 0 or self.trials != 0):
            raise ValidationError("Exact risks carry stderr = 0 and trials = 0")


def normalize_estimation_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValidationError(f"Estimation mode must be 'max' or 'weighted', got '{mode}'")


def _predictor_fn(predictor: Predictor) -> Callable:
    return predictor.predict if isinstance(predictor, EstimatorSpec) else predictor


def _estimator_fn(estimator: Estimator) -> Callable:
    return estimator.estimate if isinstance(estimator, EstimatorSpec) else estimator


def as_array(value) -> np.ndarray:
    for attr in ("array", "probs"):
        if hasattr(value, attr):
            return getattr(value, attr)
    return np.asarray(value, dtype=float)


def seed_keys(seed: SeedKeys) -> Tuple[int, ...]:
    keys = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    if not keys or any(int(key) < 0 for key in keys):
        raise ValidationError("Seeds must be non-negative integers")
    return tuple(int(key) for key in keys)


def resolve_workers(workers: Optional[int]) -> int:
    workers = Config.RISK_WORKERS if workers is None else workers
    if not isinstance(workers, int) or workers < 1:
        raise ValidationError(f"workers must be a positive integer, got {workers!r}")
    return workers


def mean_and_stderr(losses: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along axis 0; infinite means get infinite stderr."""
    mean = losses.mean(axis=0)
    if losses.shape[0] < 2:
        return mean, np.zeros_like(mean)
    with np.errstate(invalid="ignore"):
        stderr = losses.std(axis=0, ddof=1) / math.sqrt(losses.shape[0])
    stderr = np.where(np.isfinite(mean), stderr, math.inf)
    return mean, stderr


# ============================================================================
# ENUMERATION
# ============================================================================


def _enumerate(chain: MarkovChain, n: int, budget: Optional[int]):
    """Yield (x, Pr(x)) for every x^n of positive probability, lexicographically."""
    if n < 2:
        raise ValidationError("n must be >= 2")
    budget = Config.ENUMERATION_BUDGET if budget is None else budget
    size = chain.k**n
    if size > budget:
        raise EnumerationBudgetError(
            f"Enumerating k^n = {chain.k}^{n} = {size} sequences exceeds the budget of {budget}"
        )
    for states in itertools.product(range(chain.k), repeat=n):
        x = SampleSequence(np.asarray(states, dtype=np.int64), chain.k)
        prob = sequence_probability(chain, x)
        if prob > 0:
            yield x, prob


def exact_prediction_risk(
    chain: MarkovChain,
    predictor: Predictor,
    n: int,
    spec: DivergenceSpec,
    budget: Optional[int] = None,
) -> RiskEstimate:
    """
    sum_x Pr(x) D(M(x_n, .), predictor(x)) over all x^n.

    Raises:
        EnumerationBudgetError: k^n exceeds the enumeration budget
    """
    predict = _predictor_fn(predictor)
    truth = chain.matrix.array
    total = 0.0
    for x, prob in _enumerate(chain, n, budget):
        total += prob * evaluate(spec, truth[x.last], as_array(predict(x)))
    return RiskEstimate(value=total, stderr=0.0, trials=0, mode=PREDICTION, exact=True)


def exact_estimation_risk(
    chain: MarkovChain,
    estimator: Estimator,
    n: int,
    spec: DivergenceSpec,
    mode: str = "max",
    burn_in: bool = False,
    budget: Optional[int] = None,
) -> RiskEstimate:
    """
    Per-state expected loss e_i = sum_x Pr(x) D(M(i, .), M_hat_x(i, .)),
    combined as max_i e_i or sum_i pi_i e_i.

    Raises:
        EnumerationBudgetError: k^n exceeds the enumeration budget
        ConvergenceError: weighted mode on a chain without a unique stationary law
    """
    mode = normalize_estimation_mode(mode)
    estimate = _estimator_fn(estimator)
    truth = chain.matrix.array
    per_state = np.zeros(chain.k)
    for x, prob in _enumerate(chain, n, budget):
        sample = trim_burn_in(x) if burn_in else x
        per_state = per_state + prob * evaluate_rows(spec, truth, as_array(estimate(sample)))

    value = _combine(chain, per_state, mode)
    return RiskEstimate(
        value=value,
        stderr=0.0,
        trials=0,
        mode=mode,
        exact=True,
        per_state=tuple(float(e) for e in per_state),
        per_state_stderr=tuple(0.0 for _ in per_state),
    )


def _combine(chain: MarkovChain, per_state: np.ndarray, mode: str) -> float:
    if mode == ESTIMATION_MAX:
        return float(per_state.max())
    pi = stationary_distribution(chain.matrix).probs
    return float(pi @ per_state)


# ============================================================================
# MONTE CARLO
# ============================================================================


def _prediction_chunk(task) -> np.ndarray:
    chain, predictor, n, spec, keys, trial_ids = task
    predict = _predictor_fn(predictor)
    truth = chain.matrix.array
    losses = np.empty(len(trial_ids))
    for slot, trial in enumerate(trial_ids):
        x = sample_sequence(chain, n, trial_rng(keys[0], *keys[1:], int(trial)))
        losses[slot] = evaluate(spec, truth[x.last], as_array(predict(x)))
    return losses


def _estimation_chunk(task) -> np.ndarray:
    chain, estimator, n, spec, keys, trial_ids, burn_in = task
    estimate = _estimator_fn(estimator)
    truth = chain.matrix.array
    losses = np.empty((len(trial_ids), chain.k))
    for slot, trial in enumerate(trial_ids):
        x = sample_sequence(chain, n, trial_rng(keys[0], *keys[1:], int(trial)))
        if burn_in:
            x = trim_burn_in(x)
        losses[slot] = evaluate_rows(spec, truth, as_array(estimate(x)))
    return losses


def _can_ship(task) -> bool:
    """Whether a chunk task survives the trip to a worker process."""
    try:
        pickle.dumps(task)
    except (pickle.PicklingError, AttributeError, TypeError):
        return False
    return True


def run_trials(worker: Callable, make_task: Callable, trials: int, workers: int) -> np.ndarray:
    """
    Run `trials` restarts, split into contiguous chunks over a process pool.

    Chunks are concatenated in trial order, so the result is identical for
    every worker count. Tasks holding unpicklable callables (lambdas, closures)
    run in-process.
    """
    chunks = [c for c in np.array_split(np.arange(trials), min(trials, workers * 4)) if c.size]
    tasks = [make_task(chunk) for chunk in chunks]
    if workers > 1 and len(tasks) > 1 and not _can_ship(tasks[0]):
        logger.debug("Estimator or loss cannot be pickled; running trials in-process")
        workers = 1
    if workers == 1 or len(tasks) == 1:
        results = [worker(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(worker, tasks))
    return np.concatenate(results, axis=0)


def monte_carlo_prediction_risk(
    chain: MarkovChain,
    predictor: Predictor,
    n: int,
    spec: DivergenceSpec,
    trials: int,
    seed: SeedKeys,
    workers: Optional[int] = None,
) -> RiskEstimate:
    """
    Mean of D(M(X_n, .), predictor(X^n)) over independent restarts.

    Args:
        chain: the true chain
        predictor: EstimatorSpec or callable SampleSequence -> Distribution
        n: sequence length
        spec: loss
        trials: number of restarts (>= 2)
        seed: master seed, or a tuple of substream keys
        workers: process-pool size (default Config.RISK_WORKERS)

    Returns:
        RiskEstimate: mode "prediction", stderr = sample std / sqrt(trials)
    """
    if trials < 2:
        raise ValidationError("Monte Carlo risk needs trials >= 2")
    return summarize_prediction(prediction_losses(chain, predictor, n, spec, trials, seed, workers))


def prediction_losses(
    chain: MarkovChain,
    predictor: Predictor,
    n: int,
    spec: DivergenceSpec,
    trials: int,
    seed: SeedKeys,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Per-trial prediction losses, shape (trials,)."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if n < 1:
        raise ValidationError("n must be >= 1")
    keys = seed_keys(seed)
    workers = resolve_workers(workers)
    return run_trials(
        _prediction_chunk,
        lambda ids: (chain, predictor, n, spec, keys, ids),
        trials,
        workers,
    )


def summarize_prediction(losses: np.ndarray) -> RiskEstimate:
    mean, stderr = mean_and_stderr(losses)
    if not math.isfinite(mean):
        log_with_context(logger, logging.WARNING, "Infinite prediction loss encountered")
    return RiskEstimate(
        value=float(mean),
        stderr=float(stderr),
        trials=int(losses.shape[0]),
        mode=PREDICTION,
        exact=False,
    )


def estimation_losses(
    chain: MarkovChain,
    estimator: Estimator,
    n: int,
    spec: DivergenceSpec,
    trials: int,
    seed: SeedKeys,
    burn_in: bool = False,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Per-trial, per-state losses D(M(i, .), M_hat(i, .)), shape (trials, k)."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    keys = seed_keys(seed)
    workers = resolve_workers(workers)
    return run_trials(
        _estimation_chunk,
        lambda ids: (chain, estimator, n, spec, keys, ids, burn_in),
        trials,
        workers,
    )


def summarize_estimation(
    chain: MarkovChain, losses: np.ndarray, mode: str
) -> RiskEstimate:
    """
    Reduce a (trials, k) loss table to a RiskEstimate.

    Max mode reports the argmax state's stderr; weighted mode takes the
    stderr of the per-trial pi-weighted losses.
    """
    mode = normalize_estimation_mode(mode)
    trials = losses.shape[0]
    per_state, per_state_stderr = mean_and_stderr(losses)

    if mode == ESTIMATION_MAX:
        worst = int(np.argmax(per_state))
        value, stderr = float(per_state[worst]), float(per_state_stderr[worst])
    else:
        pi = stationary_distribution(chain.matrix).probs
        weighted_mean, weighted_stderr = mean_and_stderr(losses @ pi)
        value, stderr = float(weighted_mean), float(weighted_stderr)

    if not math.isfinite(value):
        log_with_context(logger, logging.WARNING, "Infinite estimation loss encountered", k=chain.k)
    return RiskEstimate(
        value=value,
        stderr=stderr,
        trials=trials,
        mode=mode,
        exact=False,
        per_state=tuple(float(e) for e in per_state),
        per_state_stderr=tuple(float(s) for s in per_state_stderr),
    )


def monte_carlo_estimation_risk(
    chain: MarkovChain,
    estimator: Estimator,
    n: int,
    spec: DivergenceSpec,
    mode: str,
    trials: int,
    seed: SeedKeys,
    burn_in: bool = False,
    workers: Optional[int] = None,
) -> RiskEstimate:
    """
    Monte Carlo max-over-states or pi-weighted estimation risk.

    With burn_in the estimator sees X^n with its first floor(sqrt(n))
    samples removed.
    """
    if trials < 2:
        raise ValidationError("Monte Carlo risk needs trials >= 2")
    mode = normalize_estimation_mode(mode)
    losses = estimation_losses(chain, estimator, n, spec, trials, seed, burn_in, workers)
    return summarize_estimation(chain, losses, mode)
