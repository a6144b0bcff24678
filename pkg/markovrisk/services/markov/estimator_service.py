"""
Transition-matrix and next-state estimators.

This module provides:
- add-beta smoothing (N_ij + beta) / (N_i + k beta)
- add-sqrt(N_i)/k smoothing used for the L2 estimation analysis
- the empirical (maximum-likelihood) estimator
- the tail-run classifier and the hybrid next-state predictor, which uses a
  dedicated assignment on sequences ending in a fresh run and add-1/2 elsewhere
- EstimatorSpec: token-addressable estimators for the CLI and CSV output
"""

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from markovrisk.services.markov.markov_service import (
    Distribution,
    SampleSequence,
    TransitionCounts,
    TransitionMatrix,
    count_transitions,
)
from markovrisk.services.utility.errors import ValidationError

HYBRID_BETA = 0.5


# ============================================================================
# MATRIX ESTIMATORS
# ============================================================================


def add_beta_matrix(counts: TransitionCounts, beta: float) -> TransitionMatrix:
    """
    Add-beta estimate (N_ij + beta) / (N_i + k beta).

    Unvisited states get the uniform row; every entry is strictly positive.
    """
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta!r}")
    k = counts.k
    numerator = counts.n_ij + beta
    denominator = counts.n_i[:, None] + k * beta
    return TransitionMatrix(numerator / denominator)


def add_sqrt_matrix(counts: TransitionCounts) -> TransitionMatrix:
    """Add-sqrt(N_i)/k estimate (N_ij + sqrt(N_i)/k) / (N_i + sqrt(N_i))."""
    k = counts.k
    n_i = counts.n_i.astype(float)
    root = np.sqrt(n_i)
    estimate = np.full((k, k), 1.0 / k)
    seen = n_i > 0
    estimate[seen] = (counts.n_ij[seen] + root[seen, None] / k) / (n_i[seen] + root[seen])[:, None]
    return TransitionMatrix(estimate)


def empirical_matrix(counts: TransitionCounts) -> TransitionMatrix:
    """N_ij / N_i, uniform on rows of unvisited states."""
    k = counts.k
    estimate = np.full((k, k), 1.0 / k)
    seen = counts.n_i > 0
    estimate[seen] = counts.n_ij[seen] / counts.n_i[seen, None]
    return TransitionMatrix(estimate)


# ============================================================================
# TAIL-RUN PREDICTION
# ============================================================================


@dataclass(frozen=True)
class TailRunClassification:
    """Whether x ends in a run of l copies of a state i never seen before the run."""

    member: bool
    state: int
    run_length: int

    def __post_init__(self):
        if self.run_length < 1:
            raise ValidationError("run_length must be >= 1")


def classify_tail_run(x: SampleSequence) -> TailRunClassification:
    """
    Classify x^n against the fresh-tail-run event.

    i = x_n, l is the length of the maximal trailing run of i, and x is a
    member iff 1 <= l <= n - 1 and i does not occur in x_1..x_{n-l}.
    """
    if x.n < 2:
        raise ValidationError("Classification needs n >= 2")
    states = x.states
    state = x.last
    others = np.flatnonzero(states != state)
    if others.size == 0:
        return TailRunClassification(member=False, state=state, run_length=x.n)

    run_length = x.n - 1 - int(others[-1])
    prefix = states[: x.n - run_length]
    member = not bool(np.any(prefix == state))
    return TailRunClassification(member=member, state=state, run_length=run_length)


def tail_run_prediction(classification: TailRunClassification, n: int, k: int) -> Distribution:
    """
    Next-state prediction on a fresh tail run.

    The run state keeps 1 - 1/(l ln n) when l <= n/2 and 1 - 1/l otherwise;
    the remaining mass is split evenly over the other k - 1 states.
    """
    if not classification.member:
        raise ValidationError("Sequence does not end in a fresh tail run; use the add-1/2 path")
    if n < 3:
        raise ValidationError("Tail-run prediction needs n >= 3")
    if k < 2:
        raise ValidationError("k must be >= 2")

    run_length = classification.run_length
    if run_length <= n / 2:
        stay = 1.0 - 1.0 / (run_length * math.log(n))
    else:
        stay = 1.0 - 1.0 / run_length

    probs = np.full(k, (1.0 - stay) / (k - 1))
    probs[classification.state] = stay
    return Distribution(probs)


def hybrid_predict(x: SampleSequence, beta: float = HYBRID_BETA) -> Distribution:
    """
    Hybrid next-state predictor.

    Fresh tail runs (n >= 3) take the tail-run assignment; every other
    sequence takes row x_n of the add-beta estimate.
    """
    classification = classify_tail_run(x)
    if classification.member and x.n >= 3:
        return tail_run_prediction(classification, x.n, x.k)
    return add_beta_matrix(count_transitions(x), beta).row(x.last)


# ============================================================================
# ESTIMATOR REGISTRY
# ============================================================================


def _format_beta(beta: float) -> str:
    """Shortest text that parses back to the same float; 1.0 prints as 1."""
    text = repr(float(beta))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimator addressed by its CLI/CSV token."""

    name: str
    beta: Optional[float] = None

    @property
    def token(self) -> str:
        if self.name == "add":
            return f"add({_format_beta(self.beta)})"
        return self.name

    @property
    def prediction_only(self) -> bool:
        return self.name == "hybrid"

    def __str__(self) -> str:
        return self.token

    def estimate(self, data: Union[SampleSequence, TransitionCounts]) -> TransitionMatrix:
        """Transition-matrix estimate from a sequence or its counts."""
        if self.prediction_only:
            raise ValidationError(f"'{self.token}' only predicts the next state")
        counts = data if isinstance(data, TransitionCounts) else count_transitions(data)
        if self.name == "add":
            return add_beta_matrix(counts, self.beta)
        if self.name == "add-sqrt":
            return add_sqrt_matrix(counts)
        return empirical_matrix(counts)

    def predict(self, x: SampleSequence) -> Distribution:
        """Predicted law of X_{n+1} given x^n."""
        if self.prediction_only:
            return hybrid_predict(x, HYBRID_BETA)
        return self.estimate(x).row(x.last)


_ADD_TOKEN = re.compile(r"^add\(\s*([0-9.eE+-]+)\s*\)$")


def parse_estimator(token: str) -> EstimatorSpec:
    """Parse empirical, add(<beta>), add-sqrt or hybrid."""
    text = token.strip().lower()
    if text in ("empirical", "add-sqrt", "hybrid"):
        return EstimatorSpec(text)
    match = _ADD_TOKEN.match(text)
    if match:
        try:
            beta = float(match.group(1))
        except ValueError:
            raise ValidationError(f"Invalid beta in '{token}'")
        if not beta > 0 or not math.isfinite(beta):
            raise ValidationError(f"beta must be a positive number in '{token}'")
        return EstimatorSpec("add", beta)
    raise ValidationError(
        f"Unknown estimator '{token}' (expected empirical, add(<beta>), add-sqrt or hybrid)"
    )
