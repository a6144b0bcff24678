"""Minimax bound formulas and concentration constants."""

import math
from fractions import Fraction

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError
from scipy.stats import binom

from markovrisk.services.markov.markov_service import (
    count_transitions,
    random_chain,
    sample_sequence,
    stationary_distribution,
    trial_rng,
)
from markovrisk.services.theory.theory_service import (
    RISK_NAMES,
    BoundQuery,
    binomial_tail,
    bound,
    bound_pair,
    c_delta,
    concentration_tail,
    moment_bound,
)
from markovrisk.services.utility.errors import ValidationError

K_GRID = [2, 3, 4, 6, 12, 24, 36]
N_GRID = [10**3, 10**4, 10**5, 10**6]


def query(risk, side="upper", k=6, n=10**5, **extra):
    return BoundQuery(k=k, n=n, risk=risk, side=side, **extra)


def floors(risk):
    """Class parameters the formula reads; 0.01 keeps delta < 1/k for k <= 36."""
    if risk in ("prediction_kl", "iid_kl"):
        return {}
    return {"pi_star": 0.01}


# ============================================================================
# FORMULA VALUES
# ============================================================================


def test_prediction_bounds():
    assert bound(query("prediction_kl", "lower")) == pytest.approx(1.1236e-5, rel=1e-4)
    assert bound(query("prediction_kl", "upper")) == pytest.approx(1.7593e-3, rel=1e-4)


def test_adjusted_prediction_constant():
    plain = bound(query("prediction_kl"))
    assert bound(query("prediction_kl"), adjust_prediction=True) == pytest.approx(plain / 4)
    lower = query("prediction_kl", "lower")
    assert bound(lower, adjust_prediction=True) == bound(lower)


def test_estimation_f_upper_kl():
    assert bound(query("estimation_f", delta=0.05)) == pytest.approx(5e-4)


def test_estimation_f_lower_hellinger():
    value = bound(query("estimation_f", "lower", delta=0.05, curvature=0.5))
    assert value == pytest.approx(0.95 * 4 * 0.5 / (2 * 10**5 * 0.05))


def test_pi_star_takes_precedence_over_delta():
    both = bound(query("estimation_l2", delta=0.05, pi_star=0.1))
    assert both == bound(query("estimation_l2", pi_star=0.1))
    assert both == pytest.approx((1 - 1 / 6) / (10**5 * 0.1))


def test_weighted_bounds():
    assert bound(query("estimation_l2_weighted")) == pytest.approx(5e-5)
    assert bound(query("estimation_f_weighted", curvature=2.0)) == pytest.approx(5 * 6 * 2 / (2 * 10**5))


def test_iid_kl():
    assert bound(query("iid_kl")) == pytest.approx(2.5e-5)


@pytest.mark.parametrize("risk", ["estimation_f", "estimation_l2"])
def test_class_parameter_required(risk):
    with pytest.raises(ValidationError):
        bound(query(risk))


def test_weighted_lower_needs_class_parameter():
    with pytest.raises(ValidationError):
        bound(query("estimation_f_weighted", "lower"))


def test_query_rejects_out_of_range_parameters():
    with pytest.raises(PydanticValidationError):
        query("estimation_f", delta=0.2)
    with pytest.raises(PydanticValidationError):
        query("estimation_f", pi_star=0.5)
    with pytest.raises(PydanticValidationError):
        query("estimation_f", curvature=0.0)
    with pytest.raises(PydanticValidationError):
        BoundQuery(k=6, n=10**5, risk="estimation_f", delta=0.05, extra=1)
    with pytest.raises(PydanticValidationError):
        BoundQuery(k=6, n=2)


# ============================================================================
# SHAPE OF THE BOUNDS
# ============================================================================


@pytest.mark.parametrize("risk", RISK_NAMES)
def test_upper_dominates_lower(risk):
    for k in K_GRID:
        for n in N_GRID:
            lower, upper = bound_pair(query(risk, k=k, n=n, **floors(risk)))
            assert upper >= lower


@pytest.mark.parametrize("risk", RISK_NAMES)
@pytest.mark.parametrize("side", ["lower", "upper"])
def test_bounds_positive_and_decreasing_in_n(risk, side):
    for k in K_GRID[1:]:
        values = [bound(query(risk, side, k=k, n=n, **floors(risk))) for n in N_GRID]
        assert all(value > 0 for value in values)
        assert all(a > b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("risk", RISK_NAMES)
@pytest.mark.parametrize("side", ["lower", "upper"])
def test_bounds_increasing_in_k(risk, side):
    for n in N_GRID:
        values = [bound(query(risk, side, k=k, n=n, **floors(risk))) for k in K_GRID]
        assert all(a <= b for a, b in zip(values, values[1:]))


# ============================================================================
# CONCENTRATION
# ============================================================================


def test_c_delta_values():
    assert c_delta(0.5) == 3
    assert c_delta(0.1) == 15


def test_c_delta_nonincreasing():
    values = [c_delta(delta) for delta in np.linspace(0.01, 0.5, 50)]
    assert all(a >= b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
def test_c_delta_range(delta):
    with pytest.raises(ValidationError):
        c_delta(delta)


def test_concentration_tail_is_capped():
    assert concentration_tail(100, 0.5, 0.0) == 1.0
    assert concentration_tail(100, 0.5, 50.0) == 1.0


def test_concentration_tail_in_unit_interval():
    for t in np.linspace(0, 5000, 51):
        assert 0.0 <= concentration_tail(5000, 0.1, float(t)) <= 1.0
    assert concentration_tail(5000, 0.1, 10000.0) < 1e-3


def test_moment_bound_value():
    assert moment_bound(2, 100, 0.5) == pytest.approx(26280.0)


def test_moment_bound_increasing_in_m():
    values = [moment_bound(m, 100, 0.5) for m in range(1, 7)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_binomial_tail_values():
    assert binomial_tail(100, 0.5, 0.2) == pytest.approx(0.51342, abs=1e-5)
    assert binomial_tail(100, 0.0, 0.2) == 1.0


def test_binomial_tail_dominates_exact_tail():
    for m in range(1, 31):
        for p in ("0.1", "0.25", "0.5", "0.75", "0.9"):
            for eps in ("0.1", "0.3", "0.5", "0.9"):
                threshold = math.ceil((1 + Fraction(eps)) * m * Fraction(p))
                exact = binom.sf(threshold - 1, m, float(p))
                assert exact <= binomial_tail(m, float(p), float(eps)) + 1e-15


@pytest.mark.parametrize("eps", [0.0, 1.0])
def test_binomial_tail_epsilon_range(eps):
    with pytest.raises(ValidationError):
        binomial_tail(10, 0.5, eps)


def visit_deviations(k, delta, n, trials, seed):
    """|N_i - (n-1) pi_i| per trial and state on fresh random chains."""
    deviations = np.empty((trials, k))
    for trial in range(trials):
        chain = random_chain(k, delta, trial_rng(seed, trial, 0))
        pi = stationary_distribution(chain.matrix).probs
        counts = count_transitions(sample_sequence(chain, n, trial_rng(seed, trial, 1)))
        deviations[trial] = np.abs(counts.n_i - (n - 1) * pi)
    return deviations


def test_empirical_tail_below_concentration_bound():
    k, delta, n = 4, 0.1, 5000
    deviations = visit_deviations(k, delta, n, trials=500, seed=13)
    for t in np.linspace(0, 1500, 31):
        assert np.mean(deviations > t, axis=0).max() <= concentration_tail(n, delta, float(t))


def test_empirical_second_moment_below_bound():
    k, delta, n = 4, 0.1, 5000
    deviations = visit_deviations(k, delta, n, trials=500, seed=14)
    assert np.mean(deviations**2, axis=0).max() <= moment_bound(2, n, delta)
