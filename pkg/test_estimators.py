"""Transition-matrix estimators and the hybrid next-state predictor."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markovrisk.services.markov.estimator_service import (
    EstimatorSpec,
    add_beta_matrix,
    add_sqrt_matrix,
    classify_tail_run,
    empirical_matrix,
    hybrid_predict,
    parse_estimator,
    tail_run_prediction,
)
from markovrisk.services.markov.markov_service import (
    SampleSequence,
    TransitionCounts,
    count_transitions,
)
from markovrisk.services.utility.errors import ValidationError


def counts_from(n_ij):
    n_ij = np.asarray(n_ij)
    return TransitionCounts(n_ij.sum(axis=1), n_ij)


def seq(*labels, k):
    return SampleSequence.from_labels(labels, k=k)


count_tables = st.integers(2, 5).flatmap(
    lambda k: st.lists(
        st.lists(st.integers(0, 50), min_size=k, max_size=k), min_size=k, max_size=k
    )
)


# ============================================================================
# MATRIX ESTIMATORS
# ============================================================================


def test_add_beta_without_data_is_uniform():
    estimate = add_beta_matrix(counts_from(np.zeros((3, 3), dtype=int)), beta=1.0)
    np.testing.assert_allclose(estimate.array, np.full((3, 3), 1 / 3))


def test_add_half_row():
    estimate = add_beta_matrix(counts_from([[2, 0], [0, 0]]), beta=0.5)
    np.testing.assert_allclose(estimate.row(0).probs, [5 / 6, 1 / 6])


def test_add_beta_needs_positive_beta():
    with pytest.raises(ValidationError):
        add_beta_matrix(counts_from([[1, 0], [0, 1]]), beta=0.0)


@given(count_tables, st.floats(0.01, 5.0))
def test_add_beta_entries_stay_away_from_zero(table, beta):
    counts = counts_from(table)
    estimate = add_beta_matrix(counts, beta).array
    floor = beta / (counts.n_i + counts.k * beta)
    assert np.all(estimate >= floor[:, None] * (1 - 1e-12))
    assert np.all(estimate < 1.0)


@given(count_tables)
def test_empirical_is_the_vanishing_beta_limit(table):
    counts = counts_from(table)
    seen = counts.n_i > 0
    np.testing.assert_allclose(
        add_beta_matrix(counts, 1e-12).array[seen], empirical_matrix(counts).array[seen], atol=1e-9
    )


def test_add_sqrt_row():
    estimate = add_sqrt_matrix(counts_from([[3, 1], [0, 0]]))
    np.testing.assert_allclose(estimate.row(0).probs, [2 / 3, 1 / 3])
    np.testing.assert_allclose(estimate.row(1).probs, [0.5, 0.5])


@given(count_tables)
def test_add_sqrt_rows_are_distributions(table):
    estimate = add_sqrt_matrix(counts_from(table)).array
    np.testing.assert_allclose(estimate.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(estimate > 0)


def test_empirical_rows():
    estimate = empirical_matrix(count_transitions(seq(1, 2, 1, 2, k=3)))
    np.testing.assert_allclose(estimate.row(0).probs, [0, 1, 0])
    np.testing.assert_allclose(estimate.row(1).probs, [1, 0, 0])
    np.testing.assert_allclose(estimate.row(2).probs, np.full(3, 1 / 3))


# ============================================================================
# TAIL RUNS
# ============================================================================


def test_fresh_tail_run():
    classification = classify_tail_run(seq(3, 1, 3, 2, 2, k=3))
    assert classification.member
    assert classification.state == 1
    assert classification.run_length == 2


def test_repeated_state_is_not_fresh():
    classification = classify_tail_run(seq(2, 1, 3, 2, 3, k=3))
    assert not classification.member
    assert classification.state == 2
    assert classification.run_length == 1


def test_constant_sequence_is_not_fresh():
    classification = classify_tail_run(seq(1, 1, 1, k=2))
    assert not classification.member
    assert classification.run_length == 3


def test_tail_run_prediction_short_run():
    classification = classify_tail_run(SampleSequence(np.array([0] * 96 + [2] * 4), k=4))
    prediction = tail_run_prediction(classification, n=100, k=4)
    stay = 1 - 1 / (4 * math.log(100))
    assert prediction[2] == pytest.approx(0.94571, abs=1e-5)
    assert prediction[2] == pytest.approx(stay)
    for other in (0, 1, 3):
        assert prediction[other] == pytest.approx(0.018096, abs=1e-6)


def test_tail_run_prediction_long_run():
    classification = classify_tail_run(SampleSequence(np.array([0] * 40 + [1] * 60), k=4))
    prediction = tail_run_prediction(classification, n=100, k=4)
    assert prediction[1] == pytest.approx(1 - 1 / 60)
    assert prediction.probs.sum() == pytest.approx(1.0)


def test_tail_run_prediction_rejects_non_members():
    with pytest.raises(ValidationError):
        tail_run_prediction(classify_tail_run(seq(1, 2, 1, k=2)), n=3, k=2)


@given(st.integers(3, 400), st.integers(2, 8), st.data())
def test_tail_run_prediction_is_positive(n, k, data):
    ell = data.draw(st.integers(1, n - 1))
    states = np.array([0] * (n - ell) + [1] * ell)
    prediction = tail_run_prediction(classify_tail_run(SampleSequence(states, k)), n, k)
    assert np.all(prediction.probs > 0)


# ============================================================================
# HYBRID
# ============================================================================


def test_hybrid_routes_fresh_runs_to_tail_assignment():
    x = seq(1, 2, 2, k=2)
    expected = tail_run_prediction(classify_tail_run(x), n=3, k=2)
    np.testing.assert_allclose(hybrid_predict(x).probs, expected.probs)


def test_hybrid_uses_add_half_elsewhere():
    np.testing.assert_allclose(hybrid_predict(seq(1, 2, 1, k=2)).probs, [0.25, 0.75])


def test_hybrid_constant_sequence():
    np.testing.assert_allclose(hybrid_predict(seq(1, 1, 1, 1, k=2)).probs, [0.875, 0.125])


def test_hybrid_two_samples_fall_back_to_add_half():
    # (1, 2) is a fresh run, but the tail assignment needs n >= 3
    np.testing.assert_allclose(hybrid_predict(seq(1, 2, k=2)).probs, [0.5, 0.5])


# ============================================================================
# REGISTRY
# ============================================================================


@pytest.mark.parametrize(
    "token, rendered", [("add(0.5)", "add(0.5)"), ("add(1)", "add(1)"), ("ADD(0.75)", "add(0.75)"),
                        ("add-sqrt", "add-sqrt"), ("empirical", "empirical"), ("hybrid", "hybrid")]
)
def test_estimator_tokens(token, rendered):
    assert parse_estimator(token).token == rendered


@pytest.mark.parametrize("beta", [0.1234567, 0.1234568, 0.1, 2.0, 1e-05, 1 / 3])
def test_add_token_keeps_full_precision(beta):
    spec = EstimatorSpec("add", beta)
    assert parse_estimator(spec.token) == spec


def test_close_betas_get_distinct_tokens():
    assert parse_estimator("add(0.1234567)").token == "add(0.1234567)"
    assert parse_estimator("add(0.1234567)").token != parse_estimator("add(0.1234568)").token


@pytest.mark.parametrize("token", ["add(0)", "add(-1)", "add()", "laplace"])
def test_bad_estimator_tokens(token):
    with pytest.raises(ValidationError):
        parse_estimator(token)


def test_hybrid_cannot_estimate_a_matrix():
    with pytest.raises(ValidationError):
        parse_estimator("hybrid").estimate(seq(1, 2, 1, k=2))


def test_predict_is_the_last_state_row():
    x = seq(1, 2, 2, 1, 2, k=3)
    spec = parse_estimator("add(1)")
    np.testing.assert_allclose(spec.predict(x).probs, spec.estimate(x).row(1).probs)
