"""Prediction and estimation priors behind the lower bounds."""

import itertools
import math

import numpy as np
import pytest

from markovrisk.services.divergence.divergence_service import KL, evaluate
from markovrisk.services.markov.estimator_service import classify_tail_run, parse_estimator
from markovrisk.services.markov.markov_service import (
    Distribution,
    MarkovChain,
    SampleSequence,
    TransitionMatrix,
    sequence_probability,
    stationary_distribution,
)
from markovrisk.services.risk.lower_bound_service import (
    ORACLE,
    EstimationPrior,
    PredictionPrior,
    bayes_bruteforce,
    bayes_closed_form,
    build_v_n,
    estimation_prior_bayes_gap,
    estimation_prior_sample,
    estimation_prior_stationary,
    even_states,
    k_ell_probability,
    prediction_prior_chain,
    prediction_prior_partial_bayes_risk,
    prediction_prior_set,
    tail_run_sequences,
)
from markovrisk.services.theory.theory_service import BoundQuery, bound
from markovrisk.services.utility.errors import ValidationError

# Parameter grid for n < 16, where V_n is not a valid set of parameters
SMALL_V_SET = (0.1, 0.05)


def enumerated_partial_risk(prior):
    """Bayes KL risk restricted to fresh tail runs, by brute force over the prior."""
    chains = prediction_prior_set(prior)
    total = 0.0
    for x in tail_run_sequences(prior.k, prior.n):
        prediction = bayes_closed_form(prior, classify_tail_run(x)).probs
        for chain in chains:
            prob = sequence_probability(chain, x)
            if prob > 0:
                total += prob * evaluate(KL, chain.matrix.array[x.last], prediction)
    return total / len(chains)


# ============================================================================
# V_n AND THE PRIOR CHAINS
# ============================================================================


def test_v_n_at_one_million():
    v_set = build_v_n(10**6)
    assert len(v_set) == 2
    assert v_set[0] == pytest.approx(0.072382, abs=1e-6)
    assert v_set[1] == pytest.approx(0.0052392, abs=1e-7)


def test_v_n_at_sixteen_has_one_atom():
    assert build_v_n(16) == pytest.approx((1 / math.log(16),))


@pytest.mark.parametrize("n", [16, 100, 10**4, 10**6, 10**9])
def test_v_n_is_strictly_decreasing_in_unit_interval(n):
    v_set = np.array(build_v_n(n))
    assert np.all((v_set > 0) & (v_set < 1))
    assert np.all(np.diff(v_set) < 0)


def test_v_n_needs_large_n():
    with pytest.raises(ValidationError):
        build_v_n(15)


def test_even_states_are_odd_indices():
    assert even_states(6) == (1, 3, 5)


def test_prior_chain_entries():
    prior = PredictionPrior.create(4, 100)
    v = 1 / math.log(100)
    chain = prediction_prior_chain(prior, {1: v, 3: v})
    m = chain.matrix.array
    assert m[1, 0] == pytest.approx(0.21715, abs=1e-5)
    assert m[1, 1] == pytest.approx(0.76285, abs=1e-5)
    assert m[1, 2] == pytest.approx(0.01)
    assert m[0, 0] == pytest.approx(0.97)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(m > 0)
    np.testing.assert_allclose(chain.mu.probs, 0.25)


def test_prior_chain_rejects_foreign_parameters():
    prior = PredictionPrior.create(4, 10, SMALL_V_SET)
    with pytest.raises(ValidationError):
        prediction_prior_chain(prior, (0.1, 0.3))
    with pytest.raises(ValidationError):
        prediction_prior_chain(prior, {1: 0.1})


def test_prior_needs_even_k():
    with pytest.raises(ValidationError):
        PredictionPrior.create(3, 100)


def test_prior_set_size():
    prior = PredictionPrior.create(6, 10, SMALL_V_SET)
    assert len(prediction_prior_set(prior)) == 2**3


def test_tail_run_sequence_count():
    k, n = 3, 5
    expected = sum(k * (k - 1) ** (n - ell) for ell in range(1, n))
    sequences = list(tail_run_sequences(k, n))
    assert len(sequences) == expected
    assert all(classify_tail_run(x).member for x in sequences)


# ============================================================================
# BAYES PREDICTION
# ============================================================================


def test_bruteforce_singleton_prior_returns_the_row():
    chain = MarkovChain(Distribution.uniform(2), TransitionMatrix([[0.3, 0.7], [0.6, 0.4]]))
    x = SampleSequence.from_labels([1, 2], k=2)
    np.testing.assert_allclose(bayes_bruteforce([chain], x).probs, [0.6, 0.4])


def test_bruteforce_ignores_chains_that_exclude_the_sequence():
    blocked = MarkovChain(Distribution.uniform(2), TransitionMatrix([[1.0, 0.0], [0.5, 0.5]]))
    other = MarkovChain(Distribution.uniform(2), TransitionMatrix([[0.3, 0.7], [0.6, 0.4]]))
    x = SampleSequence.from_labels([1, 2], k=2)
    np.testing.assert_allclose(bayes_bruteforce([blocked, other], x).probs, [0.6, 0.4])


def test_bruteforce_zero_likelihood():
    blocked = MarkovChain(Distribution.uniform(2), TransitionMatrix([[1.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(ValidationError):
        bayes_bruteforce([blocked], SampleSequence.from_labels([1, 2], k=2))


def test_closed_form_odd_label():
    prior = PredictionPrior.create(4, 100)
    x = SampleSequence(np.array([1] * 97 + [2] * 3), k=4)
    prediction = bayes_closed_form(prior, classify_tail_run(x))
    np.testing.assert_allclose(prediction.probs, [0.01, 0.01, 0.97, 0.01])


def test_closed_form_odd_label_ignores_run_length():
    prior = PredictionPrior.create(4, 12, SMALL_V_SET)
    rows = []
    for ell in range(1, 12):
        x = SampleSequence(np.array([1] * (12 - ell) + [0] * ell), 4)
        rows.append(bayes_closed_form(prior, classify_tail_run(x)).probs)
    for row in rows:
        np.testing.assert_array_equal(row, rows[0])


def test_closed_form_single_atom():
    prior = PredictionPrior.create(4, 20, (0.2,))
    x = SampleSequence(np.array([0] * 15 + [3] * 5), k=4)
    prediction = bayes_closed_form(prior, classify_tail_run(x))
    assert prediction[3] == pytest.approx(prior.b - 0.2)
    assert prediction[2] == pytest.approx(0.2)
    assert prediction[0] == pytest.approx(prior.a)


def test_closed_form_rejects_non_members():
    prior = PredictionPrior.create(4, 10, SMALL_V_SET)
    with pytest.raises(ValidationError):
        bayes_closed_form(prior, classify_tail_run(SampleSequence(np.array([1] * 10), 4)))


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_closed_form_matches_bruteforce(n):
    prior = PredictionPrior.create(4, n, SMALL_V_SET)
    prior_set = prediction_prior_set(prior)
    for x in tail_run_sequences(4, n):
        closed = bayes_closed_form(prior, classify_tail_run(x)).probs
        np.testing.assert_allclose(closed, bayes_bruteforce(prior_set, x).probs, rtol=0, atol=1e-10)


# ============================================================================
# FRESH-RUN PROBABILITY AND PARTIAL BAYES RISK
# ============================================================================


@pytest.mark.parametrize("n", [5, 8, 10])
def test_fresh_run_probability_is_exact(n):
    prior = PredictionPrior.create(4, n, SMALL_V_SET)
    for params in itertools.product(SMALL_V_SET, repeat=2):
        chain = prediction_prior_chain(prior, params)
        for state, v in zip(even_states(4), params):
            for ell in range(1, n):
                enumerated = sum(
                    sequence_probability(chain, x)
                    for x in tail_run_sequences(4, n, state=state, run_length=ell)
                )
                assert enumerated == pytest.approx(k_ell_probability(prior, v, ell), rel=0, abs=1e-12)


def test_fresh_run_length_range():
    prior = PredictionPrior.create(4, 10, SMALL_V_SET)
    with pytest.raises(ValidationError):
        k_ell_probability(prior, 0.1, 10)


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_partial_bayes_risk_matches_enumeration(n):
    prior = PredictionPrior.create(4, n, SMALL_V_SET)
    assert prediction_prior_partial_bayes_risk(prior) == pytest.approx(
        enumerated_partial_risk(prior), rel=0, abs=1e-9
    )


@pytest.mark.parametrize("n", [16, 1000, 10**6])
def test_partial_bayes_risk_is_nonnegative(n):
    assert prediction_prior_partial_bayes_risk(PredictionPrior.create(4, n)) >= 0.0


def test_partial_bayes_risk_tracks_lower_bound():
    k, n = 4, 10**4
    risk = prediction_prior_partial_bayes_risk(PredictionPrior.create(k, n))
    lower = bound(BoundQuery(k=k, n=n, risk="prediction_kl", side="lower"))
    assert lower == pytest.approx((k - 1) * math.log(math.log(n)) / (4 * math.e * n))
    # exact ratio at this n is about 0.305
    assert risk >= 0.25 * lower


# ============================================================================
# ESTIMATION PRIOR
# ============================================================================


def test_estimation_prior_geometry():
    prior = EstimationPrior(k=6, n=10**5, delta=0.0, pi_star=0.1, epsilon=0.1)
    assert prior.n_prime == pytest.approx(6.431, abs=1e-3)
    assert prior.radius == pytest.approx(0.15551, abs=1e-5)
    np.testing.assert_allclose(prior.p_star, [0.18] * 5 + [0.1])


def test_estimation_prior_rejects_degenerate_ball():
    with pytest.raises(ValidationError):
        EstimationPrior(k=6, n=100, delta=0.0, pi_star=0.1, epsilon=0.1)


def test_estimation_prior_rejects_large_delta():
    with pytest.raises(ValidationError):
        EstimationPrior(k=6, n=10**5, delta=0.15, pi_star=0.1, epsilon=0.1)


@pytest.mark.parametrize("seed", range(10))
def test_sampled_chain_structure(seed):
    prior = EstimationPrior(k=5, n=10**5, delta=0.02, pi_star=0.1, epsilon=0.1)
    chain = estimation_prior_sample(prior, seed)
    m = chain.matrix.array
    p_prime = m[-1, :-1] / prior.pi_bar

    for row in m[:-1]:
        np.testing.assert_allclose(row, prior.p_star)
    assert np.max(np.abs(p_prime - 1 / 4)) < prior.radius
    assert m.min() >= prior.delta
    np.testing.assert_allclose(m[:, -1], prior.pi_star)

    exact = estimation_prior_stationary(prior, p_prime).probs
    assert np.abs(exact @ m - exact).sum() <= 1e-12
    np.testing.assert_allclose(stationary_distribution(chain.matrix).probs, exact, atol=1e-10)
    assert exact.min() == pytest.approx(prior.pi_star)


def test_sampling_is_deterministic():
    prior = EstimationPrior(k=4, n=10**5, delta=0.0, pi_star=0.2, epsilon=0.1)
    first = estimation_prior_sample(prior, 3).matrix.array
    np.testing.assert_array_equal(first, estimation_prior_sample(prior, 3).matrix.array)


def test_oracle_has_zero_prior_risk():
    prior = EstimationPrior(k=4, n=2000, delta=0.0, pi_star=0.2, epsilon=0.1)
    risk = estimation_prior_bayes_gap(prior, ORACLE, KL, trials=5, seed=0, workers=1)
    assert risk.value == 0.0
    assert risk.mode == "bayes_row"


def test_callable_estimator_prior_risk_with_many_workers():
    prior = EstimationPrior(k=4, n=2000, delta=0.0, pi_star=0.2, epsilon=0.1)
    smoothed = parse_estimator("add(0.5)")

    def estimator(x):
        return smoothed.estimate(x)

    pooled = estimation_prior_bayes_gap(prior, estimator, KL, 8, seed=3, workers=2)
    assert pooled == estimation_prior_bayes_gap(prior, smoothed, KL, 8, seed=3, workers=1)


def test_add_half_prior_risk_is_near_upper_bound():
    k, n, pi_star = 6, 50_000, 0.1
    prior = EstimationPrior(k=k, n=n, delta=0.0, pi_star=pi_star, epsilon=0.1)
    risk = estimation_prior_bayes_gap(prior, parse_estimator("add(0.5)"), KL, 30, seed=1, workers=1)
    reference = (k - 1) / (2 * n * pi_star)
    assert reference / 3 <= risk.value <= 3 * reference


@pytest.mark.slow
def test_add_half_prior_risk_at_full_scale():
    k, n, pi_star = 6, 10**5, 0.1
    prior = EstimationPrior(k=k, n=n, delta=0.0, pi_star=pi_star, epsilon=0.1)
    risk = estimation_prior_bayes_gap(prior, parse_estimator("add(0.5)"), KL, 100, seed=1)
    reference = (k - 1) / (2 * n * pi_star)
    assert reference / 3 <= risk.value <= 3 * reference
    assert risk.value >= 0.0
