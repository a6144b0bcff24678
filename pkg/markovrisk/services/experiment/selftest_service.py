"""Quick oracle-equivalence checks run by the `selftest` subcommand."""

import logging
import math
from typing import Callable, List, NamedTuple

import numpy as np

from markovrisk.services.divergence.divergence_service import KL, L2
from markovrisk.services.markov.estimator_service import classify_tail_run, parse_estimator
from markovrisk.services.markov.markov_service import (
    MarkovChain,
    hitting_time_pmf,
    random_chain,
    sequence_probability,
)
from markovrisk.services.risk.lower_bound_service import (
    PredictionPrior,
    bayes_bruteforce,
    bayes_closed_form,
    even_states,
    k_ell_probability,
    prediction_prior_chain,
    prediction_prior_set,
    tail_run_sequences,
)
from markovrisk.services.risk.risk_service import (
    exact_estimation_risk,
    exact_prediction_risk,
    monte_carlo_estimation_risk,
    monte_carlo_prediction_risk,
)

logger = logging.getLogger(__name__)

# Small-n grid standing in for V_n, which needs n >= 16
ORACLE_V_SET = (0.1, 0.05)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def check_bayes_closed_form(n: int = 6) -> CheckResult:
    """Closed-form Bayes prediction equals the posterior mixture on every fresh tail run."""
    prior = PredictionPrior.create(k=4, n=n, v_set=ORACLE_V_SET)
    prior_set = prediction_prior_set(prior)
    worst = 0.0
    for x in tail_run_sequences(prior.k, n):
        closed = bayes_closed_form(prior, classify_tail_run(x)).probs
        brute = bayes_bruteforce(prior_set, x).probs
        worst = max(worst, float(np.max(np.abs(closed - brute))))
    return CheckResult("bayes closed form vs brute force", worst <= 1e-10, f"max deviation {worst:.3e}")


def check_tail_run_probability(n: int = 7) -> CheckResult:
    """Enumerated fresh-run probability equals the product formula."""
    prior = PredictionPrior.create(k=4, n=n, v_set=ORACLE_V_SET)
    worst = 0.0
    for params in [(0.1, 0.05), (0.05, 0.1)]:
        chain = prediction_prior_chain(prior, params)
        for state, v in zip(even_states(prior.k), params):
            for ell in range(1, n):
                enumerated = sum(
                    sequence_probability(chain, x)
                    for x in tail_run_sequences(prior.k, n, state=state, run_length=ell)
                )
                worst = max(worst, abs(enumerated - k_ell_probability(prior, v, ell)))
    return CheckResult("fresh tail run probability", worst <= 1e-12, f"max deviation {worst:.3e}")


def check_exact_vs_monte_carlo(trials: int = 4000, seed: int = 7) -> CheckResult:
    """Exact enumeration and Monte Carlo agree within 4 standard errors."""
    chain = random_chain(2, 0.05, seed)
    add_half, add_one = parse_estimator("add(0.5)"), parse_estimator("add(1)")
    pairs = {
        "prediction add(0.5) kl": (
            exact_prediction_risk(chain, add_half, 6, KL),
            monte_carlo_prediction_risk(chain, add_half, 6, KL, trials, seed, workers=1),
        ),
        "weighted estimation add(1) l2": (
            exact_estimation_risk(chain, add_one, 6, L2, "weighted"),
            monte_carlo_estimation_risk(chain, add_one, 6, L2, "weighted", trials, seed, workers=1),
        ),
    }
    gaps = {
        label: abs(exact.value - mc.value) / max(mc.stderr, 1e-15)
        for label, (exact, mc) in pairs.items()
    }
    detail = "; ".join(f"{label}: {gap:.2f} sigma" for label, gap in gaps.items())
    return CheckResult("exact vs Monte Carlo risk", all(gap <= 4.0 for gap in gaps.values()), detail)


def check_hitting_time(chains: int = 10, horizon: int = 100, seed: int = 11) -> CheckResult:
    """Pr(tau(j) = t) <= k / t beyond t = k."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for index in range(chains):
        k = int(rng.integers(2, 6))
        chain: MarkovChain = random_chain(k, 0.0, seed + index)
        pmf = hitting_time_pmf(chain, 0, k - 1, horizon)
        t = np.arange(k + 1, horizon + 1)
        worst = max(worst, float(np.max(pmf[k + 1 :] - k / t)))
    return CheckResult("hitting time pmf <= k/t", worst <= 0.0, f"max excess {worst:.3e}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_bayes_closed_form,
    check_tail_run_probability,
    check_exact_vs_monte_carlo,
    check_hitting_time,
]


def run_selftest() -> List[CheckResult]:
    """Run every check; exceptions count as failures."""
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except Exception as e:
            logger.error(f"Self-test check {check.__name__} raised: {e}", exc_info=True)
            results.append(CheckResult(check.__name__, False, str(e)))
    return results
