"""
Closed-form minimax bounds and concentration constants.

All logarithms are natural. Estimation bounds take f''(1) through
`curvature`; the L2 and prediction forms ignore it.
"""

import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator
from scipy.special import gammaln

from markovrisk.services.utility.errors import ValidationError

# The prediction figure's upper curve uses constant 1/2 instead of 2
PREDICTION_ADJUSTMENT = 0.25

RiskName = Literal[
    "prediction_kl",
    "estimation_f",
    "estimation_f_weighted",
    "estimation_l2",
    "estimation_l2_weighted",
    "iid_kl",
]
RISK_NAMES = (
    "prediction_kl",
    "estimation_f",
    "estimation_f_weighted",
    "estimation_l2",
    "estimation_l2_weighted",
    "iid_kl",
)


# ============================================================================
# QUERY MODEL
# ============================================================================


class BoundQuery(BaseModel):
    """Parameters of one bound evaluation."""

    model_config = {"extra": "forbid", "frozen": True}

    k: int = Field(ge=2, description="Alphabet size")
    n: int = Field(ge=3, description="Sample size")
    delta: Optional[float] = Field(default=None, description="Minimum transition probability")
    pi_star: Optional[float] = Field(default=None, description="Minimum stationary probability")
    curvature: float = Field(default=1.0, gt=0, description="f''(1) of the loss")
    side: Literal["lower", "upper"] = "upper"
    risk: RiskName = "estimation_f"

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.delta is not None and not 0.0 < self.delta < 1.0 / self.k:
            raise ValueError(f"delta must lie in (0, 1/k), got {self.delta}")
        if self.pi_star is not None and not 0.0 < self.pi_star <= 1.0 / self.k:
            raise ValueError(f"pi_star must lie in (0, 1/k], got {self.pi_star}")
        return self


def _floor_parameter(q: BoundQuery) -> float:
    """pi* when given (the finer class), else delta."""
    if q.pi_star is not None:
        return q.pi_star
    if q.delta is not None:
        return q.delta
    raise ValidationError(f"'{q.risk}' bounds need delta or pi_star")


# ============================================================================
# BOUNDS
# ============================================================================


def bound(q: BoundQuery, adjust_prediction: bool = False) -> float:
    """
    Evaluate one side of a minimax bound.

    Args:
        q: the query
        adjust_prediction: scale the prediction upper bound's constant 2 to 1/2

    Returns:
        float: the bound value (loss units)

    Raises:
        ValidationError: a parameter the formula needs is missing
    """
    k, n, curvature = q.k, q.n, q.curvature
    upper = q.side == "upper"

    if q.risk == "prediction_kl":
        log_log_n = math.log(math.log(n))
        if upper:
            value = 2.0 * k**2 * log_log_n / n
            return value * PREDICTION_ADJUSTMENT if adjust_prediction else value
        return (k - 1) * log_log_n / (4.0 * math.e * n)

    if q.risk == "iid_kl":
        return (k - 1) / (2.0 * n)

    if q.risk == "estimation_f":
        x = _floor_parameter(q)
        if upper:
            return (k - 1) * curvature / (2.0 * n * x)
        return (1.0 - x) * (k - 2) * curvature / (2.0 * n * x)

    if q.risk == "estimation_l2":
        x = _floor_parameter(q)
        if upper:
            return (1.0 - 1.0 / k) / (n * x)
        return (1.0 - x) ** 2 * (1.0 - 1.0 / (k - 1)) / (n * x)

    if q.risk == "estimation_f_weighted":
        if not upper and q.pi_star is not None:
            return (1.0 - q.pi_star) * (k - 2) * k * curvature / (2.0 * n)
        if not upper:
            _floor_parameter(q)
        return (k - 1) * k * curvature / (2.0 * n)

    if q.risk == "estimation_l2_weighted":
        if not upper and q.pi_star is not None:
            return (1.0 - q.pi_star) ** 2 * (k - k / (k - 1)) / n
        if not upper:
            _floor_parameter(q)
        return (k - 1) / n

    raise ValidationError(f"Unknown risk '{q.risk}'")


def bound_pair(q: BoundQuery, adjust_prediction: bool = False) -> Tuple[float, float]:
    """(lower, upper) for the same parameters."""
    lower = bound(q.model_copy(update={"side": "lower"}), adjust_prediction)
    upper = bound(q.model_copy(update={"side": "upper"}), adjust_prediction)
    return lower, upper


# ============================================================================
# CONCENTRATION
# ============================================================================


def c_delta(delta: float) -> int:
    """C(delta) = ceil(-ln 4 / ln(1 - delta) + 1), a mixing-time surrogate."""
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    return math.ceil(-math.log(4.0) / math.log(1.0 - delta) + 1.0)


def concentration_tail(n: int, delta: float, t: float) -> float:
    """
    Bound on Pr(|N_i - (n-1) pi_i| > t), capped at 1:
    sqrt(2/delta) exp((-t^2 / C) / (4((n-1) + 2C) + 40t)).
    """
    if t < 0:
        raise ValidationError("t must be >= 0")
    if n < 2:
        raise ValidationError("n must be >= 2")
    c = c_delta(delta)
    exponent = (-(t**2) / c) / (4.0 * ((n - 1) + 2 * c) + 40.0 * t)
    return min(1.0, math.sqrt(2.0 / delta) * math.exp(exponent))


def moment_bound(m: int, n: int, delta: float) -> float:
    """Bound on E|N_i - (n-1) pi_i|^m: m Gamma(m/2) / sqrt(2 delta) (4C(11(n-1) + 2C))^(m/2)."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    if n < 2:
        raise ValidationError("n must be >= 2")
    c = c_delta(delta)
    log_value = (
        math.log(m)
        + float(gammaln(m / 2.0))
        - 0.5 * math.log(2.0 * delta)
        + (m / 2.0) * math.log(4.0 * c * (11.0 * (n - 1) + 2.0 * c))
    )
    return math.exp(log_value)


def binomial_tail(m: int, p: float, epsilon: float) -> float:
    """Pr(Y >= (1 + eps) m p) <= exp(-eps^2 m p / 3) for Y ~ Bin(m, p)."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {p!r}")
    if m < 0:
        raise ValidationError("m must be >= 0")
    return math.exp(-(epsilon**2) * m * p / 3.0)
