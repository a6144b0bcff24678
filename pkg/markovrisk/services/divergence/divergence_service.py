"""
Loss measures between distributions.

Ordinary f-divergences D_f(p, q) = sum_i q(i) f(p(i) / q(i)) with the
built-in family (KL, Chi-squared, Hellinger, Alpha), plus the L2, L1 and
L-infinity losses. `p` is always the true law and `q` the estimate.
"""

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import xlogy

from markovrisk.services.markov.markov_service import Distribution
from markovrisk.services.utility.errors import ValidationError

CURVATURE_STEP = 1e-4
CURVATURE_TOLERANCE = 1e-6

F_DIVERGENCE = "f"
NORM_KINDS = ("l2", "l1", "linf")

ArrayLike = Union[Distribution, np.ndarray, list, tuple]


# ============================================================================
# GENERATORS
# ============================================================================
# Module-level so specs pickle cleanly into worker processes.


def _kl_generator(x):
    return xlogy(x, x)


def _chi_squared_generator(x):
    return (x - 1.0) ** 2


def _hellinger_generator(x):
    return (np.sqrt(x) - 1.0) ** 2


def _alpha_generator(x, alpha):
    with np.errstate(divide="ignore"):
        return 4.0 * (1.0 - np.power(x, (1.0 + alpha) / 2.0)) / (1.0 - alpha**2)


# ============================================================================
# LOSS DEFINITION
# ============================================================================


@dataclass(frozen=True)
class DivergenceSpec:
    """
    A named loss.

    For f-divergences `generator` is the convex f with f(1) = 0 and
    `curvature` is f''(1). `slope_at_infinity` is lim f(x)/x, the weight a
    coordinate with q(i) = 0 < p(i) contributes per unit of p(i).
    """

    name: str
    kind: str = F_DIVERGENCE
    generator: Optional[Callable] = None
    curvature: Optional[float] = None
    slope_at_infinity: float = math.inf
    alpha: Optional[float] = None

    @property
    def is_f_divergence(self) -> bool:
        return self.kind == F_DIVERGENCE

    @property
    def token(self) -> str:
        """Lowercase token used in CLI flags and CSV rows."""
        if self.alpha is not None:
            return f"alpha({self.alpha:.2f})"
        return self.name

    def __str__(self) -> str:
        return self.token


def _as_array(values: ArrayLike) -> np.ndarray:
    if isinstance(values, Distribution):
        return values.probs
    return np.asarray(values, dtype=float)


def _losses(spec: DivergenceSpec, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Loss along the last axis."""
    if p.shape != q.shape:
        raise ValidationError(f"Dimension mismatch: {p.shape} vs {q.shape}")

    if spec.kind == "l2":
        return np.sum((p - q) ** 2, axis=-1)
    if spec.kind == "l1":
        return np.sum(np.abs(p - q), axis=-1)
    if spec.kind == "linf":
        return np.max(np.abs(p - q), axis=-1)

    supported = q > 0
    ratio = np.divide(p, q, out=np.zeros_like(p), where=supported)
    with np.errstate(invalid="ignore", over="ignore"):
        inside = q * spec.generator(ratio)
        # 0 * inf is only reachable off-support; 0 f(0/0) = 0
        outside = np.where(p > 0, p * spec.slope_at_infinity, 0.0)
    terms = np.where(supported, inside, outside)
    return np.sum(terms, axis=-1)


def evaluate(spec: DivergenceSpec, p: ArrayLike, q: ArrayLike) -> float:
    """
    Loss between the true law p and the estimate q.

    Returns:
        float: D_f(p, q) in the generator's units (nats for KL); +inf when q
        misses mass that p has and f grows superlinearly.

    Raises:
        ValidationError: p and q have different dimensions
    """
    return float(_losses(spec, _as_array(p), _as_array(q)))


def evaluate_rows(spec: DivergenceSpec, p_rows: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    """Row-wise losses between two stacks of distributions."""
    return _losses(spec, np.asarray(p_rows, dtype=float), np.asarray(q_rows, dtype=float))


def curvature_check(spec: DivergenceSpec, h: float = CURVATURE_STEP) -> float:
    """Central second difference of the generator at 1."""
    if not spec.is_f_divergence:
        raise ValidationError(f"{spec.token} has no generator to differentiate")
    f = spec.generator
    return float((f(np.float64(1.0 + h)) - 2.0 * f(np.float64(1.0)) + f(np.float64(1.0 - h))) / h**2)


# ============================================================================
# CONSTRUCTORS
# ============================================================================


def custom(
    name: str,
    generator: Callable,
    curvature: float,
    slope_at_infinity: float = math.inf,
) -> DivergenceSpec:
    """
    Build an f-divergence from a user generator.

    Raises:
        ValidationError: f(1) != 0 or the stated curvature disagrees with the
        finite-difference estimate
    """
    at_one = float(generator(np.float64(1.0)))
    if abs(at_one) > 1e-12:
        raise ValidationError(f"Generator must vanish at 1, f(1) = {at_one!r}")
    spec = DivergenceSpec(
        name=name,
        generator=generator,
        curvature=float(curvature),
        slope_at_infinity=slope_at_infinity,
    )
    measured = curvature_check(spec)
    if abs(measured - curvature) > CURVATURE_TOLERANCE:
        raise ValidationError(
            f"Stated curvature {curvature!r} disagrees with finite difference {measured!r}"
        )
    return spec


def alpha_divergence(alpha: float) -> DivergenceSpec:
    """Alpha family f(x) = 4 (1 - x^((1+alpha)/2)) / (1 - alpha^2); f''(1) = 1."""
    alpha = float(alpha)
    if abs(abs(alpha) - 1.0) < 1e-12:
        raise ValidationError("Alpha divergence is undefined for alpha = +1 or -1")
    return DivergenceSpec(
        name="alpha",
        generator=partial(_alpha_generator, alpha=alpha),
        curvature=1.0,
        slope_at_infinity=0.0 if alpha < 1.0 else math.inf,
        alpha=alpha,
    )


KL = DivergenceSpec(name="kl", generator=_kl_generator, curvature=1.0)
CHI_SQUARED = DivergenceSpec(name="chi2", generator=_chi_squared_generator, curvature=2.0)
HELLINGER = DivergenceSpec(
    name="hellinger", generator=_hellinger_generator, curvature=0.5, slope_at_infinity=1.0
)
L2 = DivergenceSpec(name="l2", kind="l2")
L1 = DivergenceSpec(name="l1", kind="l1")
LINF = DivergenceSpec(name="linf", kind="linf")

_BUILTINS = {
    "kl": KL,
    "chisquared": CHI_SQUARED,
    "chi2": CHI_SQUARED,
    "hellinger": HELLINGER,
    "l2": L2,
    "l1": L1,
    "linf": LINF,
}

_ALPHA_TOKEN = re.compile(r"^alpha\(\s*([^)]+?)\s*\)$")


def builtin(name: str, alpha: Optional[float] = None) -> DivergenceSpec:
    """
    Built-in loss by name: KL, ChiSquared, Hellinger, Alpha, L2 (plus L1, Linf).

    Raises:
        ValidationError: unknown name, missing alpha, or alpha = +-1
    """
    key = name.strip().lower().replace("-", "").replace("_", "")
    if key == "alpha":
        if alpha is None:
            raise ValidationError("Alpha divergence needs a parameter")
        return alpha_divergence(alpha)
    if key in _BUILTINS:
        return _BUILTINS[key]
    raise ValidationError(f"Unknown divergence '{name}'")


def parse_divergence(token: str) -> DivergenceSpec:
    """
    Parse a CLI/CSV token: kl, chi2, hellinger, alpha(<a>), l2, l1, linf.

    The alpha parameter may be written as a decimal or a fraction, e.g.
    alpha(0.5) or alpha(1/3).
    """
    text = token.strip().lower()
    match = _ALPHA_TOKEN.match(text)
    if match:
        try:
            value = float(Fraction(match.group(1)))
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"Invalid alpha parameter in '{token}'")
        return alpha_divergence(value)
    return builtin(text)
