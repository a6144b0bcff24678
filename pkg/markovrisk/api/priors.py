"""Lower-bound prior diagnostics endpoints."""

from flask import Blueprint, request, jsonify
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError
from typing import List, Optional
import logging

from markovrisk.services.divergence.divergence_service import parse_divergence
from markovrisk.services.risk.lower_bound_service import (
    EstimationPrior,
    PredictionPrior,
    prediction_prior_partial_bayes_risk,
)
from markovrisk.services.theory.theory_service import BoundQuery, bound, bound_pair
from markovrisk.services.utility.errors import ValidationError

logger = logging.getLogger(__name__)

# Create the priors blueprint
priors_bp = Blueprint("priors", __name__)


class PredictionPriorRequest(BaseModel):
    model_config = {"extra": "forbid"}

    k: int = Field(ge=2)
    n: int = Field(ge=3)
    v_set: Optional[List[float]] = None


class EstimationPriorRequest(BaseModel):
    model_config = {"extra": "forbid"}

    k: int = Field(ge=3)
    n: int = Field(ge=3)
    pi_star: float
    epsilon: float = 0.1
    delta: float = 0.0
    divergence: str = "kl"


def _parse(model, payload):
    if not isinstance(payload, dict):
        return None, "JSON object body required"
    try:
        return model(**payload), None
    except PydanticValidationError as e:
        return None, "; ".join(
            f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()
        )


def _invalid(message: str):
    return (
        jsonify({"success": False, "error_code": "VALIDATION_ERROR", "message": message}),
        400,
    )


# ******************************************************************************
# * POST /api/priors/prediction - Partial Bayes risk of the prediction prior
# ******************************************************************************
@priors_bp.route("/prediction", methods=["POST"])
def prediction_prior():
    """
    Expected JSON payload:
    {
        "k": 4,
        "n": 10000,
        "v_set": [0.1, 0.05]   // optional, defaults to V_n
    }
    """
    body, error = _parse(PredictionPriorRequest, request.get_json(silent=True))
    if error:
        return _invalid(error)

    prior = PredictionPrior.create(body.k, body.n, body.v_set)
    risk = prediction_prior_partial_bayes_risk(prior)
    lower = bound(BoundQuery(k=body.k, n=body.n, risk="prediction_kl", side="lower"))
    logger.debug(f"Prediction prior evaluated: k={body.k} n={body.n} risk={risk}")

    return (
        jsonify(
            {
                "success": True,
                "k": prior.k,
                "n": prior.n,
                "a": prior.a,
                "b": prior.b,
                "v_set": list(prior.v_set),
                "partial_bayes_risk": risk,
                "lower_bound": lower,
                "ratio": risk / lower,
            }
        ),
        200,
    )


# ******************************************************************************
# * POST /api/priors/estimation - Estimation prior geometry and bracket
# ******************************************************************************
@priors_bp.route("/estimation", methods=["POST"])
def estimation_prior():
    """
    Expected JSON payload:
    {
        "k": 6,
        "n": 100000,
        "pi_star": 0.1,
        "epsilon": 0.1,
        "delta": 0.01,
        "divergence": "kl"
    }
    """
    body, error = _parse(EstimationPriorRequest, request.get_json(silent=True))
    if error:
        return _invalid(error)

    prior = EstimationPrior(
        k=body.k, n=body.n, delta=body.delta, pi_star=body.pi_star, epsilon=body.epsilon
    )
    spec = parse_divergence(body.divergence)
    if spec.is_f_divergence:
        query = BoundQuery(
            k=body.k, n=body.n, pi_star=body.pi_star, curvature=spec.curvature, risk="estimation_f"
        )
    elif spec.kind == "l2":
        query = BoundQuery(k=body.k, n=body.n, pi_star=body.pi_star, risk="estimation_l2")
    else:
        raise ValidationError(f"No minimax bound is defined for '{spec.token}'")
    lower, upper = bound_pair(query)

    return (
        jsonify(
            {
                "success": True,
                "n_prime": prior.n_prime,
                "radius": prior.radius,
                "min_entry": prior.min_entry,
                "p_star": prior.p_star.tolist(),
                "bounds": {"lower": lower, "upper": upper},
            }
        ),
        200,
    )
