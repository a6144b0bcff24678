"""Bound calculator endpoints."""

from flask import Blueprint, request, jsonify
from pydantic import ValidationError as PydanticValidationError
import logging

from markovrisk.services.divergence.divergence_service import parse_divergence
from markovrisk.services.theory.theory_service import BoundQuery, bound, bound_pair, c_delta
from markovrisk.services.utility.errors import ValidationError

logger = logging.getLogger(__name__)

# Create the theory blueprint
theory_bp = Blueprint("theory", __name__)


def _invalid(message: str):
    return (
        jsonify({"success": False, "error_code": "VALIDATION_ERROR", "message": message}),
        400,
    )


# ******************************************************************************
# * POST /api/theory/bound - Evaluate one minimax bound
# ******************************************************************************
@theory_bp.route("/bound", methods=["POST"])
def evaluate_bound():
    """
    Evaluate a bound formula.

    Expected JSON payload:
    {
        "k": 6,
        "n": 100000,
        "delta": 0.05,                 // optional
        "pi_star": 0.1,                // optional
        "curvature": 1.0,              // or "divergence": "hellinger"
        "side": "upper",
        "risk": "estimation_f",
        "adjust_prediction": false     // optional
    }

    Returns:
    {
        "success": true,
        "value": 0.0005,
        "pair": {"lower": ..., "upper": ...},
        "query": {...}
    }
    """
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        return _invalid("JSON object body required")

    fields = dict(payload)
    adjust = bool(fields.pop("adjust_prediction", False))
    token = fields.pop("divergence", None)
    if token is not None:
        spec = parse_divergence(str(token))
        if spec.is_f_divergence:
            fields["curvature"] = spec.curvature
        elif spec.kind != "l2":
            raise ValidationError(f"No minimax bound is defined for '{spec.token}'")

    try:
        query = BoundQuery(**fields)
    except PydanticValidationError as e:
        return _invalid("; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()))

    value = bound(query, adjust_prediction=adjust)
    lower, upper = bound_pair(query, adjust_prediction=adjust)
    logger.debug(f"Bound evaluated: risk={query.risk} side={query.side} value={value}")

    return (
        jsonify(
            {
                "success": True,
                "value": value,
                "pair": {"lower": lower, "upper": upper},
                "query": query.model_dump(),
            }
        ),
        200,
    )


# ******************************************************************************
# * GET /api/theory/c-delta - Mixing constant C(delta)
# ******************************************************************************
@theory_bp.route("/c-delta", methods=["GET"])
def get_c_delta():
    raw = request.args.get("delta")
    if raw is None:
        return _invalid("Query parameter 'delta' is required")
    try:
        delta = float(raw)
    except ValueError:
        return _invalid(f"delta must be a number, got '{raw}'")

    return jsonify({"success": True, "delta": delta, "c_delta": c_delta(delta)}), 200
