"""Flask app factory. Registers the calculator blueprints and error handlers."""

from datetime import datetime, timezone
import logging

from flask import Flask, jsonify

from config import Config
from markovrisk.services.utility.errors import ConvergenceError, MarkovRiskError, ValidationError

logger = logging.getLogger(__name__)

API_VERSION = "1.0.0"

API_ENDPOINTS = {
    "bound": "/api/theory/bound",
    "c_delta": "/api/theory/c-delta",
    "prediction_prior": "/api/priors/prediction",
    "estimation_prior": "/api/priors/estimation",
}


def _error_response(code: str, message: str, status: int):
    return jsonify({"success": False, "error_code": code, "message": message}), status


def _check_numerics() -> None:
    """Two-state chain whose stationary law is (2/3, 1/3)."""
    from markovrisk.services.markov.markov_service import TransitionMatrix, stationary_distribution

    pi = stationary_distribution(TransitionMatrix([[0.9, 0.1], [0.2, 0.8]]))
    if abs(pi[0] - 2.0 / 3.0) > 1e-9:
        raise RuntimeError(f"stationary law came out as {pi.probs.tolist()}")


HEALTH_CHECKS = {
    "numerics": _check_numerics,
    "config": Config.validate_config,
}


def _register_error_handlers(app: Flask) -> None:
    # Library errors carry their own error_code
    @app.errorhandler(ValidationError)
    def validation_error(error):
        logger.warning(f"Validation error: {error}")
        return _error_response(error.error_code, str(error), 400)

    @app.errorhandler(ConvergenceError)
    def convergence_error(error):
        logger.warning(f"Convergence error: {error}")
        return _error_response(error.error_code, str(error), 422)

    @app.errorhandler(MarkovRiskError)
    def library_error(error):
        logger.error(f"Library error: {error}", exc_info=True)
        return _error_response(error.error_code, str(error), 500)

    # HTTP-level errors
    @app.errorhandler(400)
    def bad_request(error):
        logger.warning(f"Bad request: {error}")
        return _error_response("BAD_REQUEST", "The request could not be understood by the server", 400)

    @app.errorhandler(404)
    def not_found(error):
        return _error_response("NOT_FOUND", "The requested resource was not found", 404)

    @app.errorhandler(405)
    def method_not_allowed(error):
        return _error_response("METHOD_NOT_ALLOWED", "Method not allowed for this endpoint", 405)

    @app.errorhandler(500)
    def internal_error(error):
        logger.error(f"Internal server error: {error}", exc_info=True)
        return _error_response("SERVER_ERROR", "An unexpected error occurred", 500)


def create_app():
    """
    Build the calculator API.

    Returns:
        Flask: app with the theory and priors blueprints, JSON error
        envelopes, /health and the /api index
    """
    app = Flask(__name__)
    app.config.from_object(Config)

    Config.setup_logging()
    logger.info("Starting markovrisk API initialization")

    from markovrisk.api.theory import theory_bp
    from markovrisk.api.priors import priors_bp

    app.register_blueprint(theory_bp, url_prefix="/api/theory")
    app.register_blueprint(priors_bp, url_prefix="/api/priors")
    _register_error_handlers(app)

    @app.route("/health")
    def health_check():
        """
        Run every entry of HEALTH_CHECKS.

        Returns:
            200 OK if all checks pass
            503 Service Unavailable otherwise
        """
        services = {}
        for name, check in HEALTH_CHECKS.items():
            try:
                check()
                services[name] = "healthy"
            except Exception as e:
                logger.error(f"Health check '{name}' failed: {e}")
                services[name] = "unhealthy"

        healthy = all(state == "healthy" for state in services.values())
        body = {
            "status": "healthy" if healthy else "unhealthy",
            "services": services,
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        }
        return jsonify(body), 200 if healthy else 503

    @app.route("/api")
    def api_root():
        return jsonify(
            {"message": "markovrisk calculator API", "version": API_VERSION, "endpoints": API_ENDPOINTS}
        )

    return app
