"""Error taxonomy shared by the services, the CLI and the HTTP API.

Each error carries the ``error_code`` used in JSON error envelopes.
"""


class MarkovRiskError(Exception):
    """Base class for every error raised on purpose by markovrisk."""

    error_code = "SERVER_ERROR"


class ValidationError(MarkovRiskError, ValueError):
    """Bad parameters, invariant violations, unknown tokens."""

    error_code = "VALIDATION_ERROR"


class EnumerationBudgetError(ValidationError):
    """Exact enumeration would visit more than the configured k^n sequences."""

    error_code = "BUDGET_EXCEEDED"


class ConvergenceError(MarkovRiskError, RuntimeError):
    """An iterative routine (power iteration, rejection sampling) gave up."""

    error_code = "CONVERGENCE_ERROR"
