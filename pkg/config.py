"""Configuration and environment loading."""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_int(name, default):
    """Read an integer variable, keeping the raw string when it does not parse."""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return raw


class Config:
    """Library and CLI configuration loaded from environment variables."""

    DEBUG = os.getenv("MARKOVRISK_DEBUG", "False").lower() == "true"

    # Worker pool bound for Monte Carlo fan-out (default: available cores)
    RISK_WORKERS = _env_int("RISK_WORKERS", os.cpu_count() or 1)

    # Where `run` writes CSV and SVG files when no --out-dir is given
    OUTPUT_DIR = os.getenv("MARKOVRISK_OUTPUT_DIR", "results")

    # Master seed used when neither config file nor flag provides one
    MASTER_SEED = _env_int("MARKOVRISK_MASTER_SEED", 0)

    # Largest k**n that exact risk enumeration will visit
    ENUMERATION_BUDGET = _env_int("MARKOVRISK_ENUMERATION_BUDGET", 10**7)

    @classmethod
    def validate_config(cls):
        """Validate environment-derived settings.

        Raises:
            ValueError: listing every variable that does not hold a valid value.
        """
        invalid_vars = []

        positive_ints = [
            ("RISK_WORKERS", cls.RISK_WORKERS),
            ("MARKOVRISK_ENUMERATION_BUDGET", cls.ENUMERATION_BUDGET),
        ]
        for var_name, var_value in positive_ints:
            if not isinstance(var_value, int) or var_value < 1:
                invalid_vars.append(var_name)

        if not isinstance(cls.MASTER_SEED, int) or cls.MASTER_SEED < 0:
            invalid_vars.append("MARKOVRISK_MASTER_SEED")

        if not cls.OUTPUT_DIR:
            invalid_vars.append("MARKOVRISK_OUTPUT_DIR")

        if invalid_vars:
            raise ValueError(
                f"Invalid environment variables: {', '.join(invalid_vars)}. "
                "Please check your .env file or environment configuration."
            )

    @classmethod
    def setup_logging(cls):
        """Set up application logging based on DEBUG flag."""
        from markovrisk.services.utility.logger import setup_logging

        setup_logging(debug=cls.DEBUG)
