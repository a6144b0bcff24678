"""gunicorn entry point: `gunicorn wsgi:app` serves the calculator API."""

import sys

from config import Config
from markovrisk import create_app

try:
    Config.validate_config()
except ValueError as e:
    print(f"[ERROR] Configuration error: {e}", file=sys.stderr)
    raise

print(
    f"[PASS] Configuration validation passed (debug={Config.DEBUG}, workers={Config.RISK_WORKERS})",
    file=sys.stderr,
)

# gunicorn imports this object; the development server lives behind `run.py serve`
app = create_app()

if __name__ == "__main__":
    app.run(debug=Config.DEBUG)
