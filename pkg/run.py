"""Command-line entry point: `python run.py <command> ...`."""

import sys

from config import Config

# Validate configuration before dispatching
try:
    Config.validate_config()
except ValueError as e:
    print(f"[ERROR] Configuration error: {e}", file=sys.stderr)
    sys.exit(2)

from markovrisk.cli import main

if __name__ == "__main__":
    sys.exit(main())
