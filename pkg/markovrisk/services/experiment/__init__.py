"""Experiment runner, CSV/SVG reports and the self-test suite."""
