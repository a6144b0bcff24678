"""Markov chains: construction, sampling, counting and estimators."""
