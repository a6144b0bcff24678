"""Risk evaluation: exact enumeration, Monte Carlo and lower-bound priors."""
