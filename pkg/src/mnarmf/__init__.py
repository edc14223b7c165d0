"""Learning rating predictors from missing-not-at-random feedback."""
