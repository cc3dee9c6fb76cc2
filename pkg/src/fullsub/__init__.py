"""Propensity-score weighting and full subclassification."""
