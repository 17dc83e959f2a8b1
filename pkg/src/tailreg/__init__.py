"""Generalised Pareto regression with shrinkage priors for financial tail risk."""
