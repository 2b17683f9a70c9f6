"""Bayesian additive trees with graph-split rules and an informed sampler."""
