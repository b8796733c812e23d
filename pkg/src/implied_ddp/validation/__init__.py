"""Synthetic data, exact oracles and sampler-correctness checks."""
