"""Federated graph collaborative filtering for proactive edge caching.

Per-client light graph convolution models are trained on local rating
data, aggregated with a loss-weighted federated averaging rule, and the
pooled client recommendation lists drive top-N cache selection. A
trace-driven harness replays held-out requests against that cache and
the oracle / bandit / random baselines.
"""

__version__ = "0.1.0"
