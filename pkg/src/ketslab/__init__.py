"""Deterministic federated-learning lab for trust-segmentation defenses and model poisoning."""

__version__ = "0.1.0"
