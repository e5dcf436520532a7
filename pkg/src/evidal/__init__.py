"""Evidential multi-label classification with consistency-based
semi-supervised losses and uncertainty-driven active learning, on synthetic
class-imbalanced data at desk scale."""

__version__ = "0.1.0"
