"""Occlusion robustness verification for ReLU feed-forward classifiers."""

__version__ = "0.1.0"
