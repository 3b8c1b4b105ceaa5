"""Closed-form training and inference for one-layer multi-head softmax attention
on synthetic in-context regression tasks."""

__version__ = "0.1.0"
