"""Multimodal action recognition with per-sensor classifiers and decision-level fusion."""

__version__ = "0.1.0"
