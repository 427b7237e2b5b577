"""Masking-release toolbox: stimuli, auditory model, adaptive thresholds."""

__version__ = "0.1.0"
