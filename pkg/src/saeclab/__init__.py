"""Stereo acoustic echo cancellation lab: DSP, room simulation, baselines, neural pipeline."""

__version__ = "0.1.0"
