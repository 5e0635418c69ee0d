"""Hybrid generative-keyframe video codec."""

__version__ = "0.1.0"
