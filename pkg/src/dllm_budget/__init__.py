"""Compute-budgeted canvas planning and FLOP simulation for diffusion LLMs."""

__version__ = "0.1.0"
