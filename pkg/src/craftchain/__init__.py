"""Hierarchical imitation pipeline for a deterministic crafting-chain gridworld."""

__version__ = "0.1.0"
