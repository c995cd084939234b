"""Explore-Twice-then-Commit bandits with pre-trained representation networks."""

__version__ = "0.1.0"
