"""Experience replay engine with semantic clip-score prioritization."""

__version__ = "0.1.0"
