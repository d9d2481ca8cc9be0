"""Joint entity recognition and adverse drug event tagging engine."""

__version__ = "0.1.0"
