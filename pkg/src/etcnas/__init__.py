"""Cell-based neural architecture search for early encrypted-traffic classification."""

__version__ = "0.1.0"
