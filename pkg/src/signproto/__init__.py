"""Few-shot prototypical networks for skeleton-based isolated sign recognition."""

__version__ = "0.1.0"
