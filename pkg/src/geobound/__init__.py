"""Curvature-aware covering, Rademacher and generalization bounds on space forms."""

__version__ = "0.1.0"
