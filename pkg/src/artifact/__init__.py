"""Invariant ellipsoids, floating-point corrections and ACSL contracts for uncertain control systems."""

__version__ = "0.1.0"

from .errors import ArtifactError, InputError, InfeasibleError, NumericError  # noqa: E402

__all__ = ["__version__", "ArtifactError", "InputError", "InfeasibleError", "NumericError"]
