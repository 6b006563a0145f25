"""Exceptions and input validation helpers shared by every module."""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Non-finite or malformed array input."""


class InvalidArgumentError(ValueError):
    """Scalar argument outside its admissible range."""


class OutOfHullError(ValueError):
    """Matrix lies outside the hull required by an operation."""

    def __init__(self, message: str, lambda_max: float):
        super().__init__(message)
        self.lambda_max = lambda_max


class InfeasibleScaleError(ValueError):
    """The scale c does not dominate the Lipschitz constant of the boundary data."""


class InclusionViolationError(ValueError):
    """A cell gradient left the rank-one convex hull."""


class SingularConfigurationError(ValueError):
    """Energy derivative requested outside its domain."""


class OutOfDomainError(ValueError):
    """Difference-quotient stencil leaves the domain."""


class InvalidGridError(ValueError):
    pass


class InvalidRegionError(ValueError):
    pass


def check_matrix(a, *, allow_batch: bool = False, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a float array of shape (N, n), or (..., N, n) when batched.

    Raises InvalidInputError on NaN/Inf or bad dimensionality.
    """
    arr = np.asarray(a, dtype=float)
    if allow_batch:
        if arr.ndim < 2:
            raise InvalidInputError(f"{name} must have at least 2 dimensions, got {arr.ndim}")
    elif arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[-1] == 0 or arr.shape[-2] == 0:
        raise InvalidInputError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be positive, got {value}")
    return value
