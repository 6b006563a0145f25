"""Piecewise-affine solutions of prescribed singular value problems.

Modules: ``matrixcore`` (batched SVD), ``hulls`` (rank-one convex hulls and
laminates), ``builder`` (the refinement construction), ``energy`` (matrix
energies H and the operator A_inf), ``dsolution`` (diffuse hessians and
residuals), ``io`` and ``cli``.
"""

__version__ = "0.1.0"

from ._validation import (  # noqa: E402
    InclusionViolationError,
    InfeasibleScaleError,
    InvalidArgumentError,
    InvalidGridError,
    InvalidInputError,
    InvalidRegionError,
    OutOfDomainError,
    OutOfHullError,
    SingularConfigurationError,
)
from .builder import BoundaryData, BuildConfig, build  # noqa: E402
from .mesh import Domain, PwAffineMap  # noqa: E402

__all__ = [
    "BoundaryData", "BuildConfig", "Domain", "PwAffineMap", "build",
    "InclusionViolationError", "InfeasibleScaleError", "InvalidArgumentError", "InvalidGridError",
    "InvalidInputError", "InvalidRegionError", "OutOfDomainError", "OutOfHullError",
    "SingularConfigurationError", "__version__",
]
