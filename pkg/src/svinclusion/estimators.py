"""scikit-learn style wrapper around :func:`svinclusion.builder.build`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidArgumentError
from .builder import BoundaryData, BuildConfig, build
from .mesh import Domain


class SingularValueSolver(TransformerMixin, BaseEstimator):
    """Lipschitz u = g on the boundary of the unit cube with all singular values of Du near c.

    ``fit`` runs the construction (the data argument is ignored: the problem
    is defined by the parameters alone). ``predict`` evaluates u,
    ``transform`` returns Du flattened row-major and ``score`` is the
    covered volume fraction.

    Fitted attributes: ``map_``, ``report_``, ``coverage_``.
    """

    def __init__(self, n=2, N=2, grid=32, c=1.0, eps=0.05, max_depth=6, cutoff_fraction=0.1,
                 coverage_target=0.9, boundary_gradient=None, seed=0, max_cells=None):
        self.n = n
        self.N = N
        self.grid = grid
        self.c = c
        self.eps = eps
        self.max_depth = max_depth
        self.cutoff_fraction = cutoff_fraction
        self.coverage_target = coverage_target
        self.boundary_gradient = boundary_gradient
        self.seed = seed
        self.max_cells = max_cells

    def _boundary(self) -> BoundaryData:
        if self.boundary_gradient is None:
            return BoundaryData.zero(self.N, self.n)
        grad = np.asarray(self.boundary_gradient, dtype=float)
        if grad.shape != (self.N, self.n):
            raise InvalidArgumentError(f"boundary_gradient must have shape ({self.N}, {self.n})")
        return BoundaryData.affine(grad)

    def fit(self, X=None, y=None):
        cfg = BuildConfig(c=self.c, eps=self.eps, max_depth=self.max_depth, cutoff_fraction=self.cutoff_fraction,
                          seed=self.seed, coverage_target=self.coverage_target, max_cells=self.max_cells)
        self.map_, self.report_ = build(Domain.unit_cube(self.n, self.grid), self._boundary(), cfg)
        self.coverage_ = self.report_.coverage
        return self

    def predict(self, X):
        check_is_fitted(self, "map_")
        return self.map_(np.asarray(X, dtype=float))

    def transform(self, X):
        check_is_fitted(self, "map_")
        G = self.map_.gradient(np.asarray(X, dtype=float))
        return G.reshape(len(G), -1)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "map_")
        return float(self.coverage_)
