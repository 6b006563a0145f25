"""Box domains, Kuhn grids and piecewise-affine maps.

A :class:`PwAffineMap` is a batch of convex cells (polygons in 2-d,
polyhedra in 3-d), each carrying one affine map ``x -> G x + c``, together
with a simplicial triangulation of every cell. Cells are the unit of
refinement; simplices are what gets exported and located.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import InvalidArgumentError, InvalidInputError
from .polytope import PolyBatch, simplex_volumes


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod [lower_i, upper_i]`` with ``resolution`` cells per axis."""

    lower: tuple
    upper: tuple
    resolution: tuple

    def __post_init__(self):
        lo, hi, res = map(tuple, (self.lower, self.upper, self.resolution))
        if not (len(lo) == len(hi) == len(res)) or len(lo) == 0:
            raise InvalidArgumentError("lower, upper and resolution must have equal nonzero length")
        if any(h <= l for l, h in zip(lo, hi)):
            raise InvalidArgumentError("extents must be positive")
        if any(int(r) != r or r < 1 for r in res):
            raise InvalidArgumentError("resolution must be >= 1 per axis")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "resolution", tuple(int(v) for v in res))

    @classmethod
    def unit_cube(cls, n: int, resolution: int) -> "Domain":
        return cls((0.0,) * n, (1.0,) * n, (resolution,) * n)

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.resolution)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def on_boundary(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.any((np.abs(pts - lo) <= tol) | (np.abs(pts - hi) <= tol), axis=-1)

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.lower) - tol) & (pts <= np.asarray(self.upper) + tol), axis=-1)

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals ``a`` and offsets ``b`` with the box = {a x <= b}."""
        n = self.n
        a = np.concatenate([-np.eye(n), np.eye(n)])
        b = np.concatenate([-np.asarray(self.lower), np.asarray(self.upper)])
        return a, b


# ------------------------------------------------------------ polytope utils


def kuhn_simplices(dom: Domain) -> np.ndarray:
    """Kuhn/Freudenthal triangulation: n! simplices per grid cell, shape (M, n+1, n)."""
    n = dom.n
    h = dom.spacing
    lo = np.asarray(dom.lower)
    origins = np.array(list(itertools.product(*[range(r) for r in dom.resolution])), dtype=float)
    perms = list(itertools.permutations(range(n)))
    ref = np.zeros((len(perms), n + 1, n))
    for k, perm in enumerate(perms):
        # walk from the cell origin along the axes in permutation order
        ref[k] = np.cumsum(np.vstack([np.zeros(n), np.eye(n)[list(perm)]]), axis=0)
    sims = (origins[:, None, None, :] + ref[None]) * h + lo
    return sims.reshape(-1, n + 1, n)


def affine_from_vertices(simplices: np.ndarray, values: np.ndarray):
    """Exact gradient (M, N, n) and offset (M, N) of the affine interpolant."""
    edges = simplices[:, 1:, :] - simplices[:, :1, :]  # (M, n, n)
    dv = values[:, 1:, :] - values[:, :1, :]  # (M, n, N)
    grads = np.swapaxes(np.linalg.solve(edges, dv), 1, 2)  # solve E G^T = dv
    offsets = values[:, 0, :] - np.einsum("mai,mi->ma", grads, simplices[:, 0, :])
    return grads, offsets


# ---------------------------------------------------------- the map itself


@dataclass
class PwAffineMap:
    """Continuous piecewise-affine map on a box, u(x) = grads[c] x + offsets[c] on cell c."""

    domain: Domain
    cells: PolyBatch
    grads: np.ndarray
    offsets: np.ndarray
    boundary_data: object = None
    _simplices: Optional[np.ndarray] = field(default=None, repr=False)
    _simplex_cell: Optional[np.ndarray] = field(default=None, repr=False)
    _volumes: Optional[np.ndarray] = field(default=None, repr=False)
    _locator: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def N(self) -> int:
        return self.grads.shape[1]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def _triangulate(self):
        self._simplices, self._simplex_cell = self.cells.simplices()

    @property
    def simplices(self) -> np.ndarray:
        if self._simplices is None:
            self._triangulate()
        return self._simplices

    @property
    def simplex_cell(self) -> np.ndarray:
        if self._simplex_cell is None:
            self._triangulate()
        return self._simplex_cell

    @property
    def simplex_grads(self) -> np.ndarray:
        return self.grads[self.simplex_cell]

    @property
    def simplex_offsets(self) -> np.ndarray:
        return self.offsets[self.simplex_cell]

    @property
    def cell_volumes(self) -> np.ndarray:
        if self._volumes is None:
            vol = simplex_volumes(self.simplices)
            self._volumes = np.bincount(self.simplex_cell, weights=vol, minlength=self.n_cells)
        return self._volumes

    def scaled(self, c: float) -> "PwAffineMap":
        return PwAffineMap(self.domain, self.cells, c * self.grads, c * self.offsets, self.boundary_data,
                           self._simplices, self._simplex_cell, self._volumes, self._locator)

    def locate(self, pts) -> np.ndarray:
        """Simplex index containing each point (-1 if outside every simplex)."""
        if self._locator is None:
            self._locator = SimplexLocator(self.simplices, self.domain)
        return self._locator(np.atleast_2d(np.asarray(pts, dtype=float)))

    def gradient(self, pts) -> np.ndarray:
        idx = self.locate(pts)
        if np.any(idx < 0):
            raise InvalidInputError("some points lie outside the mesh")
        return self.simplex_grads[idx]

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = self.locate(pts)
        if np.any(idx < 0):
            raise InvalidInputError("some points lie outside the mesh")
        return np.einsum("mai,mi->ma", self.simplex_grads[idx], pts) + self.simplex_offsets[idx]

    def vertex_values(self) -> np.ndarray:
        """u at every simplex vertex, computed from the owning cell (M, n+1, N)."""
        g, c = self.simplex_grads, self.simplex_offsets
        return np.einsum("mai,mvi->mva", g, self.simplices) + c[:, None, :]


class SimplexLocator:
    """Bucket-grid point location for a (possibly non-conforming) simplicial mesh."""

    def __init__(self, simplices: np.ndarray, domain: Domain, target_per_bin: int = 8):
        self.simplices = simplices
        M, _, n = simplices.shape
        self.lo = np.asarray(domain.lower)
        ext = np.asarray(domain.upper) - self.lo
        bins = max(1, int(round((M / target_per_bin) ** (1.0 / n))))
        self.bins = np.full(n, bins)
        self.width = ext / self.bins
        edges = simplices[:, 1:, :] - simplices[:, :1, :]
        self.inv = np.linalg.inv(np.swapaxes(edges, 1, 2))  # barycentric solve
        self.origin = simplices[:, 0, :]
        bmin = np.clip(np.floor((simplices.min(axis=1) - self.lo) / self.width - 1e-9).astype(int), 0, self.bins - 1)
        bmax = np.clip(np.floor((simplices.max(axis=1) - self.lo) / self.width + 1e-9).astype(int), 0, self.bins - 1)
        span = bmax - bmin + 1
        count = np.prod(span, axis=1)
        owner = np.repeat(np.arange(M), count)
        # enumerate every bin in each simplex's bounding box
        offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        cells = np.empty((len(owner), n), dtype=int)
        rem = offs.copy()
        for d in range(n - 1, -1, -1):
            s = span[owner, d]
            cells[:, d] = bmin[owner, d] + rem % s
            rem //= s
        flat = np.ravel_multi_index(cells.T, tuple(self.bins))
        order = np.argsort(flat, kind="stable")
        self.entries = owner[order]
        self.starts = np.searchsorted(flat[order], np.arange(np.prod(self.bins) + 1))

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        b = np.clip(np.floor((pts - self.lo) / self.width).astype(int), 0, self.bins - 1)
        flat = np.ravel_multi_index(b.T, tuple(self.bins))
        start, stop = self.starts[flat], self.starts[flat + 1]
        result = np.full(len(pts), -1)
        best = np.full(len(pts), -np.inf)
        kmax = int((stop - start).max()) if len(pts) else 0
        for k in range(kmax):
            live = start + k < stop
            if not live.any():
                break
            pi = np.nonzero(live)[0]
            s = self.entries[start[pi] + k]
            lam = np.einsum("mij,mj->mi", self.inv[s], pts[pi] - self.origin[s])
            lam0 = 1.0 - lam.sum(axis=1)
            score = np.minimum(lam.min(axis=1), lam0)
            better = score > best[pi]
            best[pi[better]] = score[better]
            result[pi[better]] = s[better]
        result[best < -1e-9] = -1
        return result
