"""Batches of small convex polytopes in 2-d and 3-d.

A batch holds P polytopes, each as an H-representation ``A x + b <= 0``
(unit outward normals) together with its vertex list. Both are padded to a
common size and masked, so clipping every member by its own half space is a
handful of dense numpy operations instead of one hull computation per cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from ._validation import InvalidArgumentError

TOL = 1e-11
CHUNK = 8192


@dataclass
class PolyBatch:
    A: np.ndarray  # (P, K, n)
    b: np.ndarray  # (P, K)
    fmask: np.ndarray  # (P, K)
    X: np.ndarray  # (P, V, n)
    vmask: np.ndarray  # (P, V)

    def __len__(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[2]

    # ------------------------------------------------------------ creation

    @classmethod
    def empty(cls, n: int) -> "PolyBatch":
        return cls(np.zeros((0, 1, n)), np.zeros((0, 1)), np.zeros((0, 1), bool),
                   np.zeros((0, 1, n)), np.zeros((0, 1), bool))

    @classmethod
    def from_simplices(cls, sims: np.ndarray) -> "PolyBatch":
        """Batch of simplices (P, n+1, n); facet i is the one opposite vertex i."""
        sims = np.asarray(sims, dtype=float)
        P, k, n = sims.shape
        if k != n + 1:
            raise InvalidArgumentError("simplices must have n + 1 vertices")
        edges = sims[:, 1:, :] - sims[:, :1, :]
        inv = np.linalg.inv(np.swapaxes(edges, 1, 2))  # rows: gradients of lambda_1..n
        grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)  # (P, n+1, n)
        lam0 = np.concatenate([np.ones((P, 1)), np.zeros((P, n))], axis=1)
        offs = lam0 - np.einsum("pki,pi->pk", grads, sims[:, 0, :])
        # lambda_k(x) = grads_k . x + offs_k >= 0  <=>  -grads_k . x - offs_k <= 0
        norm = np.linalg.norm(grads, axis=2)
        A = -grads / norm[..., None]
        b = -offs / norm
        return cls(A, b, np.ones((P, n + 1), bool), sims.copy(), np.ones((P, n + 1), bool))

    @classmethod
    def box(cls, lower, upper) -> "PolyBatch":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        n = len(lo)
        eye = np.eye(n)
        A = np.concatenate([-eye, eye])[None]
        b = np.concatenate([lo, -hi])[None]
        X = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)[None]
        return cls(A, b, np.ones(b.shape, bool), X, np.ones(X.shape[:2], bool))

    @classmethod
    def from_points(cls, pts: np.ndarray) -> "PolyBatch":
        """Convex hull of one point set."""
        pts = np.asarray(pts, dtype=float)
        hull = ConvexHull(pts)
        eq = hull.equations
        _, first = np.unique(np.round(eq, 9), axis=0, return_index=True)
        eq = eq[np.sort(first)]
        X = pts[hull.vertices]
        return cls(eq[None, :, :-1], eq[None, :, -1], np.ones((1, len(eq)), bool),
                   X[None], np.ones((1, len(X)), bool))

    # ------------------------------------------------------------ plumbing

    def take(self, idx) -> "PolyBatch":
        if not isinstance(idx, slice):
            idx = np.asarray(idx)
        return PolyBatch(self.A[idx], self.b[idx], self.fmask[idx], self.X[idx], self.vmask[idx])

    @staticmethod
    def concat(batches) -> "PolyBatch":
        batches = [bt for bt in batches if len(bt)]
        if not batches:
            raise InvalidArgumentError("nothing to concatenate")
        K = max(bt.A.shape[1] for bt in batches)
        V = max(bt.X.shape[1] for bt in batches)
        parts = [bt._pad(K, V) for bt in batches]
        return PolyBatch(*(np.concatenate(f) for f in zip(*(astuple(p) for p in parts))))

    def _pad(self, K: int, V: int) -> "PolyBatch":
        P, k, n = self.A.shape
        v = self.X.shape[1]
        A = np.concatenate([self.A, np.zeros((P, K - k, n))], axis=1)
        b = np.concatenate([self.b, -np.ones((P, K - k))], axis=1)
        fm = np.concatenate([self.fmask, np.zeros((P, K - k), bool)], axis=1)
        X = np.concatenate([self.X, np.zeros((P, V - v, n))], axis=1)
        vm = np.concatenate([self.vmask, np.zeros((P, V - v), bool)], axis=1)
        return PolyBatch(A, b, fm, X, vm)

    def vertices(self, i: int) -> np.ndarray:
        return self.X[i][self.vmask[i]]

    def proj_range(self, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Min and max of d . x over each member (d of shape (n,) or (P, n))."""
        d = np.broadcast_to(d, (len(self), self.n))
        s = np.einsum("pvi,pi->pv", self.X, d)
        return np.where(self.vmask, s, np.inf).min(axis=1), np.where(self.vmask, s, -np.inf).max(axis=1)

    def centroids(self) -> np.ndarray:
        cnt = self.vmask.sum(axis=1)
        return np.einsum("pvi,pv->pi", self.X, self.vmask) / cnt[:, None]

    # ------------------------------------------------------------ clipping

    def clip(self, g, c) -> tuple["PolyBatch", np.ndarray]:
        """Intersect member p with {g_p . x + c_p <= 0}.

        Returns the nonempty results and the indices of the members they
        came from.
        """
        P, _, n = self.A.shape
        g = np.broadcast_to(np.asarray(g, dtype=float), (P, n))
        c = np.broadcast_to(np.asarray(c, dtype=float), (P,))
        outs, keeps = [], []
        for s in range(0, P, CHUNK):
            sl = slice(s, min(P, s + CHUNK))
            res, keep = _clip_chunk(self.take(sl), g[sl], c[sl])
            if len(keep):
                outs.append(res)
                keeps.append(keep + s)
        if not outs:
            return PolyBatch.empty(n), np.zeros(0, dtype=int)
        return PolyBatch.concat(outs), np.concatenate(keeps)

    # ------------------------------------------------------- triangulation

    def _facet_fans(self):
        """Ordered fan triangles (P, K, V-2, n, n) on every facet and their mask."""
        P, K, n = self.A.shape
        V = self.X.shape[1]
        dist = np.einsum("pki,pvi->pkv", self.A, self.X) + self.b[:, :, None]
        act = (np.abs(dist) <= 100 * TOL) & self.fmask[:, :, None] & self.vmask[:, None, :]
        cnt = act.sum(axis=2)
        cen = np.einsum("pkv,pvi->pki", act, self.X) / np.maximum(cnt, 1)[..., None]
        rel = self.X[:, None, :, :] - cen[:, :, None, :]  # (P, K, V, n)
        if n == 3:
            nrm = self.A
            axis = np.eye(3)[np.argmin(np.abs(nrm), axis=2)]
            e1 = np.cross(nrm, axis)
            e1 /= np.maximum(np.linalg.norm(e1, axis=2, keepdims=True), 1e-300)
            e2 = np.cross(nrm, e1)
            ang = np.arctan2(np.einsum("pkvi,pki->pkv", rel, e2), np.einsum("pkvi,pki->pkv", rel, e1))
        else:
            ang = np.zeros((P, K, V))
        ang = np.where(act, ang, np.inf)
        order = np.argsort(ang, axis=2, kind="stable")
        return act, cnt, order

    def _ordered_2d(self):
        rel = self.X - self.centroids()[:, None, :]
        ang = np.where(self.vmask, np.arctan2(rel[..., 1], rel[..., 0]), np.inf)
        order = np.argsort(ang, axis=1, kind="stable")
        return np.take_along_axis(self.X, order[..., None], 1), self.vmask.sum(axis=1)

    def simplices(self) -> tuple[np.ndarray, np.ndarray]:
        """Simplices (T, n+1, n) tiling every member, with their owner index."""
        P, K, n = self.A.shape
        V = self.X.shape[1]
        rows = np.arange(P)[:, None]
        if n == 2:
            ordered, cnt = self._ordered_2d()
            k = np.arange(1, V - 1)
            ok = k[None, :] + 1 < cnt[:, None]
            v0 = ordered[:, :1]
            va = ordered[:, 1:V - 1]
            vb = ordered[:, 2:V]
            tri = np.stack([np.broadcast_to(v0, va.shape), va, vb], axis=2)
            owner = np.broadcast_to(rows, ok.shape)
            return tri[ok], owner[ok]
        act, cnt, order = self._facet_fans()
        apex = self.X[:, 0, :]
        k = np.arange(1, V - 1)
        ok = (k[None, None, :] + 1 < cnt[:, :, None]) & ~act[:, :, :1]
        pr = np.arange(P)[:, None, None]
        o0 = self.X[pr, order[:, :, :1]]
        oa = self.X[pr, order[:, :, 1:V - 1]]
        ob = self.X[pr, order[:, :, 2:V]]
        tets = np.stack([np.broadcast_to(apex[:, None, None, :], oa.shape),
                         np.broadcast_to(o0, oa.shape), oa, ob], axis=3)
        owner = np.broadcast_to(pr, ok.shape)
        return tets[ok], owner[ok]

    def volumes(self) -> np.ndarray:
        sims, owner = self.simplices()
        return np.bincount(owner, weights=simplex_volumes(sims), minlength=len(self))

    def surface_areas(self) -> np.ndarray:
        P, K, n = self.A.shape
        if n == 2:
            ordered, cnt = self._ordered_2d()
            idx = np.arange(ordered.shape[1])[None, :]
            nxt = np.where(idx + 1 < cnt[:, None], idx + 1, 0)
            seg = np.linalg.norm(np.take_along_axis(ordered, nxt[..., None], 1) - ordered, axis=2)
            return np.where(idx < cnt[:, None], seg, 0.0).sum(axis=1)
        act, cnt, order = self._facet_fans()
        V = self.X.shape[1]
        pr = np.arange(P)[:, None, None]
        o0 = self.X[pr, order[:, :, :1]]
        oa = self.X[pr, order[:, :, 1:V - 1]]
        ob = self.X[pr, order[:, :, 2:V]]
        k = np.arange(1, V - 1)
        ok = k[None, None, :] + 1 < cnt[:, :, None]
        area = 0.5 * np.linalg.norm(np.cross(oa - o0, ob - o0), axis=3)
        return np.where(ok, area, 0.0).sum(axis=(1, 2))

    def inradius_estimate(self) -> np.ndarray:
        """n * volume / surface area (exact for balls, within a factor n of the inradius)."""
        return self.n * self.volumes() / self.surface_areas()


def astuple(p: PolyBatch):
    return p.A, p.b, p.fmask, p.X, p.vmask


def simplex_volumes(simplices: np.ndarray) -> np.ndarray:
    n = simplices.shape[-1]
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    return np.abs(np.linalg.det(edges)) / float(np.prod(np.arange(1, n + 1)))


def _solve_rows(rows: np.ndarray, rhs: np.ndarray):
    """Solve stacked 2x2 or 3x3 systems rows @ x = rhs by Cramer's rule."""
    if rows.shape[-1] == 2:
        a, b = rows[..., 0, :], rows[..., 1, :]
        det = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        safe = np.where(np.abs(det) > 1e-12, det, 1.0)
        x = (rhs[..., 0] * b[..., 1] - rhs[..., 1] * a[..., 1]) / safe
        y = (a[..., 0] * rhs[..., 1] - b[..., 0] * rhs[..., 0]) / safe
        return np.stack([x, y], axis=-1), np.abs(det) > 1e-12
    a1, a2, a3 = rows[..., 0, :], rows[..., 1, :], rows[..., 2, :]
    c23, c31, c12 = np.cross(a2, a3), np.cross(a3, a1), np.cross(a1, a2)
    det = np.einsum("...i,...i->...", a1, c23)
    safe = np.where(np.abs(det) > 1e-12, det, 1.0)
    x = (rhs[..., 0, None] * c23 + rhs[..., 1, None] * c31 + rhs[..., 2, None] * c12) / safe[..., None]
    return x, np.abs(det) > 1e-12


def _compact(mask: np.ndarray, *arrays):
    """Move masked entries of axis 1 to the front and trim to the longest row."""
    order = np.argsort(~mask, axis=1, kind="stable")
    width = max(int(mask.sum(axis=1).max()), 1)
    order = order[:, :width]
    rows = np.arange(mask.shape[0])[:, None]
    return [np.take_along_axis(mask, order, 1)] + [a[rows, order] for a in arrays]


def _clip_chunk(pb: PolyBatch, g: np.ndarray, c: np.ndarray):
    P, K, n = pb.A.shape
    nrm = np.linalg.norm(g, axis=1)
    flat = nrm < 1e-14
    g = np.where(flat[:, None], 0.0, g / np.where(flat, 1.0, nrm)[:, None])
    c = np.where(flat, np.where(c <= 0, -1.0, 1.0), c / np.where(flat, 1.0, nrm))

    side = np.einsum("pvi,pi->pv", pb.X, g) + c[:, None]
    side_v = np.where(pb.vmask, side, np.inf)
    alive = (side_v < -TOL).any(axis=1)
    untouched = (np.where(pb.vmask, side, -np.inf) <= TOL).all(axis=1)

    # new vertices: the cutting plane meets n - 1 facets
    combos = np.array(list(itertools.combinations(range(K), n - 1)), dtype=int).reshape(-1, n - 1)
    C = len(combos)
    rows = np.concatenate([pb.A[:, combos, :], np.broadcast_to(g[:, None, None, :], (P, C, 1, n))], axis=2)
    rhs = -np.concatenate([pb.b[:, combos], np.broadcast_to(c[:, None, None], (P, C, 1))], axis=2)
    xs, ok = _solve_rows(rows, rhs)
    ok &= pb.fmask[:, combos].all(axis=2)
    viol = np.einsum("pki,pci->pck", pb.A, xs) + pb.b[:, None, :]
    ok &= np.where(pb.fmask[:, None, :], viol, -np.inf).max(axis=2) <= TOL

    keep_old = pb.vmask & (side <= TOL)
    X = np.concatenate([pb.X, xs], axis=1)
    vmask = np.concatenate([keep_old, ok], axis=1)
    vmask, X = _compact(vmask, X)
    # a vertex met by more than n planes shows up several times
    V = X.shape[1]
    diff = X[:, :, None, :] - X[:, None, :, :]
    close = np.einsum("puvi,puvi->puv", diff, diff) <= (10 * TOL) ** 2
    earlier = np.tril(np.ones((V, V), bool), -1)
    dup = (close & vmask[:, None, :] & earlier[None]).any(axis=2)
    if dup.any():
        vmask, X = _compact(vmask & ~dup, X)

    A = np.concatenate([pb.A, g[:, None, :]], axis=1)
    b = np.concatenate([pb.b, c[:, None]], axis=1)
    fmask = np.concatenate([pb.fmask, ~untouched[:, None]], axis=1)
    dist = np.einsum("pki,pvi->pkv", A, X) + b[:, :, None]
    hits = ((np.abs(dist) <= 10 * TOL) & vmask[:, None, :]).sum(axis=2)
    fmask &= hits >= n
    fmask, A, b = _compact(fmask, A, b)

    keep = np.nonzero(alive & (vmask.sum(axis=1) >= n + 1))[0]
    out = PolyBatch(A[keep], b[keep], fmask[keep], X[keep], vmask[keep])
    return out, keep
