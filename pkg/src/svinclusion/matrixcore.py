"""Small dense rectangular matrix algebra.

Everything here works on single matrices of shape (N, n) and, where noted,
on stacks of shape (..., N, n). The SVD is a batched one-sided Jacobi
iteration; at the sizes used in this package (N, n <= 6) it is accurate to
a few ulps and vectorises well over thousands of matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidArgumentError, check_matrix, check_positive

RANK_TOL = 1e-8
ABS_FLOOR = 1e-14
_MAX_SWEEPS = 40


@dataclass(frozen=True)
class SvdResult:
    """``a = u_factor @ D @ v_factor.T`` with ``D`` rectangular diagonal.

    ``sigma`` is nondecreasing and ``D[..., i, i] = sigma[..., i]``.
    """

    u_factor: np.ndarray
    sigma: np.ndarray
    v_factor: np.ndarray

    def diag(self) -> np.ndarray:
        N = self.u_factor.shape[-1]
        n = self.v_factor.shape[-1]
        return rect_diag(self.sigma, N, n)


def rect_diag(values, rows: int, cols: int) -> np.ndarray:
    """Rectangular diagonal matrix (or stack) carrying ``values`` on its diagonal."""
    values = np.asarray(values, dtype=float)
    k = values.shape[-1]
    out = np.zeros(values.shape[:-1] + (rows, cols))
    idx = np.arange(k)
    out[..., idx, idx] = values
    return out


def rect_identity(rows: int, cols: int) -> np.ndarray:
    """The rectangular identity [I | 0] (or its transpose shape)."""
    return rect_diag(np.ones(min(rows, cols)), rows, cols)


def _one_sided_jacobi(m: np.ndarray):
    """Orthogonalise the columns of a stack ``m`` of shape (B, r, k), r >= k.

    Returns (w, j) with ``m @ j = w``, ``j`` orthogonal and the columns of
    ``w`` mutually orthogonal.
    """
    w = m.copy()
    B, _, k = w.shape
    j = np.broadcast_to(np.eye(k), (B, k, k)).copy()
    eps = np.finfo(float).eps
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                wp = w[:, :, p]
                wq = w[:, :, q]
                alpha = np.einsum("bi,bi->b", wp, wp)
                beta = np.einsum("bi,bi->b", wq, wq)
                gamma = np.einsum("bi,bi->b", wp, wq)
                active = np.abs(gamma) > eps * np.sqrt(alpha * beta)
                active &= gamma != 0.0
                if not np.any(active):
                    continue
                rotated = True
                g = np.where(active, gamma, 1.0)
                with np.errstate(over="ignore", divide="ignore"):
                    # |zeta| = inf means the pair is already orthogonal: t = 0
                    zeta = (beta - alpha) / (2.0 * g)
                    t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(zeta == 0.0, 1.0, t)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                c = np.where(active, c, 1.0)[:, None]
                s = np.where(active, s, 0.0)[:, None]
                new_p = c * wp - s * wq
                new_q = s * wp + c * wq
                w[:, :, p] = new_p
                w[:, :, q] = new_q
                jp = j[:, :, p].copy()
                jq = j[:, :, q]
                j[:, :, p] = c * jp - s * jq
                j[:, :, q] = s * jp + c * jq
        if not rotated:
            break
    return w, j


def _complete_basis(q: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns ``q[..., :, valid]`` to a full orthogonal (B, r, r).

    Valid columns must come first; the remaining slots are filled with
    Gram-Schmidt-orthogonalised unit vectors.
    """
    B, r, k = q.shape
    basis = np.zeros((B, r, r))
    count = np.zeros(B, dtype=int)
    rows = np.arange(B)
    candidates = [(q[:, :, i], valid[:, i]) for i in range(k)]
    eye = np.eye(r)
    candidates += [(np.broadcast_to(eye[:, i], (B, r)), np.ones(B, dtype=bool)) for i in range(r)]
    for vec, ok in candidates:
        v = vec.copy()
        for _ in range(2):
            coeff = np.einsum("bij,bi->bj", basis, v)
            v = v - np.einsum("bij,bj->bi", basis, coeff)
        norm = np.linalg.norm(v, axis=1)
        accept = ok & (norm > 0.5) & (count < r)
        if np.any(accept):
            sel = rows[accept]
            basis[sel, :, count[sel]] = v[sel] / norm[sel, None]
            count[sel] += 1
    return basis


def svd(a) -> SvdResult:
    """Singular value decomposition with singular values in increasing order.

    Accepts a single (N, n) matrix or a stack (..., N, n).
    """
    arr = check_matrix(a, allow_batch=True)
    N, n = arr.shape[-2:]
    lead = arr.shape[:-2]
    flat = arr.reshape((-1, N, n))
    transpose = N < n
    m = np.swapaxes(flat, 1, 2) if transpose else flat
    r, k = m.shape[1:]
    w, j = _one_sided_jacobi(m)
    sig = np.linalg.norm(w, axis=1)  # (B, k)

    order = np.argsort(-sig, axis=1, kind="stable")
    sig = np.take_along_axis(sig, order, axis=1)
    w = np.take_along_axis(w, order[:, None, :], axis=2)
    j = np.take_along_axis(j, order[:, None, :], axis=2)
    scale = np.maximum(sig[:, :1], np.finfo(float).tiny)
    valid = sig > 1e-15 * scale
    safe = np.where(valid, sig, 1.0)
    qcols = np.where(valid[:, None, :], w / safe[:, None, :], 0.0)
    qfull = _complete_basis(qcols, valid)

    # switch to increasing order: reverse the first k columns of both factors
    rev = np.arange(k)[::-1]
    sig = sig[:, rev]
    j = j[:, :, rev]
    qfull = np.concatenate([qfull[:, :, :k][:, :, rev], qfull[:, :, k:]], axis=2)

    if transpose:
        u, v = j, qfull
    else:
        u, v = qfull, j
    return SvdResult(
        u_factor=u.reshape(lead + u.shape[1:]),
        sigma=sig.reshape(lead + (k,)),
        v_factor=v.reshape(lead + v.shape[1:]),
    )


def singular_values(a) -> np.ndarray:
    """Singular values in nondecreasing order, length min(N, n)."""
    return svd(a).sigma


def lambda_max(a) -> np.ndarray | float:
    """Largest singular value (operator norm)."""
    s = singular_values(a)[..., -1]
    return float(s) if np.ndim(s) == 0 else s


def ky_fan_norm(a, k: int) -> float:
    """Sum of the ``k`` largest singular values; k = 1 is the operator norm."""
    arr = check_matrix(a, allow_batch=True)
    m = min(arr.shape[-2:])
    if int(k) != k or not 1 <= k <= m:
        raise InvalidArgumentError(f"k must be an integer in 1..{m}, got {k}")
    s = singular_values(arr)[..., m - int(k):].sum(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def numerical_rank(a, tol: float = RANK_TOL) -> int | np.ndarray:
    """Number of singular values above ``tol * lambda_max`` and above 1e-14."""
    check_positive(tol, "tol")
    s = singular_values(a)
    thresh = np.maximum(tol * s[..., -1:], ABS_FLOOR)
    r = np.sum(s > thresh, axis=-1)
    return int(r) if np.ndim(r) == 0 else r


def orth_complement_projection(m, tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projection (N x N) onto the complement of the column space of ``m``.

    Zero when ``m`` has full row rank N.
    """
    check_positive(tol, "tol")
    res = svd(m)
    s = res.sigma
    N = res.u_factor.shape[-1]
    k = s.shape[-1]
    thresh = np.maximum(tol * s[..., -1:], ABS_FLOOR)
    # columns of U beyond k span nothing of the range; within the first k,
    # keep those whose singular value is numerically zero
    keep = np.ones(s.shape[:-1] + (N,), dtype=bool)
    keep[..., :k] = s <= thresh
    u = res.u_factor * keep[..., None, :]
    proj = u @ np.swapaxes(u, -1, -2)
    return 0.5 * (proj + np.swapaxes(proj, -1, -2))


def random_orthogonal(dim: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrices via QR with sign correction."""
    shape = (dim, dim) if size is None else (size, dim, dim)
    z = rng.standard_normal(shape)
    q, r = np.linalg.qr(z)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d = np.where(d == 0, 1.0, d)
    return q * d[..., None, :]
