"""Energy densities H(P) = h(P P^T), their derivatives and the A-infinity tensor.

Tensors indexed (alpha, i, beta, j) are stored as arrays of shape
(..., N, n, N, n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import matrixcore as mc
from ._validation import InvalidArgumentError, InvalidGridError, SingularConfigurationError, check_matrix

FD_STEP = 1e-5


def _gram(p: np.ndarray) -> np.ndarray:
    return p @ np.swapaxes(p, -1, -2)


@dataclass(frozen=True)
class EnergyDensity:
    """H(P) = h(P P^T).

    ``h`` and ``h_x`` act on stacks of symmetric (N, N) matrices. ``hess``
    optionally gives the analytic second derivative of H in P; without it
    second derivatives are central differences of ``grad_H``.
    """

    name: str
    h: Callable[[np.ndarray], np.ndarray]
    h_x: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    requires_full_rank: bool = False

    def __call__(self, p) -> np.ndarray:
        return self.h(_gram(np.asarray(p, dtype=float)))


def _trace(x: np.ndarray) -> np.ndarray:
    return np.trace(x, axis1=-2, axis2=-1)


def sq_norm() -> EnergyDensity:
    """H(P) = |P|^2."""

    def h(x):
        return _trace(x)

    def h_x(x):
        return np.broadcast_to(np.eye(x.shape[-1]), x.shape).copy()

    def hess(p):
        N, n = p.shape[-2:]
        t = 2.0 * np.einsum("ab,ij->aibj", np.eye(N), np.eye(n))
        return np.broadcast_to(t, p.shape[:-2] + t.shape).copy()

    return EnergyDensity("sq_norm", h, h_x, hess)


def h1(a=None, alpha: float = 2.0, dim: int | None = None) -> EnergyDensity:
    """H(P) = |A P|^alpha, alpha > 1, A nonnegative definite (identity by default)."""
    alpha = float(alpha)
    if not alpha > 1.0:
        raise InvalidArgumentError(f"h1 requires alpha > 1, got {alpha}")
    if a is None:
        if dim is None:
            raise InvalidArgumentError("h1 needs either the matrix A or its dimension")
        a = np.eye(dim)
    a = check_matrix(a, name="A")
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("A must be square")
    if np.min(np.linalg.eigvalsh(0.5 * (a + a.T))) < -1e-12:
        raise InvalidArgumentError("A must be nonnegative definite")
    m = a.T @ a

    def h(x):
        t = np.maximum(_trace(a @ x @ a.T), 0.0)
        return t ** (alpha / 2.0)

    def h_x(x):
        t = np.maximum(_trace(a @ x @ a.T), 0.0)
        if alpha < 2.0 and np.any(t == 0.0):
            raise SingularConfigurationError("h1 derivative undefined at A P = 0 for alpha < 2")
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(t > 0, (alpha / 2.0) * t ** (alpha / 2.0 - 1.0), 0.0 if alpha > 2 else 1.0)
        return coef[..., None, None] * m

    def hess(p):
        mp = m @ p
        t = np.einsum("...ai,...ai->...", p, mp)
        if alpha < 4.0 and np.any(t == 0.0):
            raise SingularConfigurationError("h1 second derivative undefined at A P = 0")
        N, n = p.shape[-2:]
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = alpha * (alpha - 2.0) * np.where(t > 0, t ** (alpha / 2.0 - 2.0), 0.0)
            c2 = alpha * np.where(t > 0, t ** (alpha / 2.0 - 1.0), 1.0 if alpha == 2.0 else 0.0)
        outer = np.einsum("...ai,...bj->...aibj", mp, mp)
        iso = np.einsum("ab,ij->aibj", m, np.eye(n))
        return c1[..., None, None, None, None] * outer + c2[..., None, None, None, None] * iso

    return EnergyDensity(f"h1:{alpha:g}", h, h_x, hess)


def h2() -> EnergyDensity:
    """H(P) = (|P|^2 + 1)^(-1)."""

    def h(x):
        return 1.0 / (_trace(x) + 1.0)

    def h_x(x):
        s = _trace(x) + 1.0
        return (-1.0 / s**2)[..., None, None] * np.eye(x.shape[-1])

    def hess(p):
        N, n = p.shape[-2:]
        s = np.einsum("...ai,...ai->...", p, p) + 1.0
        outer = np.einsum("...ai,...bj->...aibj", p, p)
        iso = np.einsum("ab,ij->aibj", np.eye(N), np.eye(n))
        return (8.0 / s**3)[..., None, None, None, None] * outer - (2.0 / s**2)[..., None, None, None, None] * iso

    return EnergyDensity("h2", h, h_x, hess)


def h_builtins(N: int = 2, alpha: float = 2.0) -> dict[str, EnergyDensity]:
    return {"sq_norm": sq_norm(), "h1": h1(dim=N, alpha=alpha), "h2": h2()}


def energy_from_name(spec: str, N: int) -> EnergyDensity:
    """Parse ``sq_norm``, ``h1:<alpha>`` or ``h2``."""
    spec = spec.strip()
    if spec == "sq_norm":
        return sq_norm()
    if spec == "h2":
        return h2()
    if spec.startswith("h1"):
        _, _, arg = spec.partition(":")
        return h1(dim=N, alpha=float(arg) if arg else 2.0)
    raise InvalidArgumentError(f"unknown energy {spec!r}")


def H(e: EnergyDensity, p) -> np.ndarray:
    p = check_matrix(p, allow_batch=True)
    return e(p)


def grad_H(e: EnergyDensity, p) -> np.ndarray:
    """H_P(P) = 2 h_X(P P^T) P."""
    p = check_matrix(p, allow_batch=True)
    return 2.0 * e.h_x(_gram(p)) @ p


def hess_H(e: EnergyDensity, p, analytic: bool = True) -> np.ndarray:
    """Second derivative H_PP with index order (alpha, i, beta, j)."""
    p = check_matrix(p, allow_batch=True)
    if analytic and e.hess is not None:
        return e.hess(p)
    N, n = p.shape[-2:]
    out = np.empty(p.shape[:-2] + (N, n, N, n))
    for b in range(N):
        for j in range(n):
            step = np.zeros((N, n))
            step[b, j] = FD_STEP
            out[..., b, j] = (grad_H(e, p + step) - grad_H(e, p - step)) / (2.0 * FD_STEP)
    # out[..., alpha, i, beta, j] currently holds d(H_P)_{alpha i}/dP_{beta j}
    return out


def a_infty(e: EnergyDensity, p, rank_tol: float = mc.RANK_TOL, analytic: bool = True) -> np.ndarray:
    """A-infinity coefficients H_P (x) H_P + H [H_P]^perp H_PP."""
    p = check_matrix(p, allow_batch=True)
    hp = grad_H(e, p)
    outer = np.einsum("...ai,...bj->...aibj", hp, hp)
    proj = mc.orth_complement_projection(hp, rank_tol)
    if not np.any(proj):
        return outer
    hpp = hess_H(e, p, analytic=analytic)
    hval = e(p)
    perp = np.einsum("...ag,...gibj->...aibj", proj, hpp)
    return outer + hval[..., None, None, None, None] * perp


def contract(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(A : X)_alpha = sum_{beta,i,j} A_{alpha i beta j} X_{beta i j}.

    ``x`` has shape (..., N, n, n) with X[beta, i, j] ~ D_i D_j u_beta.
    """
    return np.einsum("...aibj,...bij->...a", a, x)


def infinity_laplacian(values: np.ndarray, spacing, ring: int = 1, rank_tol: float = mc.RANK_TOL) -> np.ndarray:
    """Pointwise (Du (x) Du + |Du|^2 [Du]^perp (x) I) : D^2 u on a uniform grid.

    ``values`` has shape (N, m_1, ..., m_n). Derivatives are second-order
    central differences; the result drops ``ring`` points at each end of
    every axis, shape (m_1 - 2 ring, ..., m_n - 2 ring, N).
    """
    values = np.asarray(values, dtype=float)
    n = values.ndim - 1
    if n < 1 or any(m < 2 * ring + 1 for m in values.shape[1:]) or ring < 1:
        raise InvalidGridError(f"need ring >= 1 and at least {2 * ring + 1} points per axis")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (n,))

    def shifted(offsets):
        # values moved by the integer offsets, restricted to the inner grid
        idx = tuple(slice(ring + o, values.shape[k + 1] - ring + o) for k, o in enumerate(offsets))
        return values[(slice(None),) + idx]

    def unit(i, step):
        o = [0] * n
        o[i] = step
        return o

    centre = shifted([0] * n)
    du = np.stack([(shifted(unit(i, 1)) - shifted(unit(i, -1))) / (2 * spacing[i]) for i in range(n)], axis=-1)
    d2 = np.empty(centre.shape + (n, n))
    for i in range(n):
        d2[..., i, i] = (shifted(unit(i, 1)) - 2 * centre + shifted(unit(i, -1))) / spacing[i] ** 2
        for j in range(i + 1, n):
            def corner(a, b):
                o = [0] * n
                o[i], o[j] = a, b
                return shifted(o)

            mixed = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4 * spacing[i] * spacing[j])
            d2[..., i, j] = d2[..., j, i] = mixed
    du = np.moveaxis(du, 0, -2)  # (*grid, N, n)
    d2 = np.moveaxis(d2, 0, -3)  # (*grid, N, n, n)
    proj = mc.orth_complement_projection(du, rank_tol)
    norm2 = np.einsum("...ai,...ai->...", du, du)
    first = np.einsum("...ai,...bj,...bij->...a", du, du, d2)
    lap = np.einsum("...bii->...b", d2)
    second = norm2[..., None] * np.einsum("...ab,...b->...a", proj, lap)
    return first + second
