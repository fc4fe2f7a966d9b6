"""Linearized DistFlow sensitivities of squared voltages to injections.

For a line-indicator vector ``b`` the radial model uses

    R(b)^-1 = 1/2 * sum_l (b_l / r_l) a_l a_l^T,   X(b)^-1 likewise with x_l,

and the meshed model uses the bus conductance/susceptance matrices

    G(b) = sum_l b_l r_l/(r_l^2+x_l^2) a_l a_l^T,  B(b) = sum_l b_l x_l/(r_l^2+x_l^2) a_l a_l^T,
    R~ = 2 (G + B G^-1 B)^-1,                       X~ = 2 (B + G B^-1 G)^-1.

Both collapse to the same matrices whenever the support of ``b`` is a
spanning forest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import Cholesky, symmetrize
from .errors import SingularTopology
from .grid import GridModel

RADIAL = "radial"
MESHED = "meshed"
MODES = (RADIAL, MESHED)


@dataclass(frozen=True)
class LdfMatrices:
    R: np.ndarray
    X: np.ndarray
    mode: str
    # meshed-only intermediates needed by the derivatives
    G: np.ndarray | None = None
    B: np.ndarray | None = None
    Ginv: np.ndarray | None = None
    Binv: np.ndarray | None = None


def _weighted_laplacian(A, w):
    return symmetrize((A.T * w) @ A)


def _spd_inverse(M, what):
    try:
        return Cholesky(M).inv()
    except np.linalg.LinAlgError as exc:
        raise SingularTopology(f"{what} is singular: {exc}") from None


def _check_b(grid, b):
    b = np.asarray(b, dtype=float)
    if b.shape != (grid.Le,):
        raise ValueError(f"b has shape {b.shape}, expected ({grid.Le},)")
    return b


def rx_radial(grid: GridModel, b) -> LdfMatrices:
    b = _check_b(grid, b)
    A = grid.incidence_reduced
    R = 2.0 * _spd_inverse(_weighted_laplacian(A, b / grid.r), "R^-1(b)")
    X = 2.0 * _spd_inverse(_weighted_laplacian(A, b / grid.x), "X^-1(b)")
    return LdfMatrices(R, X, RADIAL)


def line_admittances(grid: GridModel):
    """Per-line conductance r/|z|^2 and susceptance x/|z|^2."""
    z2 = grid.r**2 + grid.x**2
    return grid.r / z2, grid.x / z2


def rx_meshed(grid: GridModel, b) -> LdfMatrices:
    b = _check_b(grid, b)
    A = grid.incidence_reduced
    g, h = line_admittances(grid)
    G = _weighted_laplacian(A, b * g)
    B = _weighted_laplacian(A, b * h)
    Ginv = _spd_inverse(G, "G(b)")
    Binv = _spd_inverse(B, "B(b)")
    R = 2.0 * _spd_inverse(symmetrize(G + B @ Ginv @ B), "G + B G^-1 B")
    X = 2.0 * _spd_inverse(symmetrize(B + G @ Binv @ G), "B + G B^-1 G")
    return LdfMatrices(R, X, MESHED, G, B, Ginv, Binv)


def rx(grid: GridModel, b, mode: str = RADIAL) -> LdfMatrices:
    if mode == RADIAL:
        return rx_radial(grid, b)
    if mode == MESHED:
        return rx_meshed(grid, b)
    raise ValueError(f"unknown mode {mode!r}")


def drx_radial(grid: GridModel, b, line: int, ldf: LdfMatrices | None = None):
    """(dR/db_l, dX/db_l) = (-(1/2r_l) R a a^T R, -(1/2x_l) X a a^T X)."""
    ldf = ldf or rx_radial(grid, b)
    a = grid.incidence_reduced[line]
    u = ldf.R @ a
    w = ldf.X @ a
    return -np.outer(u, u) / (2 * grid.r[line]), -np.outer(w, w) / (2 * grid.x[line])


def _dmeshed(S, K, a, gl, hl):
    # S = 2 M^-1 with M = P + Q P^-1 Q, dP = gl a a^T, dQ = hl a a^T, K = P^-1 Q:
    # dS = -1/2 S [gl a a^T + hl (a c^T + c a^T) - gl c c^T] S,  c = K^T a
    c = K.T @ a
    u = S @ a
    v = S @ c
    return -0.5 * (gl * np.outer(u, u) + hl * (np.outer(u, v) + np.outer(v, u)) - gl * np.outer(v, v))


def drx_meshed(grid: GridModel, b, line: int, ldf: LdfMatrices | None = None):
    """(dR~/db_l, dX~/db_l) for the meshed model."""
    ldf = ldf or rx_meshed(grid, b)
    a = grid.incidence_reduced[line]
    g, h = line_admittances(grid)
    dR = _dmeshed(ldf.R, ldf.Ginv @ ldf.B, a, g[line], h[line])
    dX = _dmeshed(ldf.X, ldf.Binv @ ldf.G, a, h[line], g[line])
    return dR, dX


def drx(grid: GridModel, b, line: int, mode: str = RADIAL, ldf: LdfMatrices | None = None):
    if mode == RADIAL:
        return drx_radial(grid, b, line, ldf)
    if mode == MESHED:
        return drx_meshed(grid, b, line, ldf)
    raise ValueError(f"unknown mode {mode!r}")


def contract_derivatives(grid: GridModel, ldf: LdfMatrices, P, Q):
    """Vector over lines of 2 tr(dR_l P) + 2 tr(dX_l Q), all lines at once.

    This is the building block of the likelihood gradients; it avoids forming
    the Le pairs of N x N derivative matrices.
    """
    A = grid.incidence_reduced
    if ldf.mode == RADIAL:
        U = A @ ldf.R
        W = A @ ldf.X
        return -(np.einsum("li,ij,lj->l", U, P, U) / grid.r + np.einsum("li,ij,lj->l", W, Q, W) / grid.x)
    g, h = line_admittances(grid)
    return _contract_meshed(A, ldf.R, ldf.Ginv @ ldf.B, P, g, h) + _contract_meshed(
        A, ldf.X, ldf.Binv @ ldf.G, Q, h, g
    )


def _contract_meshed(A, S, K, P, gl, hl):
    # 2 tr(dS_l P) = -[gl u^T P u + hl (u^T P v + v^T P u) - gl v^T P v], u = S a, v = S K^T a
    U = A @ S
    V = A @ K @ S
    Ps = P + P.T
    uu = np.einsum("li,ij,lj->l", U, P, U)
    vv = np.einsum("li,ij,lj->l", V, P, V)
    uv = np.einsum("li,ij,lj->l", U, Ps, V)
    return -(gl * uu + hl * uv - gl * vv)
