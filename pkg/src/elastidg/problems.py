"""Manufactured elasticity solutions with analytic stress and load.

Both problems use homogeneous Dirichlet displacement data on the unit
domain.  The load is derived analytically (f = mu*lap(u) + (mu+lam)*grad(div u),
matching div sigma = f with sigma = 2 mu eps(u) + lam tr(eps(u)) I), never by
numerical differentiation, so convergence tables are not polluted by
finite-difference noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ManufacturedProblem:
    """Closures for the exact displacement, its gradient, stress, and load.

    Conventions: u(x) has shape (npts, d); grad_u(x)[:, i, j] = du_i/dx_j;
    sigma(x) has shape (npts, d, d); f(x) = div sigma has shape (npts, d).
    """

    dim: int
    mu: float
    lam: float
    u: Callable[[np.ndarray], np.ndarray]
    grad_u: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]


def stiffness_apply(mu: float, lam: float, eps: np.ndarray) -> np.ndarray:
    """Isotropic stress from strain: 2*mu*eps + lam*tr(eps)*I, batched."""
    eps = np.asarray(eps, dtype=float)
    d = eps.shape[-1]
    trace = np.trace(eps, axis1=-2, axis2=-1)
    return 2.0 * mu * eps + lam * trace[..., None, None] * np.eye(d)


def _sigma_from_grad(mu: float, lam: float, grad: np.ndarray) -> np.ndarray:
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    return stiffness_apply(mu, lam, eps)


def _bump(t: np.ndarray):
    """t(1-t) with first and second derivatives."""
    return t * (1.0 - t), 1.0 - 2.0 * t, -2.0 * np.ones_like(t)


def problem_2d(mu: float = 0.5, lam: float = 1.0) -> ManufacturedProblem:
    """u = (exp(x-y) x y (1-x)(1-y), sin(pi x) sin(pi y)) on the unit square."""

    def parts(x: np.ndarray):
        X, Y = x[:, 0], x[:, 1]
        return (X, Y, np.exp(X - Y)) + _bump(X) + _bump(Y)

    def u(x: np.ndarray) -> np.ndarray:
        X, Y, ex, p, _, _, q, _, _ = parts(x)
        return np.column_stack([ex * p * q, np.sin(np.pi * X) * np.sin(np.pi * Y)])

    def grad_u(x: np.ndarray) -> np.ndarray:
        X, Y, ex, p, dp, _, q, dq, _ = parts(x)
        g = np.empty((x.shape[0], 2, 2))
        g[:, 0, 0] = ex * (p + dp) * q
        g[:, 0, 1] = ex * p * (dq - q)
        g[:, 1, 0] = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        g[:, 1, 1] = np.pi * np.sin(np.pi * X) * np.cos(np.pi * Y)
        return g

    def second(x: np.ndarray):
        X, Y, ex, p, dp, ddp, q, dq, ddq = parts(x)
        u1_xx = ex * (p + 2.0 * dp + ddp) * q
        u1_yy = ex * p * (q - 2.0 * dq + ddq)
        u1_xy = ex * (p + dp) * (dq - q)
        pi2 = np.pi * np.pi
        s = np.sin(np.pi * X) * np.sin(np.pi * Y)
        c = np.cos(np.pi * X) * np.cos(np.pi * Y)
        u2_xx = -pi2 * s
        u2_yy = -pi2 * s
        u2_xy = pi2 * c
        return u1_xx, u1_yy, u1_xy, u2_xx, u2_yy, u2_xy

    def sigma(x: np.ndarray) -> np.ndarray:
        return _sigma_from_grad(mu, lam, grad_u(x))

    def f(x: np.ndarray) -> np.ndarray:
        u1_xx, u1_yy, u1_xy, u2_xx, u2_yy, u2_xy = second(x)
        lap1 = u1_xx + u1_yy
        lap2 = u2_xx + u2_yy
        ddiv_x = u1_xx + u2_xy
        ddiv_y = u1_xy + u2_yy
        return np.column_stack(
            [mu * lap1 + (mu + lam) * ddiv_x, mu * lap2 + (mu + lam) * ddiv_y]
        )

    return ManufacturedProblem(dim=2, mu=mu, lam=lam, u=u, grad_u=grad_u, sigma=sigma, f=f)


def problem_3d(mu: float = 0.5, lam: float = 1.0) -> ManufacturedProblem:
    """u = (16, 32, 64)^T x(1-x) y(1-y) z(1-z) on the unit cube."""
    c = np.array([2.0**4, 2.0**5, 2.0**6])

    def parts(x: np.ndarray):
        return _bump(x[:, 0]) + _bump(x[:, 1]) + _bump(x[:, 2])

    def u(x: np.ndarray) -> np.ndarray:
        p, _, _, q, _, _, r, _, _ = parts(x)
        return (p * q * r)[:, None] * c

    def grad_q(x: np.ndarray) -> np.ndarray:
        p, dp, _, q, dq, _, r, dr, _ = parts(x)
        return np.column_stack([dp * q * r, p * dq * r, p * q * dr])

    def hess_q(x: np.ndarray) -> np.ndarray:
        p, dp, ddp, q, dq, ddq, r, dr, ddr = parts(x)
        H = np.empty((x.shape[0], 3, 3))
        H[:, 0, 0] = ddp * q * r
        H[:, 1, 1] = p * ddq * r
        H[:, 2, 2] = p * q * ddr
        H[:, 0, 1] = H[:, 1, 0] = dp * dq * r
        H[:, 0, 2] = H[:, 2, 0] = dp * q * dr
        H[:, 1, 2] = H[:, 2, 1] = p * dq * dr
        return H

    def grad_u(x: np.ndarray) -> np.ndarray:
        return c[None, :, None] * grad_q(x)[:, None, :]

    def sigma(x: np.ndarray) -> np.ndarray:
        return _sigma_from_grad(mu, lam, grad_u(x))

    def f(x: np.ndarray) -> np.ndarray:
        H = hess_q(x)
        lap = np.trace(H, axis1=1, axis2=2)
        return mu * lap[:, None] * c + (mu + lam) * np.einsum("qij,j->qi", H, c)

    return ManufacturedProblem(dim=3, mu=mu, lam=lam, u=u, grad_u=grad_u, sigma=sigma, f=f)
