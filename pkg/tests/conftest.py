"""Shared test fixtures: a polynomial manufactured problem for exactness tests."""

import numpy as np

from elastidg.problems import ManufacturedProblem


def quartic_problem_2d(mu: float = 0.5, lam: float = 1.0) -> ManufacturedProblem:
    """u = (1, 2)^T x(1-x) y(1-y): a quartic vanishing on the unit-square boundary.

    The lowest-degree nonzero polynomial displacement compatible with the
    homogeneous boundary condition (each component needs the factor
    x(1-x)y(1-y)), so u lies in P_4 and sigma in P_3: the discrete solution
    must reproduce both exactly once k >= 4.
    """
    a = np.array([1.0, 2.0])

    def bump(t):
        return t * (1.0 - t), 1.0 - 2.0 * t, -2.0 * np.ones_like(t)

    def parts(x):
        return bump(x[:, 0]) + bump(x[:, 1])

    def u(x):
        p, _, _, q, _, _ = parts(x)
        return (p * q)[:, None] * a

    def grad_q(x):
        p, dp, _, q, dq, _ = parts(x)
        return np.column_stack([dp * q, p * dq])

    def hess_q(x):
        p, dp, ddp, q, dq, ddq = parts(x)
        H = np.empty((x.shape[0], 2, 2))
        H[:, 0, 0] = ddp * q
        H[:, 1, 1] = p * ddq
        H[:, 0, 1] = H[:, 1, 0] = dp * dq
        return H

    def grad_u(x):
        return a[None, :, None] * grad_q(x)[:, None, :]

    def sigma(x):
        g = grad_u(x)
        eps = 0.5 * (g + np.swapaxes(g, 1, 2))
        tr = np.trace(eps, axis1=1, axis2=2)
        return 2.0 * mu * eps + lam * tr[:, None, None] * np.eye(2)

    def f(x):
        H = hess_q(x)
        lap = np.trace(H, axis1=1, axis2=2)
        return mu * lap[:, None] * a + (mu + lam) * np.einsum("qij,j->qi", H, a)

    return ManufacturedProblem(dim=2, mu=mu, lam=lam, u=u, grad_u=grad_u, sigma=sigma, f=f)
