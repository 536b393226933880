"""Pure numpy RK4 integration of closed-loop quadratic costs.

Reference implementation of the hot kernel; the compiled ``_cost`` module
implements the same function and is preferred when available.
"""

import numpy as np


def quadratic_costs(A_cl, W, Z0, d, horizon, step, limit=1e6):
    """Finite-horizon costs ``sum_cols int_0^T z^T W z dt`` for a batch of systems.

    Each column ``z0`` of ``Z0`` is integrated under ``z' = A_cl z + d`` with
    classic fixed-step RK4; the running cost is carried as an extra state so
    it shares the same quadrature. A column whose state norm exceeds
    ``limit`` stops integrating and keeps the cost accumulated so far.

    Parameters
    ----------
    A_cl : (P, n, n) or (n, n) array
    W : (P, n, n) or (n, n) array
        Cost weights ``Q + K^T R K``.
    Z0 : (n, c) array
    d : (n,) array
        Constant forcing.
    horizon, step : float
        ``round(horizon / step)`` steps of size ``horizon / nsteps``.

    Returns
    -------
    J : (P,) array
    diverged : (P,) bool array
    """
    A = np.asarray(A_cl, dtype=float)
    if A.ndim == 2:
        A = A[None]
    P, n, _ = A.shape
    W = np.broadcast_to(np.asarray(W, dtype=float), A.shape)
    Z0 = np.asarray(Z0, dtype=float).reshape(n, -1)
    d = np.asarray(d, dtype=float).reshape(1, n, 1)
    nsteps = int(round(horizon / step))
    h = horizon / nsteps

    z = np.broadcast_to(Z0, (P, n, Z0.shape[1])).copy()
    cost = np.zeros((P, Z0.shape[1]))
    active = np.ones((P, Z0.shape[1]), dtype=bool)
    diverged = np.zeros(P, dtype=bool)

    def rhs(s):
        return A @ s + d

    def quad(s):
        return np.einsum("pic,pij,pjc->pc", s, W, s)

    for _ in range(nsteps):
        k1 = rhs(z)
        c1 = quad(z)
        s = z + 0.5 * h * k1
        k2 = rhs(s)
        c2 = quad(s)
        s = z + 0.5 * h * k2
        k3 = rhs(s)
        c3 = quad(s)
        s = z + h * k3
        k4 = rhs(s)
        c4 = quad(s)
        dz = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        dc = (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        z = np.where(active[:, None, :], z + dz, z)
        cost = np.where(active, cost + dc, cost)
        norm2 = np.sum(z * z, axis=1)
        blown = active & ~(norm2 <= limit * limit)
        if blown.any():
            diverged |= blown.any(axis=1)
            active &= ~blown
            if not active.any():
                break
    return cost.sum(axis=1), diverged
