"""Independent oracles shared by the tests."""

from __future__ import annotations

import numpy as np

from gradbasis.models import forward_batch


def fd_jacobian(spec, theta, X, h=1e-6):
    """Central differences of the stacked outputs, one parameter at a time."""
    x = np.asarray(theta, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((forward_batch(spec, x + e, X) - forward_batch(spec, x - e, X)).reshape(-1) / (2 * h))
    return np.array(cols).T


def normal_equations(A, b, w):
    """Weighted least-squares optimum value via (A^T W A) x = A^T W b with a pseudo-inverse."""
    W = np.diag(w)
    x = np.linalg.pinv(A.T @ W @ A) @ (A.T @ W @ b)
    r = A @ x - b
    return float(r @ (w * r))


def dense_hessian_from_values(f, x, h=1e-4):
    """Second differences of function values only (no gradients involved)."""
    n = x.size
    Hm = np.zeros((n, n))
    f0 = f(x)
    E = np.eye(n) * h
    for i in range(n):
        Hm[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h**2
        for j in range(i + 1, n):
            v = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * h**2)
            Hm[i, j] = Hm[j, i] = v
    return Hm
