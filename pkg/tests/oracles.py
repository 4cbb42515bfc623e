"""Independent reference implementations used only as test oracles.

Deliberately decoupled from the package internals: the Lasso oracle is an
accelerated proximal-gradient method, not coordinate descent, and touches
only raw NumPy.
"""

import numpy as np


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_prox_gradient(x, y, lam, offset=None, tol=1e-10, max_iter=500_000):
    """FISTA on (1/2n)||y - Xu||^2 shifted by the offset linear term.

    Minimizes 0.5 u'Gu - u'b + lam ||u||_1 with G = X'X/n and
    b = X'y/n - offset, run to a tight tolerance on iterate change.
    """
    n, p = x.shape
    gram = x.T @ x / n
    b = x.T @ y / n
    if offset is not None:
        b = b - offset
    step = 1.0 / max(np.linalg.eigvalsh(gram).max(), 1e-12)
    u = np.zeros(p)
    z = u.copy()
    t_acc = 1.0
    for _ in range(max_iter):
        grad = gram @ z - b
        u_new = soft_threshold(z - step * grad, step * lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
        z = u_new + ((t_acc - 1.0) / t_new) * (u_new - u)
        delta = np.max(np.abs(u_new - u))
        u, t_acc = u_new, t_new
        if delta < tol:
            break
    return u


def lasso_objective(x, y, lam, u, offset=None):
    n = x.shape[0]
    gram = x.T @ x / n
    b = x.T @ y / n
    if offset is not None:
        b = b - offset
    return 0.5 * u @ gram @ u - u @ b + lam * np.abs(u).sum()
