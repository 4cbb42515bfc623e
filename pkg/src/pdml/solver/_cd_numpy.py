"""Pure-NumPy cyclic coordinate descent on the Gram form of the Lasso.

Minimizes ``0.5 * u' G u - u' b + lam * ||u||_1`` for a positive
semidefinite Gram matrix ``G``. Used as the fallback when the compiled
kernel is unavailable; the update order and convergence rule match the
compiled version exactly.
"""

import numpy as np


def _sweep(gram, linear, lam, coef, q, indices):
    """One cyclic pass over ``indices``; returns the max coefficient change."""
    max_delta = 0.0
    for j in indices:
        gjj = gram[j, j]
        old = coef[j]
        if gjj <= 0.0:
            if old != 0.0:
                q -= gram[j] * old
                coef[j] = 0.0
                max_delta = max(max_delta, abs(old))
            continue
        rho = linear[j] - q[j] + gjj * old
        if rho > lam:
            new = (rho - lam) / gjj
        elif rho < -lam:
            new = (rho + lam) / gjj
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            q += gram[j] * delta
            coef[j] = new
            max_delta = max(max_delta, abs(delta))
    return max_delta


def cd_solve(gram, linear, lam, coef, tol, max_iter):
    """Cyclic coordinate descent with an active-set inner loop.

    ``coef`` is updated in place (warm start). A full pass is followed by
    passes restricted to the current support until those converge, then a
    full pass re-checks every coordinate; convergence is declared when a
    full pass moves no coefficient by more than ``tol``.

    Returns ``(n_sweeps, converged)``.
    """
    p = gram.shape[0]
    q = gram @ coef
    all_idx = np.arange(p)
    n_sweeps = 0
    while n_sweeps < max_iter:
        max_delta = _sweep(gram, linear, lam, coef, q, all_idx)
        n_sweeps += 1
        if max_delta < tol:
            return n_sweeps, True
        active = np.flatnonzero(coef)
        while n_sweeps < max_iter and active.size:
            max_delta = _sweep(gram, linear, lam, coef, q, active)
            n_sweeps += 1
            if max_delta < tol:
                break
    return n_sweeps, False
