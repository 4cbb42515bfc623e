# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled cyclic coordinate descent on the Gram form of the Lasso.

Mirrors :mod:`pdml.solver._cd_numpy`; kept in lockstep with it so the two
backends are interchangeable.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef double _sweep_full(double[:, ::1] gram, double[::1] linear, double lam,
                        double[::1] coef, double[::1] q, Py_ssize_t p) nogil:
    cdef Py_ssize_t j, k
    cdef double gjj, old, rho, new, delta, ad, max_delta
    max_delta = 0.0
    for j in range(p):
        gjj = gram[j, j]
        old = coef[j]
        if gjj <= 0.0:
            if old != 0.0:
                for k in range(p):
                    q[k] -= gram[j, k] * old
                coef[j] = 0.0
                ad = -old if old < 0.0 else old
                if ad > max_delta:
                    max_delta = ad
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
            for k in range(p):
                q[k] += gram[j, k] * delta
            coef[j] = new
            ad = -delta if delta < 0.0 else delta
            if ad > max_delta:
                max_delta = ad
    return max_delta


cdef double _sweep_active(double[:, ::1] gram, double[::1] linear, double lam,
                          double[::1] coef, double[::1] q,
                          Py_ssize_t[::1] active, Py_ssize_t n_active,
                          Py_ssize_t p) nogil:
    cdef Py_ssize_t i, j, k
    cdef double gjj, old, rho, new, delta, ad, max_delta
    max_delta = 0.0
    for i in range(n_active):
        j = active[i]
        gjj = gram[j, j]
        old = coef[j]
        if gjj <= 0.0:
            if old != 0.0:
                for k in range(p):
                    q[k] -= gram[j, k] * old
                coef[j] = 0.0
                ad = -old if old < 0.0 else old
                if ad > max_delta:
                    max_delta = ad
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
            for k in range(p):
                q[k] += gram[j, k] * delta
            coef[j] = new
            ad = -delta if delta < 0.0 else delta
            if ad > max_delta:
                max_delta = ad
    return max_delta


def cd_solve(double[:, ::1] gram, double[::1] linear, double lam,
             double[::1] coef, double tol, long max_iter):
    """Same contract as the NumPy backend: updates ``coef`` in place and
    returns ``(n_sweeps, converged)``."""
    cdef Py_ssize_t p = gram.shape[0]
    cdef cnp.ndarray[double, ndim=1] q_arr = np.empty(p, dtype=np.float64)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] act_arr = np.empty(p, dtype=np.intp)
    cdef double[::1] q = q_arr
    cdef Py_ssize_t[::1] active = act_arr
    cdef Py_ssize_t j, k, n_active
    cdef long n_sweeps = 0
    cdef double max_delta
    cdef bint converged = False

    with nogil:
        for j in range(p):
            q[j] = 0.0
        for j in range(p):
            if coef[j] != 0.0:
                for k in range(p):
                    q[k] += gram[j, k] * coef[j]
        while n_sweeps < max_iter:
            max_delta = _sweep_full(gram, linear, lam, coef, q, p)
            n_sweeps += 1
            if max_delta < tol:
                converged = True
                break
            n_active = 0
            for j in range(p):
                if coef[j] != 0.0:
                    active[n_active] = j
                    n_active += 1
            while n_sweeps < max_iter and n_active > 0:
                max_delta = _sweep_active(gram, linear, lam, coef, q,
                                          active, n_active, p)
                n_sweeps += 1
                if max_delta < tol:
                    break
    return n_sweeps, converged
