# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernels for weighted elastic-net solves.

Gram-formulation: minimize 0.5 b'Gb - c'b + lam1*|b_pen|_1 + 0.5*lam2*|b_pen|^2
with the first ``n_free`` coordinates unpenalized.  Stalled solves are
accelerated by an active-set Newton step (exact solve on the current support
with frozen signs), which is accepted only when it keeps every penalized sign
and therefore can never increase the objective.  Semantics are kept in
lockstep with the pure-Python fallback in ``_cd_python.py``.
"""

from libc.math cimport exp, log, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef int _ACTIVE_SWEEP_CAP = 8
cdef double _PIVOT_RTOL = 1e-10


cdef inline double _soft(double z, double t) nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


cdef double _sweep(double[:, ::1] G, double[::1] r, double[::1] beta,
                   int n_free, double lam1, double lam2,
                   bint active_only) nogil:
    cdef int m = G.shape[0]
    cdef int j, i
    cdef double gjj, rho, bj, d, ad
    cdef double delta = 0.0
    for j in range(m):
        if active_only and j >= n_free and beta[j] == 0.0:
            continue
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        rho = r[j] + gjj * beta[j]
        if j < n_free:
            bj = rho / gjj
        else:
            bj = _soft(rho, lam1) / (gjj + lam2)
        d = bj - beta[j]
        if d != 0.0:
            # G is symmetric; use the contiguous row for the column update.
            for i in range(m):
                r[i] -= G[j, i] * d
            beta[j] = bj
            ad = d if d >= 0.0 else -d
            if ad > delta:
                delta = ad
    return delta


cdef bint _cholesky_solve(double[:, ::1] M, double[::1] rhs, double[::1] x,
                          double[:, ::1] L, int k) nogil:
    cdef int i, j, t
    cdef double acc, diag_max, tol
    diag_max = M[0, 0]
    for i in range(1, k):
        if M[i, i] > diag_max:
            diag_max = M[i, i]
    if diag_max <= 0.0:
        return 0
    tol = _PIVOT_RTOL * diag_max
    for i in range(k):
        for j in range(i + 1):
            acc = M[i, j]
            for t in range(j):
                acc -= L[i, t] * L[j, t]
            if i == j:
                if acc <= tol:
                    return 0
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    for i in range(k):
        acc = rhs[i]
        for t in range(i):
            acc -= L[i, t] * x[t]
        x[i] = acc / L[i, i]
    for i in range(k - 1, -1, -1):
        acc = x[i]
        for t in range(i + 1, k):
            acc -= L[t, i] * x[t]
        x[i] = acc / L[i, i]
    return 1


cdef bint _newton_step(double[:, ::1] G, double[::1] c, double[::1] beta,
                       double[::1] r, int n_free, double lam1, double lam2,
                       int[::1] active, double[:, ::1] M, double[::1] rhs,
                       double[::1] x, double[:, ::1] L,
                       double[::1] sign) nogil:
    cdef int m = G.shape[0]
    cdef int k = 0
    cdef int a, b, j, i
    cdef double s
    for j in range(m):
        if j < n_free or beta[j] != 0.0:
            active[k] = j
            k += 1
    if k == 0:
        return 0
    for a in range(k):
        j = active[a]
        for b in range(k):
            M[a, b] = G[j, active[b]]
        rhs[a] = c[j]
        if j >= n_free:
            M[a, a] += lam2
            s = 1.0 if beta[j] > 0.0 else -1.0
            sign[a] = s
            rhs[a] -= lam1 * s
        else:
            sign[a] = 0.0
    if not _cholesky_solve(M, rhs, x, L, k):
        return 0
    for a in range(k):
        if sign[a] != 0.0 and x[a] * sign[a] <= 0.0:
            return 0
    for j in range(m):
        beta[j] = 0.0
        r[j] = c[j]
    for a in range(k):
        beta[active[a]] = x[a]
    for a in range(k):
        j = active[a]
        for i in range(m):
            r[i] -= G[j, i] * x[a]
    return 1


cdef long _solve(double[:, ::1] G, double[::1] c, double[::1] beta,
                 double[::1] r, int n_free, double lam1, double lam2,
                 double tol, long max_sweeps,
                 int[::1] active, double[:, ::1] M, double[::1] rhs,
                 double[::1] x, double[:, ::1] L, double[::1] sign) nogil:
    cdef int m = G.shape[0]
    cdef int i, k, rounds
    cdef double acc, delta
    cdef long sweeps = 0
    for i in range(m):
        acc = 0.0
        for k in range(m):
            acc += G[i, k] * beta[k]
        r[i] = c[i] - acc
    while sweeps < max_sweeps:
        delta = _sweep(G, r, beta, n_free, lam1, lam2, 0)
        sweeps += 1
        if delta < tol:
            return sweeps
        rounds = 0
        while sweeps < max_sweeps and rounds < _ACTIVE_SWEEP_CAP:
            delta = _sweep(G, r, beta, n_free, lam1, lam2, 1)
            sweeps += 1
            rounds += 1
            if delta < tol:
                break
        if delta >= tol:
            _newton_step(G, c, beta, r, n_free, lam1, lam2,
                         active, M, rhs, x, L, sign)
            sweeps += 1
    return sweeps


def cd_solve(double[:, ::1] G, double[::1] c, double[::1] beta,
             int n_free, double lam1, double lam2, double tol,
             long max_sweeps):
    """Single warm-started solve; ``beta`` is updated in place."""
    cdef int m = G.shape[0]
    cdef double[::1] r = np.empty(m)
    cdef int[::1] active = np.empty(m, dtype=np.intc)
    cdef double[:, ::1] M = np.empty((m, m))
    cdef double[::1] rhs = np.empty(m)
    cdef double[::1] x = np.empty(m)
    cdef double[:, ::1] L = np.zeros((m, m))
    cdef double[::1] sign = np.empty(m)
    cdef long sweeps
    with nogil:
        sweeps = _solve(G, c, beta, r, n_free, lam1, lam2, tol, max_sweeps,
                        active, M, rhs, x, L, sign)
    return sweeps


def cd_path(double[:, ::1] G, double[::1] c,
            double[::1] lam1s, double[::1] lam2s,
            int n_free, double tol, long max_sweeps,
            double[:, ::1] out):
    """Warm-started solves along a penalty sequence; rows of ``out`` filled."""
    cdef int m = G.shape[0]
    cdef int nlam = lam1s.shape[0]
    cdef double[::1] beta = np.zeros(m)
    cdef double[::1] r = np.empty(m)
    cdef int[::1] active = np.empty(m, dtype=np.intc)
    cdef double[:, ::1] M = np.empty((m, m))
    cdef double[::1] rhs = np.empty(m)
    cdef double[::1] x = np.empty(m)
    cdef double[:, ::1] L = np.zeros((m, m))
    cdef double[::1] sign = np.empty(m)
    cdef long total = 0
    cdef int t, i
    with nogil:
        for t in range(nlam):
            total += _solve(G, c, beta, r, n_free, lam1s[t], lam2s[t],
                            tol, max_sweeps, active, M, rhs, x, L, sign)
            for i in range(m):
                out[t, i] = beta[i]
    return total


def binomial_path(double[:, ::1] A, double[::1] y, double[::1] w,
                  double[::1] lam1s, double[::1] lam2s, double beta0,
                  double tol, long max_sweeps, int irls_max, double irls_tol,
                  double clamp, double[:, ::1] out):
    """Penalized logistic path: IRLS outer loop, CD inner solves, warm starts.

    ``A`` carries the intercept in column 0; working probabilities are kept in
    [clamp, 1-clamp].  Rows of ``out`` receive the solution at each penalty.
    """
    cdef int n = A.shape[0]
    cdef int m = A.shape[1]
    cdef int nlam = lam1s.shape[0]
    cdef double[::1] beta = np.zeros(m)
    cdef double[::1] eta = np.empty(n)
    cdef double[::1] wt = np.empty(n)
    cdef double[::1] wz = np.empty(n)
    cdef double[:, ::1] G = np.empty((m, m))
    cdef double[::1] c = np.empty(m)
    cdef double[::1] r = np.empty(m)
    cdef int[::1] active = np.empty(m, dtype=np.intc)
    cdef double[:, ::1] M = np.empty((m, m))
    cdef double[::1] rhs = np.empty(m)
    cdef double[::1] x = np.empty(m)
    cdef double[:, ::1] L = np.zeros((m, m))
    cdef double[::1] sign = np.empty(m)
    cdef long total = 0
    cdef int t, it, i, a, b
    cdef double acc, e, p, dev, dev_prev, dd, scale
    beta[0] = beta0
    with nogil:
        for t in range(nlam):
            dev_prev = 1e300
            for it in range(irls_max):
                dev = 0.0
                for i in range(n):
                    acc = 0.0
                    for a in range(m):
                        acc += A[i, a] * beta[a]
                    eta[i] = acc
                    e = acc
                    if e >= 0.0:
                        p = 1.0 / (1.0 + exp(-e))
                    else:
                        p = exp(e)
                        p = p / (1.0 + p)
                    if p < clamp:
                        p = clamp
                    elif p > 1.0 - clamp:
                        p = 1.0 - clamp
                    wt[i] = w[i] * p * (1.0 - p)
                    wz[i] = wt[i] * (eta[i] + (y[i] - p) / (p * (1.0 - p)))
                    dev += w[i] * (y[i] * log(p) + (1.0 - y[i]) * log(1.0 - p))
                dev = -2.0 * dev
                for a in range(m):
                    for b in range(a, m):
                        acc = 0.0
                        for i in range(n):
                            acc += A[i, a] * wt[i] * A[i, b]
                        G[a, b] = acc / n
                        G[b, a] = G[a, b]
                    acc = 0.0
                    for i in range(n):
                        acc += A[i, a] * wz[i]
                    c[a] = acc / n
                total += _solve(G, c, beta, r, 1, lam1s[t], lam2s[t],
                                tol, max_sweeps, active, M, rhs, x, L, sign)
                dd = dev_prev - dev
                if dd < 0.0:
                    dd = -dd
                scale = dev if dev >= 0.0 else -dev
                if scale < 1.0:
                    scale = 1.0
                if dd < irls_tol * scale:
                    break
                dev_prev = dev
            for i in range(m):
                out[t, i] = beta[i]
    return total
