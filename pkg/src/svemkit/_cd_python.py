"""Pure-Python coordinate-descent kernels (fallback backend).

Mirrors the compiled extension in ``_cd_kernel.pyx``: same Gram-based updates,
same sweep schedule, same active-set Newton assist, same convergence rule.
Used when the compiled module is unavailable or when ``SVEMKIT_KERNEL=python``
is set.
"""

from __future__ import annotations

import math

import numpy as np

_ACTIVE_SWEEP_CAP = 8  # active-cycling sweeps between Newton attempts
_PIVOT_RTOL = 1e-10  # Cholesky pivot tolerance relative to the largest diagonal


def _stable_expit(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _sweep(G, r, beta, n_free, lam1, lam2, active_only):
    m = G.shape[0]
    delta = 0.0
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
            bj = _soft_threshold(rho, lam1) / (gjj + lam2)
        d = bj - beta[j]
        if d != 0.0:
            r -= G[j, :] * d
            beta[j] = bj
            ad = abs(d)
            if ad > delta:
                delta = ad
    return delta


def _cholesky_solve(M, rhs):
    """Lower-Cholesky solve with a relative pivot tolerance.

    Loop order matches the compiled kernel so both backends produce the same
    floating-point results.  Returns None when the matrix is not safely
    positive definite.
    """
    k = M.shape[0]
    L = np.zeros((k, k))
    diag_max = max(float(M[i, i]) for i in range(k))
    if diag_max <= 0.0:
        return None
    tol = _PIVOT_RTOL * diag_max
    for i in range(k):
        for j in range(i + 1):
            acc = M[i, j]
            for t in range(j):
                acc -= L[i, t] * L[j, t]
            if i == j:
                if acc <= tol:
                    return None
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    x = np.zeros(k)
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
    return x


def _newton_step(G, c, beta, r, n_free, lam1, lam2):
    """Exact solve on the current support with frozen signs.

    The solution of (G_AA + lam2*D) b = c_A - lam1*s is the minimizer
    restricted to the sign orthant, so accepting it (only when every
    penalized coordinate keeps its sign) can never increase the objective.
    Returns True when the step was accepted and ``beta``/``r`` updated.
    """
    active = [j for j in range(G.shape[0]) if j < n_free or beta[j] != 0.0]
    k = len(active)
    if k == 0:
        return False
    M = np.empty((k, k))
    rhs = np.empty(k)
    sign = np.zeros(k)
    for a, j in enumerate(active):
        for b, l in enumerate(active):
            M[a, b] = G[j, l]
        rhs[a] = c[j]
        if j >= n_free:
            M[a, a] += lam2
            s = 1.0 if beta[j] > 0.0 else -1.0
            sign[a] = s
            rhs[a] -= lam1 * s
    b_new = _cholesky_solve(M, rhs)
    if b_new is None:
        return False
    for a in range(k):
        if sign[a] != 0.0 and b_new[a] * sign[a] <= 0.0:
            return False
    beta[:] = 0.0
    for a, j in enumerate(active):
        beta[j] = b_new[a]
    r[:] = c
    for a, j in enumerate(active):
        r -= G[j, :] * b_new[a]
    return True


def cd_solve(G, c, beta, n_free, lam1, lam2, tol, max_sweeps):
    """Minimize 0.5 b'Gb - c'b + lam1*|b_pen|_1 + 0.5*lam2*|b_pen|^2 in place.

    The first ``n_free`` coordinates are unpenalized (intercept block).
    ``beta`` is the warm start and is overwritten with the solution.
    Returns the number of sweeps used.
    """
    r = c - G @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(G, r, beta, n_free, lam1, lam2, False)
        sweeps += 1
        if delta < tol:
            return sweeps
        rounds = 0
        while sweeps < max_sweeps and rounds < _ACTIVE_SWEEP_CAP:
            delta = _sweep(G, r, beta, n_free, lam1, lam2, True)
            sweeps += 1
            rounds += 1
            if delta < tol:
                break
        if delta >= tol:
            _newton_step(G, c, beta, r, n_free, lam1, lam2)
            sweeps += 1
    return sweeps


def cd_path(G, c, lam1s, lam2s, n_free, tol, max_sweeps, out):
    """Warm-started solves along a penalty sequence; rows of ``out`` filled."""
    beta = np.zeros(G.shape[0])
    total = 0
    for t in range(lam1s.shape[0]):
        total += cd_solve(G, c, beta, n_free, lam1s[t], lam2s[t], tol, max_sweeps)
        out[t, :] = beta
    return total


def binomial_path(A, y, w, lam1s, lam2s, beta0, tol, max_sweeps,
                  irls_max, irls_tol, clamp, out):
    """Penalized logistic path: IRLS outer loop, CD inner solves, warm starts.

    ``A`` carries the intercept in column 0; working probabilities are kept in
    [clamp, 1-clamp].  Rows of ``out`` receive the solution at each penalty.
    """
    n, m = A.shape
    beta = np.zeros(m)
    beta[0] = beta0
    total = 0
    for t in range(lam1s.shape[0]):
        dev_prev = np.inf
        for _ in range(irls_max):
            eta = A @ beta
            prob = np.clip(_stable_expit(eta), clamp, 1.0 - clamp)
            wt = w * prob * (1.0 - prob)
            z = eta + (y - prob) / (prob * (1.0 - prob))
            dev = -2.0 * np.sum(w * (y * np.log(prob)
                                     + (1.0 - y) * np.log(1.0 - prob)))
            G = (A * wt[:, None]).T @ A / n
            c = A.T @ (wt * z) / n
            total += cd_solve(np.ascontiguousarray(G), c, beta, 1,
                              lam1s[t], lam2s[t], tol, max_sweeps)
            if abs(dev_prev - dev) < irls_tol * max(1.0, abs(dev)):
                break
            dev_prev = dev
        out[t, :] = beta
    return total
