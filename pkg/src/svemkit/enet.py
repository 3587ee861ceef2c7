"""Weighted elastic-net path solver for Gaussian and binomial responses.

Native implementation: cyclic coordinate descent on a Gram (covariance)
formulation with warm starts along a decreasing penalty grid, an IRLS outer
loop for the binomial family, optional relaxed (unpenalized active-set)
refits, and a repeated k-fold CV driver used as a baseline selector.

Predictors are standardized internally to weighted unit variance; reported
coefficients are on the original scale with the intercept in position 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernel
from .errors import DataError, NumericError
from .expand import DesignMatrix

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

DEFAULT_NLAMBDA = 100
DEFAULT_GAMMA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000
IRLS_MAX_ITER = 25
IRLS_TOL = 1e-8
PROB_CLAMP = 1e-5  # IRLS working probabilities kept in [clamp, 1-clamp]


@dataclass
class PathPoint:
    """One candidate solution: mixing alpha, penalty, relaxation, coefficients."""

    alpha: float
    lam: float
    gamma: float
    coefficients: np.ndarray  # original scale; position 0 is the intercept
    intercept_included: bool
    k_lambda: int
    degenerate_refit: bool = False


@dataclass
class PathFit:
    """Solved path: coefficient rows plus per-point penalty bookkeeping."""

    family: str
    alpha: float
    lambdas: np.ndarray  # per point, descending within each gamma block
    gammas: np.ndarray  # per point; all ones for non-relaxed fits
    coef: np.ndarray  # (n_points, p) original scale
    k_lambda: np.ndarray  # nonzero count incl. intercept, per point
    lambda_sequence: np.ndarray  # the distinct penalty grid
    means: np.ndarray
    scales: np.ndarray
    n_obs: int
    degenerate_refit: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate_refit is None:
            self.degenerate_refit = np.zeros(len(self.lambdas), dtype=bool)

    @property
    def n_points(self) -> int:
        return len(self.lambdas)

    @property
    def path(self) -> list[PathPoint]:
        return [
            PathPoint(self.alpha, float(self.lambdas[i]), float(self.gammas[i]),
                      self.coef[i].copy(), True, int(self.k_lambda[i]),
                      bool(self.degenerate_refit[i]))
            for i in range(self.n_points)
        ]

    def point(self, i: int) -> PathPoint:
        return self.path[i]


def _as_values(X) -> np.ndarray:
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def _validate_inputs(Xv, y, w, family):
    if not np.all(np.isfinite(Xv)):
        raise DataError("design matrix contains non-finite values")
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    if not np.all(np.isfinite(w)):
        raise DataError("weights contain non-finite values")
    if np.any(w < 0):
        raise DataError("weights must be nonnegative")
    if w.sum() <= 0:
        raise DataError("weights are all zero")
    if abs(w.mean() - 1.0) > 1e-6:
        raise DataError("weights must be rescaled to mean one by the caller")
    if len(y) < 2:
        raise DataError("need at least 2 observations")
    if not np.allclose(Xv[:, 0], 1.0):
        raise DataError("design matrix column 0 must be the intercept")
    if family == BINOMIAL and not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("binomial response must take values in {0, 1}")


def _standardize(Xv, w):
    """Weighted standardization of the non-intercept columns.

    Returns (Xs, means, scales, kept) where degenerate columns (zero weighted
    variance) are dropped from Xs and flagged out of ``kept``.
    """
    n, p = Xv.shape
    means = np.zeros(p)
    scales = np.ones(p)
    body = Xv[:, 1:]
    m = (w @ body) / n
    var = (w @ (body - m) ** 2) / n
    s = np.sqrt(var)
    kept = np.flatnonzero(s > 1e-12) + 1
    means[1:] = m
    scales[kept] = s[kept - 1]
    Xs = (Xv[:, kept] - means[kept]) / scales[kept]
    return Xs, means, scales, kept


def _lambda_grid(lam_max, nlambda, ratio):
    if not np.isfinite(lam_max) or lam_max <= 0:
        lam_max = 1.0  # degenerate response: whole path stays intercept-only
    return np.geomspace(lam_max, lam_max * ratio, nlambda)


def _default_ratio(n, p_full):
    return 1e-4 if n > p_full else 1e-2


def fit_path(
    X,
    y,
    weights,
    family: str = GAUSSIAN,
    alpha: float = 1.0,
    nlambda: int = DEFAULT_NLAMBDA,
    lambda_min_ratio: float | None = None,
    lambdas=None,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
) -> PathFit:
    """Solve the weighted elastic-net path at a log-spaced penalty grid.

    The grid runs from lambda_max (smallest penalty with all non-intercept
    coefficients zero) down to lambda_max * lambda_min_ratio; pass ``lambdas``
    to override (used by the CV driver to align fold grids). The intercept is
    never penalized.
    """
    if not 0.0 < alpha <= 1.0:
        raise DataError(f"alpha must be in (0, 1], got {alpha}")
    Xv = _as_values(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    _validate_inputs(Xv, y, w, family)
    n, p = Xv.shape
    ratio = _default_ratio(n, p) if lambda_min_ratio is None else lambda_min_ratio

    Xs, means, scales, kept = _standardize(Xv, w)

    if family == GAUSSIAN:
        coef_std, b0, lam_seq = _gaussian_path(
            Xs, y, w, alpha, nlambda, ratio, lambdas, tol, max_sweeps)
    elif family == BINOMIAL:
        coef_std, b0, lam_seq = _binomial_path(
            Xs, y, w, alpha, nlambda, ratio, lambdas, tol, max_sweeps)
    else:
        raise DataError(f"unknown family {family!r}")

    coef = np.zeros((len(lam_seq), p))
    coef[:, kept] = coef_std / scales[kept]
    coef[:, 0] = b0 - coef_std @ (means[kept] / scales[kept])
    k_lambda = 1 + np.count_nonzero(coef_std, axis=1)
    return PathFit(
        family=family, alpha=alpha, lambdas=lam_seq.copy(),
        gammas=np.ones(len(lam_seq)), coef=coef, k_lambda=k_lambda,
        lambda_sequence=lam_seq, means=means, scales=scales, n_obs=n,
    )


def _gaussian_path(Xs, y, w, alpha, nlambda, ratio, lambdas, tol, max_sweeps):
    n, m = Xs.shape
    ybar = (w @ y) / n
    yc = y - ybar
    Wx = Xs * w[:, None]
    G = np.ascontiguousarray(Wx.T @ Xs / n)
    c = Wx.T @ yc / n
    if lambdas is None:
        lam_max = np.abs(c).max() / alpha if m else 0.0
        lam_seq = _lambda_grid(lam_max, nlambda, ratio)
    else:
        lam_seq = np.asarray(lambdas, dtype=float)
    coef_std = np.zeros((len(lam_seq), m))
    if m:
        lam1 = np.ascontiguousarray(lam_seq * alpha)
        lam2 = np.ascontiguousarray(lam_seq * (1.0 - alpha))
        _kernel.cd_path(G, c, lam1, lam2, 0, tol, max_sweeps, coef_std)
    # Intercept decouples: columns have weighted mean zero.
    b0 = np.full(len(lam_seq), ybar)
    return coef_std, b0, lam_seq


def _binomial_null_prob(y, w, n):
    pbar = float(np.clip((w @ y) / n, PROB_CLAMP, 1.0 - PROB_CLAMP))
    return pbar


def _binomial_path(Xs, y, w, alpha, nlambda, ratio, lambdas, tol, max_sweeps):
    n, m = Xs.shape
    pbar = _binomial_null_prob(y, w, n)
    if lambdas is None:
        grad = (w * (y - pbar)) @ Xs / n if m else np.zeros(0)
        lam_max = np.abs(grad).max() / alpha if m else 0.0
        # Cushion absorbs roundoff in the IRLS gradient recomputation so the
        # path head is exactly the intercept-only model.
        lam_seq = _lambda_grid(lam_max * (1.0 + 1e-10), nlambda, ratio)
    else:
        lam_seq = np.asarray(lambdas, dtype=float)

    A = np.ascontiguousarray(np.column_stack([np.ones(n), Xs]))
    out = np.zeros((len(lam_seq), m + 1))
    _kernel.binomial_path(
        A, y, np.ascontiguousarray(w),
        np.ascontiguousarray(lam_seq * alpha),
        np.ascontiguousarray(lam_seq * (1.0 - alpha)),
        float(np.log(pbar / (1.0 - pbar))),
        tol, max_sweeps, IRLS_MAX_ITER, IRLS_TOL, PROB_CLAMP, out)
    return out[:, 1:], out[:, 0], lam_seq


def _expit(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relaxed_refit(fit: PathFit, X, y, weights, gamma_grid=DEFAULT_GAMMA_GRID) -> PathFit:
    """Blend each path point with its unpenalized active-set refit.

    For every original point and every gamma: coefficients are
    gamma * penalized + (1 - gamma) * refit-on-active-set, with the active set
    unchanged.  A singular refit falls back to the penalized point and flags
    the result as degenerate.
    """
    gamma_grid = [float(g) for g in gamma_grid]
    if any(g < 0 or g > 1 for g in gamma_grid):
        raise DataError("gamma_grid values must lie in [0, 1]")
    Xv = _as_values(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    _validate_inputs(Xv, y, w, fit.family)
    n, p = Xv.shape

    solver = _GaussianRefitter(Xv, y, w) if fit.family == GAUSSIAN else _BinomialRefitter(Xv, y, w)
    support, inverse = np.unique(fit.coef[:, 1:] != 0.0, axis=0, return_inverse=True)
    group_refit = np.empty((support.shape[0], p))
    group_bad = np.zeros(support.shape[0], dtype=bool)
    for g_idx in range(support.shape[0]):
        active = np.flatnonzero(support[g_idx]) + 1
        first = int(np.argmax(inverse == g_idx))
        group_refit[g_idx], group_bad[g_idx] = solver.refit(list(active), fit.coef[first])
    degenerate = group_bad[inverse]
    refit_rows = group_refit[inverse]
    refit_rows[degenerate] = fit.coef[degenerate]

    n_g = len(gamma_grid)
    lambdas = np.repeat(fit.lambdas, n_g)
    gammas = np.tile(np.asarray(gamma_grid), fit.n_points)
    k_lambda = np.repeat(fit.k_lambda, n_g)
    degenerate_out = np.repeat(degenerate, n_g)
    g_col = gammas[:, None]
    coef = g_col * np.repeat(fit.coef, n_g, axis=0) + (1.0 - g_col) * np.repeat(refit_rows, n_g, axis=0)
    return PathFit(
        family=fit.family, alpha=fit.alpha, lambdas=lambdas, gammas=gammas,
        coef=coef, k_lambda=k_lambda, lambda_sequence=fit.lambda_sequence,
        means=fit.means, scales=fit.scales, n_obs=fit.n_obs,
        degenerate_refit=degenerate_out,
    )


class _GaussianRefitter:
    def __init__(self, Xv, y, w):
        self.n, self.p = Xv.shape
        Xw = Xv * w[:, None]
        self.G = Xw.T @ Xv / self.n
        self.c = Xw.T @ y / self.n

    def refit(self, active, _warm):
        cols = [0] + list(active)
        b = _spd_solve(self.G[np.ix_(cols, cols)], self.c[cols])
        if b is None:
            return np.zeros(self.p), True
        out = np.zeros(self.p)
        out[cols] = b
        return out, False


def _spd_solve(M, rhs):
    """Solve an SPD system; None when not safely positive definite."""
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) ** 2 <= 1e-10 * np.max(np.diag(M)):
        return None
    b = scipy.linalg.cho_solve((L, True), rhs, check_finite=False)
    return b if np.all(np.isfinite(b)) else None


class _BinomialRefitter:
    """Unpenalized logistic refit on the active set via full IRLS."""

    def __init__(self, Xv, y, w):
        self.Xv, self.y, self.w, self.n = Xv, y, w, len(y)

    def refit(self, active, warm):
        cols = [0] + list(active)
        A = self.Xv[:, cols]
        b = warm[cols].copy()
        dev_prev = np.inf
        for _ in range(IRLS_MAX_ITER):
            eta = A @ b
            prob = np.clip(_expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
            wt = self.w * prob * (1.0 - prob)
            z = eta + (self.y - prob) / (prob * (1.0 - prob))
            Aw = A * wt[:, None]
            b_new = _spd_solve(Aw.T @ A / self.n, Aw.T @ z / self.n)
            if b_new is None:
                return np.zeros(self.Xv.shape[1]), True
            b = b_new
            dev = -2.0 * np.sum(self.w * (self.y * np.log(prob)
                                          + (1.0 - self.y) * np.log(1.0 - prob)))
            if abs(dev_prev - dev) < IRLS_TOL * max(1.0, abs(dev)):
                break
            dev_prev = dev
        out = np.zeros(self.Xv.shape[1])
        out[cols] = b
        return out, False


def predict_path_point(point: PathPoint, X_new, scale: str = "link") -> np.ndarray:
    """Linear predictor X @ beta; inverse-logit when scale='response' for binomial fits."""
    Xv = _as_values(X_new)
    if Xv.shape[1] != len(point.coefficients):
        raise DataError(
            f"column mismatch: design has {Xv.shape[1]} columns, "
            f"coefficients expect {len(point.coefficients)}")
    eta = Xv @ point.coefficients
    if scale == "response":
        return _expit(eta)
    if scale != "link":
        raise DataError(f"unknown prediction scale {scale!r}")
    return eta


def kkt_max_violation(fit: PathFit, X, y, weights) -> float:
    """Max stationarity violation over all non-relaxed gaussian path points.

    On the standardized scale: nonzero coefficients must satisfy
    (1/n) sum_i w_i x_ij r_i = alpha*lam*sign(b_j) + (1-alpha)*lam*b_j and
    zero coefficients |(1/n) sum_i w_i x_ij r_i| <= alpha*lam.
    """
    if fit.family != GAUSSIAN:
        raise DataError("KKT diagnostic implemented for gaussian fits")
    Xv = _as_values(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    Xs, means, scales, kept = _standardize(Xv, w)
    n = len(y)
    ybar = (w @ y) / n
    yc = y - ybar
    Wx = Xs * w[:, None]
    G = Wx.T @ Xs / n
    c = Wx.T @ yc / n
    worst = 0.0
    for i in range(fit.n_points):
        if fit.gammas[i] != 1.0:
            continue
        b_std = fit.coef[i, kept] * scales[kept]
        r = c - G @ b_std
        lam = fit.lambdas[i]
        a = fit.alpha
        nz = b_std != 0.0
        if nz.any():
            resid = r[nz] - (a * lam * np.sign(b_std[nz]) + (1 - a) * lam * b_std[nz])
            worst = max(worst, float(np.abs(resid).max()))
        if (~nz).any():
            slack = np.abs(r[~nz]) - a * lam
            worst = max(worst, float(max(0.0, slack.max())))
    return worst


# ---------------------------------------------------------------------------
# Repeated k-fold cross-validation driver (baseline selector)
# ---------------------------------------------------------------------------
def _fold_ids(n, k, rng):
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(perm, k)):
        ids[chunk] = f
    return ids


def _cv_rng(seed, rep, salt=0):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(rep, salt))))


def repeated_kfold_cv(
    X,
    y,
    family: str = GAUSSIAN,
    alpha_grid=(0.5, 1.0),
    relax: bool = False,
    k: int = 5,
    repeats: int = 3,
    rng_seed: int = 0,
    nlambda: int = DEFAULT_NLAMBDA,
    lambda_min_ratio: float | None = None,
    gamma_grid=DEFAULT_GAMMA_GRID,
    folds=None,
) -> PathPoint:
    """Repeated k-fold CV over (alpha, lambda[, gamma]); returns the
    out-of-fold loss minimizer refit on the full data.

    ``folds`` may supply explicit per-repeat fold-id arrays, overriding the
    seeded shuffles (fold assignment otherwise derives only from rng_seed).
    """
    Xv = _as_values(X)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if k < 2:
        raise DataError("k must be >= 2")
    if n < 2 * k:
        raise DataError(f"need n >= 2k observations (n={n}, k={k})")
    if folds is None:
        folds = [_fold_ids(n, k, _cv_rng(rng_seed, rep)) for rep in range(repeats)]
        if family == BINOMIAL:
            folds = [_check_binomial_folds(y, ids, k, rng_seed, rep)
                     for rep, ids in enumerate(folds)]
    else:
        folds = [np.asarray(f, dtype=int) for f in folds]

    full_w = np.ones(n)
    masters = {}
    for alpha in alpha_grid:
        fit = fit_path(Xv, y, full_w, family, alpha, nlambda, lambda_min_ratio)
        if relax:
            fit = relaxed_refit(fit, Xv, y, full_w, gamma_grid)
        masters[alpha] = fit

    best = None  # (loss, order, alpha, point_index)
    for a_idx, alpha in enumerate(alpha_grid):
        master = masters[alpha]
        lam_seq = master.lambda_sequence
        loss_sum = np.zeros(master.n_points)
        count = 0
        for ids in folds:
            for f in range(k):
                val = ids == f
                train = ~val
                w_tr = np.ones(int(train.sum()))
                fold_fit = fit_path(Xv[train], y[train], w_tr, family, alpha,
                                    lambdas=lam_seq)
                if relax:
                    fold_fit = relaxed_refit(fold_fit, Xv[train], y[train],
                                             w_tr, gamma_grid)
                preds = Xv[val] @ fold_fit.coef.T
                if family == GAUSSIAN:
                    loss_sum += ((y[val, None] - preds) ** 2).sum(axis=0)
                else:
                    p_hat = np.clip(_expit(preds), 1e-12, 1.0 - 1e-12)
                    yv = y[val, None]
                    loss_sum += -(yv * np.log(p_hat)
                                  + (1.0 - yv) * np.log(1.0 - p_hat)).sum(axis=0)
                count += int(val.sum())
        mean_loss = loss_sum / count
        i_best = int(np.argmin(mean_loss))
        cand = (float(mean_loss[i_best]), a_idx, alpha, i_best)
        if best is None or cand[0] < best[0]:
            best = cand
    _, _, alpha, i_best = best
    return masters[alpha].point(i_best)


def _check_binomial_folds(y, ids, k, seed, rep):
    def ok(ids):
        return all(len(np.unique(y[ids != f])) == 2 for f in range(k))

    if ok(ids):
        return ids
    ids = _fold_ids(len(y), k, _cv_rng(seed, rep, salt=1))
    if ok(ids):
        return ids
    raise DataError("a CV training fold contains a single response class")
