"""Self-validated ensemble engine over the elastic-net path solver.

Each ensemble replicate draws anti-correlated fractional train/validation
weights from a shared uniform draw, fits penalty paths under the training
weights, scores every candidate path point on the validation copy with a
validation-weighted criterion, and stores the winning coefficients.  Ensemble
predictions average the member predictions; percentile intervals come from
the member spread.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__, enet
from .enet import BINOMIAL, DEFAULT_GAMMA_GRID, GAUSSIAN, _expit
from .errors import ConfigError, DataError
from .expand import Dataset, ExpansionSpec, expand_rows, spec_from_dict, spec_to_dict

DEFAULT_B = 200
DEFAULT_ALPHA_GRID = (0.5, 1.0)
OBJECTIVES = ("wSSE", "wAIC", "wBIC")
SSE_FLOOR = 1e-12
PROB_FLOOR = 1e-12


def replicate_rng(seed, index: int) -> np.random.Generator:
    """Counter-based generator for one replicate substream.

    Philox keyed by SeedSequence(seed, spawn_key=(index,)): replicate streams
    are independent of execution order, so serial and parallel runs agree.
    """
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(int(index),))))


# ---------------------------------------------------------------------------
# Fractional random weights
# ---------------------------------------------------------------------------
@dataclass
class FrwPair:
    """Anti-correlated train/validation weights from one shared uniform draw."""

    u: np.ndarray
    w_train: np.ndarray
    w_valid: np.ndarray


def draw_frw(n: int, rng: np.random.Generator) -> FrwPair:
    """Draw fractional random weights: w_train = -log U, w_valid = -log(1-U),
    each rescaled to mean one."""
    if n < 2:
        raise DataError("need n >= 2 to draw fractional weights")
    u = np.clip(rng.random(n), 1e-12, 1.0 - 1e-12)
    w_train = -np.log(u)
    w_valid = -np.log1p(-u)
    return FrwPair(u, w_train / w_train.mean(), w_valid / w_valid.mean())


# ---------------------------------------------------------------------------
# Validation-weighted selection criteria
# ---------------------------------------------------------------------------
@dataclass
class EffectiveSize:
    """Kish effective sample size and its clamped admissible version."""

    n_eff: float
    n_eff_adm: float


def kish_neff(w: np.ndarray) -> EffectiveSize:
    """n_eff = (sum w)^2 / sum w^2, clamped into [2, n]."""
    w = np.asarray(w, dtype=float)
    n_eff = float(w.sum() ** 2 / (w ** 2).sum())
    n_eff_adm = float(min(len(w), max(2.0, n_eff)))
    return EffectiveSize(n_eff, n_eff_adm)


@dataclass
class CriterionConfig:
    objective: str = "wAIC"
    family: str = GAUSSIAN

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")

    def g(self, n_eff_adm: float) -> float:
        if self.objective == "wSSE":
            return 0.0
        if self.objective == "wAIC":
            return 2.0
        return float(np.log(n_eff_adm))


def criterion_gaussian(residuals, w_valid, k_lambda: int, config: CriterionConfig) -> float:
    """Validation-weighted gaussian score.

    wSSE returns the weighted SSE itself; wAIC/wBIC return
    n*log(SSE_w/n) + g*k_lambda and are +inf (inadmissible) when
    k_lambda - 1 >= n_eff_adm of the validation weights.
    """
    r = np.asarray(residuals, dtype=float)
    w = np.asarray(w_valid, dtype=float)
    n = len(r)
    sse = float(np.sum(w * r * r))
    if config.objective == "wSSE":
        return sse
    eff = kish_neff(w)
    if k_lambda - 1 >= eff.n_eff_adm:
        return np.inf
    g = config.g(eff.n_eff_adm)
    return n * np.log(max(sse, SSE_FLOOR) / n) + g * k_lambda


def criterion_binomial(y, p_hat, w_valid, k_lambda: int, config: CriterionConfig) -> float:
    """Validation-weighted binomial score: 2*NLL + g*k_lambda.

    The wSSE label is retained for the loss-only g = 0 rule even though it
    operates on the weighted negative log-likelihood.
    """
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p_hat, dtype=float), PROB_FLOOR, 1.0 - PROB_FLOOR)
    w = np.asarray(w_valid, dtype=float)
    nll = float(-np.sum(w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    if config.objective == "wSSE":
        return 2.0 * nll
    eff = kish_neff(w)
    if k_lambda - 1 >= eff.n_eff_adm:
        return np.inf
    return 2.0 * nll + config.g(eff.n_eff_adm) * k_lambda


def _scores_gaussian(preds, y, w_valid, k_lambda, objective, n_eff_adm):
    """Vectorized criterion over candidate path points (columns of preds)."""
    resid = y[:, None] - preds
    sse = w_valid @ (resid * resid)
    if objective == "wSSE":
        return sse
    n = len(y)
    g = 2.0 if objective == "wAIC" else np.log(n_eff_adm)
    scores = n * np.log(np.maximum(sse, SSE_FLOOR) / n) + g * k_lambda
    scores[k_lambda - 1 >= n_eff_adm] = np.inf
    return scores


def _scores_binomial(preds_link, y, w_valid, k_lambda, objective, n_eff_adm):
    p = np.clip(_expit(preds_link), PROB_FLOOR, 1.0 - PROB_FLOOR)
    nll = -(w_valid @ (y[:, None] * np.log(p) + (1.0 - y[:, None]) * np.log(1.0 - p)))
    if objective == "wSSE":
        return 2.0 * nll
    g = 2.0 if objective == "wAIC" else np.log(n_eff_adm)
    scores = 2.0 * nll + g * k_lambda
    scores[k_lambda - 1 >= n_eff_adm] = np.inf
    return scores


# ---------------------------------------------------------------------------
# The ensemble model
# ---------------------------------------------------------------------------
@dataclass
class ReplicateSelection:
    alpha: float
    lam: float
    gamma: float
    k_lambda: int
    criterion: float
    n_eff_adm: float
    wsse_fallback: bool = False
    degenerate_refit: bool = False


@dataclass
class SvemModel:
    """Fitted ensemble: per-replicate selected coefficients and metadata."""

    spec: ExpansionSpec
    family: str
    response: str
    B: int
    coef_matrix: np.ndarray  # (B, p_full), original scale, column 0 intercept
    selections: list[ReplicateSelection]
    objective: str
    alpha_grid: tuple
    relax: bool
    rng_seed: int
    debias: tuple[float, float] | None = None
    column_names: list[str] = field(default_factory=list)

    @property
    def p_full(self) -> int:
        return self.coef_matrix.shape[1]


def _family_defaults(family, relax, objective):
    if relax is None:
        relax = family == GAUSSIAN
    if objective is None:
        objective = "wAIC" if family == GAUSSIAN else "wBIC"
    return relax, objective


def fit_svem(
    spec: ExpansionSpec,
    data: Dataset,
    response: str,
    family: str = GAUSSIAN,
    B: int = DEFAULT_B,
    alpha_grid=DEFAULT_ALPHA_GRID,
    relax: bool | None = None,
    objective: str | None = None,
    debias: bool = False,
    rng_seed: int = 0,
    nlambda: int = enet.DEFAULT_NLAMBDA,
    lambda_min_ratio: float | None = None,
    gamma_grid=DEFAULT_GAMMA_GRID,
) -> SvemModel:
    """Fit the self-validated ensemble.

    Per replicate: draw fractional train/validation weights, fit one path per
    alpha under the training weights (relaxed refits when ``relax``), score
    every (alpha, lambda, gamma) on the validation copy with the configured
    criterion, and keep the minimizer.  Defaults follow the family: gaussian
    uses wAIC with relaxed paths, binomial wBIC without relaxation.
    """
    if B < 1:
        raise ConfigError("B must be >= 1")
    relax, objective = _family_defaults(family, relax, objective)
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}")

    y = _response_vector(data, response, family)
    dm = expand_rows(spec, data)
    X = dm.values
    n, p = X.shape

    coef_matrix = np.empty((B, p))
    selections: list[ReplicateSelection] = []
    for b in range(B):
        rng = replicate_rng(rng_seed, b)
        frw = draw_frw(n, rng)
        eff = kish_neff(frw.w_valid)
        best = None  # (score, order, coef_row, selection)
        order = 0
        wsse_best = None
        for alpha in alpha_grid:
            fit = enet.fit_path(X, y, frw.w_train, family, alpha,
                                nlambda, lambda_min_ratio)
            if relax:
                fit = enet.relaxed_refit(fit, X, y, frw.w_train, gamma_grid)
            preds = X @ fit.coef.T
            if family == GAUSSIAN:
                scores = _scores_gaussian(preds, y, frw.w_valid, fit.k_lambda,
                                          objective, eff.n_eff_adm)
                wsse = _scores_gaussian(preds, y, frw.w_valid, fit.k_lambda,
                                        "wSSE", eff.n_eff_adm) if objective != "wSSE" else scores
            else:
                scores = _scores_binomial(preds, y, frw.w_valid, fit.k_lambda,
                                          objective, eff.n_eff_adm)
                wsse = _scores_binomial(preds, y, frw.w_valid, fit.k_lambda,
                                        "wSSE", eff.n_eff_adm) if objective != "wSSE" else scores
            i = int(np.argmin(scores))
            if best is None or scores[i] < best[0]:
                best = (float(scores[i]), order, fit.coef[i].copy(),
                        ReplicateSelection(alpha, float(fit.lambdas[i]),
                                           float(fit.gammas[i]), int(fit.k_lambda[i]),
                                           float(scores[i]), eff.n_eff_adm,
                                           degenerate_refit=bool(fit.degenerate_refit[i])))
            j = int(np.argmin(wsse))
            if wsse_best is None or wsse[j] < wsse_best[0]:
                wsse_best = (float(wsse[j]), order, fit.coef[j].copy(),
                             ReplicateSelection(alpha, float(fit.lambdas[j]),
                                                float(fit.gammas[j]), int(fit.k_lambda[j]),
                                                float(wsse[j]), eff.n_eff_adm,
                                                wsse_fallback=True,
                                                degenerate_refit=bool(fit.degenerate_refit[j])))
            order += 1
        if not np.isfinite(best[0]):
            # Every candidate inadmissible: fall back to the loss-only minimizer.
            best = wsse_best
        sel = best[3]
        if objective != "wSSE" and not sel.wsse_fallback:
            # Guardrail invariant: wAIC/wBIC never select a near-interpolating point.
            assert sel.k_lambda - 1 < sel.n_eff_adm, (
                f"guardrail violated in replicate {b}: k={sel.k_lambda}, "
                f"n_eff_adm={sel.n_eff_adm}")
        coef_matrix[b] = best[2]
        selections.append(sel)

    model = SvemModel(
        spec=spec, family=family, response=response, B=B,
        coef_matrix=coef_matrix, selections=selections, objective=objective,
        alpha_grid=tuple(float(a) for a in alpha_grid), relax=relax,
        rng_seed=int(rng_seed), column_names=dm.column_names,
    )
    if debias:
        if family != GAUSSIAN:
            raise ConfigError("debias calibration applies to gaussian models only")
        model.debias = _debias_calibration(model, X, y)
    return model


def _response_vector(data: Dataset, response: str, family: str) -> np.ndarray:
    if response not in data.names:
        raise DataError(f"response column {response!r} not found")
    if data.kinds[response] != "numeric":
        raise DataError(f"response column {response!r} must be numeric")
    data.check_complete([response])
    y = data.column(response).astype(float)
    if family == BINOMIAL and not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("binomial response must take values in {0, 1}")
    return y


def _debias_calibration(model: SvemModel, X: np.ndarray, y: np.ndarray):
    """Least-squares calibration of y on the ensemble training predictions."""
    yhat = (X @ model.coef_matrix.T).mean(axis=1)
    var = yhat.var()
    if var < 1e-24:
        return (float(y.mean()), 0.0)
    slope = float(np.cov(yhat, y, bias=True)[0, 1] / var)
    intercept = float(y.mean() - slope * yhat.mean())
    return (intercept, slope)


def member_predictions(model: SvemModel, new_data: Dataset) -> np.ndarray:
    """(B, n_new) member predictions: response scale for gaussian, probability
    scale for binomial."""
    dm = expand_rows(model.spec, new_data)
    if dm.column_names != model.column_names:
        raise DataError("expanded columns do not match the model's design")
    eta = model.coef_matrix @ dm.values.T
    return _expit(eta) if model.family == BINOMIAL else eta


def predict_svem(model: SvemModel, new_data: Dataset, interval_level: float | None = None):
    """Ensemble predictions; with ``interval_level`` = 1 - a, also the a/2 and
    1 - a/2 empirical percentiles of the member predictions per point."""
    members = member_predictions(model, new_data)
    mean = members.mean(axis=0)
    if model.debias is not None:
        a, b = model.debias
        mean = a + b * mean
    if interval_level is None:
        return mean
    if not 0.0 < interval_level < 1.0:
        raise ConfigError("interval_level must be in (0, 1)")
    tail = (1.0 - interval_level) / 2.0
    lower = np.quantile(members, tail, axis=0)
    upper = np.quantile(members, 1.0 - tail, axis=0)
    return mean, lower, upper


# ---------------------------------------------------------------------------
# Serialization (versioned JSON)
# ---------------------------------------------------------------------------
MODEL_FORMAT = "svemkit-model/1"


def model_to_dict(model: SvemModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": __version__,
        "family": model.family,
        "response": model.response,
        "B": model.B,
        "objective": model.objective,
        "alpha_grid": list(model.alpha_grid),
        "relax": model.relax,
        "rng_seed": model.rng_seed,
        "debias": list(model.debias) if model.debias is not None else None,
        "spec": spec_to_dict(model.spec),
        "column_names": model.column_names,
        "coef_matrix": [[float(v) for v in row] for row in model.coef_matrix],
        "selections": [
            {"alpha": s.alpha, "lambda": s.lam, "gamma": s.gamma,
             "k_lambda": s.k_lambda, "criterion": s.criterion,
             "n_eff_adm": s.n_eff_adm, "wsse_fallback": s.wsse_fallback,
             "degenerate_refit": s.degenerate_refit}
            for s in model.selections
        ],
    }


def model_from_dict(doc: dict) -> SvemModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model document format {doc.get('format')!r}")
    selections = [
        ReplicateSelection(d["alpha"], d["lambda"], d["gamma"], d["k_lambda"],
                           d["criterion"], d["n_eff_adm"], d["wsse_fallback"],
                           d["degenerate_refit"])
        for d in doc["selections"]
    ]
    return SvemModel(
        spec=spec_from_dict(doc["spec"]),
        family=doc["family"],
        response=doc["response"],
        B=int(doc["B"]),
        coef_matrix=np.asarray(doc["coef_matrix"], dtype=float),
        selections=selections,
        objective=doc["objective"],
        alpha_grid=tuple(doc["alpha_grid"]),
        relax=bool(doc["relax"]),
        rng_seed=int(doc["rng_seed"]),
        debias=tuple(doc["debias"]) if doc.get("debias") is not None else None,
        column_names=list(doc["column_names"]),
    )


def save_model(model: SvemModel, path, meta: dict | None = None) -> None:
    doc = model_to_dict(model)
    if meta:
        doc["_meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> SvemModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
