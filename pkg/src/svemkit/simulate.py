"""Benchmarking harness: sparse quadratic surfaces, LHS designs, ensemble vs
repeated-CV baselines, per-replicate metric records.

Each replicate draws a fresh random order-2 surface in four continuous
factors and one three-level factor (sum-to-zero coded), generates a Latin
hypercube training design with balanced categorical levels, adds noise scaled
to a target R-squared (or discretizes through a logistic link), fits the
configured method at a chosen expansion order, and scores predictions on a
noiseless 10,000-point holdout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .enet import GAUSSIAN, predict_path_point, repeated_kfold_cv
from .errors import ConfigError
from .expand import Dataset, build_expansion_spec, expand_rows, term_count
from .svem import fit_svem, predict_svem

FACTORS = ["X1", "X2", "X3", "X4", "X5"]
X5_LEVELS = ["L1", "L2", "L3"]
N_TRUTH_TERMS = 25
HOLDOUT_SIZE = 10_000
METRIC_FLOOR = 1e-8  # caps log-NRMSE for near-perfect fits
ORDER_PARAMS = {1: (1, 1), 2: (2, 2), 3: (3, 3)}
EXPECTED_P_FULL = {1: 7, 2: 25, 3: 45}


# ---------------------------------------------------------------------------
# Designs and surfaces
# ---------------------------------------------------------------------------
def make_lhs_design(n_total: int, rng: np.random.Generator) -> Dataset:
    """Latin hypercube on [-1, 1] for X1..X4 (one point per stratum,
    independently permuted per column) with X5 levels as balanced as n allows."""
    if n_total < 3:
        raise ConfigError("need n_total >= 3")
    cols = {}
    for name in FACTORS[:4]:
        strata = (rng.permutation(n_total) + rng.random(n_total)) / n_total
        cols[name] = 2.0 * strata - 1.0
    base, extra = divmod(n_total, len(X5_LEVELS))
    levels = []
    for i, lvl in enumerate(X5_LEVELS):
        levels.extend([lvl] * (base + (1 if i < extra else 0)))
    cols["X5"] = np.asarray(levels, dtype=object)[rng.permutation(n_total)].astype(str)
    return Dataset.from_columns(cols)


def _holdout_grid(rng: np.random.Generator, size: int = HOLDOUT_SIZE) -> Dataset:
    cols = {}
    for name in FACTORS[:4]:
        strata = (rng.permutation(size) + rng.random(size)) / size
        cols[name] = 2.0 * strata - 1.0
    cols["X5"] = np.asarray([X5_LEVELS[i % 3] for i in range(size)], dtype=object).astype(str)
    return Dataset.from_columns(cols)


def truth_design(data: Dataset) -> np.ndarray:
    """Order-2 truth design: intercept, mains (X5 sum-to-zero coded), all
    two-way interactions, pure quadratics; 25 columns."""
    X = np.column_stack([data.column(f) for f in FACTORS[:4]])
    lvl = data.column("X5")
    z1 = np.where(lvl == "L1", 1.0, np.where(lvl == "L3", -1.0, 0.0))
    z2 = np.where(lvl == "L2", 1.0, np.where(lvl == "L3", -1.0, 0.0))
    n = X.shape[0]
    cols = [np.ones(n)]
    cols.extend(X[:, j] for j in range(4))
    cols.extend([z1, z2])
    for i in range(4):
        for j in range(i + 1, 4):
            cols.append(X[:, i] * X[:, j])
    for j in range(4):
        cols.append(X[:, j] * z1)
        cols.append(X[:, j] * z2)
    cols.extend(X[:, j] ** 2 for j in range(4))
    out = np.column_stack(cols)
    assert out.shape[1] == N_TRUTH_TERMS
    return out


def draw_sparse_beta(rng: np.random.Generator) -> np.ndarray:
    """Sparse coefficients: pi_j ~ Beta(0.5, 0.5), Z_j ~ Bernoulli(pi_j),
    E_j ~ Laplace(0, 1), beta_j = Z_j * E_j."""
    pi = rng.beta(0.5, 0.5, N_TRUTH_TERMS)
    z = rng.random(N_TRUTH_TERMS) < pi
    e = rng.laplace(0.0, 1.0, N_TRUTH_TERMS)
    return np.where(z, e, 0.0)


@dataclass
class SurfaceSpec:
    """Drawn truth surface: order-2 coefficients and its holdout-grid sd."""

    beta: np.ndarray
    sigma_f: float
    s: float | None = None  # binomial signal scale, set by the binomial runner
    redraws: int = 0


def _draw_surface_and_grid(rng: np.random.Generator, grid_size: int = HOLDOUT_SIZE):
    """Surface plus its evaluation grid; redraws degenerate all-zero surfaces
    (noise scaling is undefined at sigma_f = 0)."""
    redraws = 0
    while True:
        beta = draw_sparse_beta(rng)
        grid = _holdout_grid(rng, grid_size)
        eta = truth_design(grid) @ beta
        sigma_f = float(eta.std())
        if sigma_f > 0.0:
            return SurfaceSpec(beta, sigma_f, redraws=redraws), grid, eta
        redraws += 1


def gen_surface(rng: np.random.Generator) -> SurfaceSpec:
    """Draw a sparse order-2 surface; sigma_f estimated on a 10,000-point grid."""
    surface, _, _ = _draw_surface_and_grid(rng)
    return surface


def noise_sd_for_target_r2(sigma_f: float, target_r2: float) -> float:
    return sigma_f * math.sqrt((1.0 - target_r2) / target_r2)


def binomial_scale(target_r2: float) -> float:
    return math.sqrt(target_r2 / (1.0 - target_r2))


def log_nrmse(rmse: float, sigma_f: float) -> float:
    return float(np.log(max(rmse / sigma_f, METRIC_FLOOR)))


def holdout_log_loss(p_true: np.ndarray, p_hat: np.ndarray) -> float:
    p_hat = np.clip(p_hat, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-(p_true * np.log(p_hat)
                           + (1.0 - p_true) * np.log(1.0 - p_hat))))


# ---------------------------------------------------------------------------
# Cells and settings
# ---------------------------------------------------------------------------
@dataclass
class SimSetting:
    """One fitting configuration compared by the harness."""

    method: str = "svem"  # svem | cv
    objective: str = "wAIC"  # svem only
    relax: bool = True
    alpha_grid: tuple = (0.5, 1.0)
    debias: bool = False
    b: int = 50  # ensemble replicates for svem settings
    cv_k: int = 5
    cv_repeats: int = 3

    def __post_init__(self):
        if self.method not in ("svem", "cv"):
            raise ConfigError(f"unknown method {self.method!r}")

    @property
    def name(self) -> str:
        relax = f"relax{'TRUE' if self.relax else 'FALSE'}"
        if self.method == "cv":
            base = f"CV_{relax}"
        else:
            base = f"SVEM_{self.objective}_{relax}"
        return base + ("_debias" if self.debias else "")

    @classmethod
    def from_dict(cls, doc: dict) -> "SimSetting":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown setting fields: {sorted(extra)}")
        doc = dict(doc)
        if "alpha_grid" in doc:
            doc["alpha_grid"] = tuple(doc["alpha_grid"])
        return cls(**doc)


@dataclass
class SimCell:
    """One simulation configuration to replicate."""

    n_total: int
    target_r2: float
    fit_order: int
    setting: SimSetting
    n_reps: int
    seed: int = 0

    def __post_init__(self):
        if self.fit_order not in ORDER_PARAMS:
            raise ConfigError(f"fit_order must be 1, 2, or 3, got {self.fit_order}")
        if not 0.0 < self.target_r2 < 1.0:
            raise ConfigError("target_r2 must be in (0, 1)")


@dataclass
class RepRecord:
    """One replicate's outcome."""

    run_id: str
    n_total: int
    target_r2: float
    fit_order: int
    setting: str
    metric: float = np.nan
    k_median: float = np.nan
    seed: int = 0
    skipped: str | None = None
    diagnostics: dict = field(default_factory=dict)


def _rep_streams(cell: SimCell, rep: int):
    """Data stream shared by all settings at this (seed, rep); fit seed is a
    separate substream so refits never perturb the data draws."""
    data_rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(cell.seed, spawn_key=(rep,))))
    fit_seed = int(np.random.SeedSequence(cell.seed, spawn_key=(rep, 1))
                   .generate_state(1)[0])
    return data_rng, fit_seed


def _build_spec(train: Dataset, fit_order: int):
    fo, po = ORDER_PARAMS[fit_order]
    spec = build_expansion_spec(train, FACTORS, factorial_order=fo, polynomial_order=po)
    p_full = term_count(spec)
    if p_full != EXPECTED_P_FULL[fit_order]:
        raise ConfigError(
            f"expansion dimension mismatch at order {fit_order}: "
            f"{p_full} != {EXPECTED_P_FULL[fit_order]}")
    return spec


def _fit_and_predict(setting: SimSetting, spec, train: Dataset, response: str,
                     family: str, holdout: Dataset, fit_seed: int):
    if setting.method == "svem":
        model = fit_svem(spec, train, response, family=family, B=setting.b,
                         alpha_grid=setting.alpha_grid, relax=setting.relax,
                         objective=setting.objective, debias=setting.debias,
                         rng_seed=fit_seed)
        preds = predict_svem(model, holdout)
        ks = [s.k_lambda for s in model.selections]
        diag = {
            "k_median": float(np.median(ks)),
            "k_mean": float(np.mean(ks)),
            "n_wsse_fallback": sum(s.wsse_fallback for s in model.selections),
            "n_degenerate_refit": sum(s.degenerate_refit for s in model.selections),
        }
    else:
        X = expand_rows(spec, train)
        y = train.column(response).astype(float)
        point = repeated_kfold_cv(X, y, family=family,
                                  alpha_grid=setting.alpha_grid,
                                  relax=setting.relax, k=setting.cv_k,
                                  repeats=setting.cv_repeats, rng_seed=fit_seed)
        scale = "response" if family != GAUSSIAN else "link"
        preds = predict_path_point(point, expand_rows(spec, holdout), scale=scale)
        diag = {"k_median": float(point.k_lambda), "k_mean": float(point.k_lambda)}
    return preds, diag


def run_gaussian_cell(cell: SimCell) -> list[RepRecord]:
    """Gaussian replicates: noise scaled so the expected domain R^2 matches the
    target; metric is log(holdout RMSE / sigma_f)."""
    records = []
    for rep in range(cell.n_reps):
        data_rng, fit_seed = _rep_streams(cell, rep)
        surface, holdout, eta_grid = _draw_surface_and_grid(data_rng)
        train = make_lhs_design(cell.n_total, data_rng)
        eta_train = truth_design(train) @ surface.beta
        noise_sd = noise_sd_for_target_r2(surface.sigma_f, cell.target_r2)
        y = eta_train + data_rng.normal(0.0, noise_sd, cell.n_total)
        rec = RepRecord(
            run_id=f"{cell.setting.name}-n{cell.n_total}-r2{cell.target_r2}"
                   f"-o{cell.fit_order}-rep{rep}",
            n_total=cell.n_total, target_r2=cell.target_r2,
            fit_order=cell.fit_order, setting=cell.setting.name, seed=cell.seed)
        try:
            train_ds = Dataset.from_columns(
                {**{f: train.column(f) for f in FACTORS}, "y": y})
            spec = _build_spec(train_ds, cell.fit_order)
            preds, diag = _fit_and_predict(cell.setting, spec, train_ds, "y",
                                           GAUSSIAN, holdout, fit_seed)
            rmse = float(np.sqrt(np.mean((preds - eta_grid) ** 2)))
            rec.metric = log_nrmse(rmse, surface.sigma_f)
            rec.k_median = diag["k_median"]
            rec.diagnostics = {**diag, "sigma_f": surface.sigma_f,
                               "noise_sd": noise_sd, "redraws": surface.redraws}
        except Exception as exc:  # record and continue; the cell must finish
            rec.skipped = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def run_binomial_cell(cell: SimCell) -> list[RepRecord]:
    """Binomial replicates: the latent surface is standardized to unit holdout
    sd, scaled by s = sqrt(R2/(1-R2)), and discretized through the logistic
    link; metric is holdout cross-entropy against the true probabilities."""
    records = []
    s = binomial_scale(cell.target_r2)
    for rep in range(cell.n_reps):
        data_rng, fit_seed = _rep_streams(cell, rep)
        surface, holdout, eta_grid = _draw_surface_and_grid(data_rng)
        surface.s = s
        mu, sd = float(eta_grid.mean()), float(eta_grid.std())
        train = make_lhs_design(cell.n_total, data_rng)
        eta_train = truth_design(train) @ surface.beta
        p_grid = 1.0 / (1.0 + np.exp(-s * (eta_grid - mu) / sd))
        p_train = 1.0 / (1.0 + np.exp(-s * (eta_train - mu) / sd))
        y = (data_rng.random(cell.n_total) < p_train).astype(float)
        if len(np.unique(y)) < 2:
            y = (data_rng.random(cell.n_total) < p_train).astype(float)
        rec = RepRecord(
            run_id=f"{cell.setting.name}-n{cell.n_total}-r2{cell.target_r2}"
                   f"-o{cell.fit_order}-rep{rep}",
            n_total=cell.n_total, target_r2=cell.target_r2,
            fit_order=cell.fit_order, setting=cell.setting.name, seed=cell.seed)
        if len(np.unique(y)) < 2:
            rec.skipped = "single-class training draw after one redraw"
            records.append(rec)
            continue
        try:
            train_ds = Dataset.from_columns(
                {**{f: train.column(f) for f in FACTORS}, "y": y})
            spec = _build_spec(train_ds, cell.fit_order)
            preds, diag = _fit_and_predict(cell.setting, spec, train_ds, "y",
                                           "binomial", holdout, fit_seed)
            rec.metric = holdout_log_loss(p_grid, preds)
            rec.k_median = diag["k_median"]
            rec.diagnostics = {**diag, "sigma_f": surface.sigma_f, "s": s,
                               "redraws": surface.redraws}
        except Exception as exc:
            rec.skipped = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def run_cell(cell: SimCell, family: str = GAUSSIAN) -> list[RepRecord]:
    if family == GAUSSIAN:
        return run_gaussian_cell(cell)
    return run_binomial_cell(cell)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------
def records_frame(records) -> pd.DataFrame:
    rows = [{
        "run_id": r.run_id, "n_total": r.n_total, "target_R2": r.target_r2,
        "order": r.fit_order, "setting": r.setting, "metric": r.metric,
        "k_median": r.k_median, "seed": r.seed, "skipped": r.skipped or "",
    } for r in records]
    return pd.DataFrame(rows)


def summarize(records, group_keys=("n_total", "target_R2", "order", "setting")) -> pd.DataFrame:
    """Mean metric and mean k_median per group with counts and standard errors."""
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records)
    if frame.empty:
        raise ConfigError("no records to summarize")
    ok = frame[frame["skipped"] == ""] if "skipped" in frame.columns else frame
    grouped = ok.groupby(list(group_keys), as_index=False).agg(
        mean_metric=("metric", "mean"),
        se_metric=("metric", lambda v: float(np.std(v, ddof=1) / np.sqrt(len(v)))
                   if len(v) > 1 else 0.0),
        mean_k_median=("k_median", "mean"),
        n_reps=("metric", "size"),
    )
    return grouped
