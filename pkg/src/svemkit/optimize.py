"""Mixture-constrained random-search scoring and candidate selection.

Generates feasible candidate settings under training ranges and sum-to-total
mixture constraints, scores them with weighted-geometric-mean desirabilities,
attaches bootstrap uncertainty and mean-level specification probabilities,
and shortlists diverse candidates via Gower-distance k-medoids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, NumericError
from .expand import CATEGORICAL, NUMERIC, Dataset, ExpansionSpec
from .svem import SvemModel, member_predictions

DEFAULT_N_CANDIDATES = 25_000
DEFAULT_INTERVAL_LEVEL = 0.95
SCORE_EPS = 1e-6
MULTIPLIER_FLOOR = 0.05  # shared with the whole-model-test reweighting


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------
@dataclass
class MixtureGroup:
    """Factors constrained to bounded nonnegative values with a fixed sum."""

    vars: list[str]
    lower: np.ndarray
    upper: np.ndarray
    total: float

    def __post_init__(self):
        self.vars = list(self.vars)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.total = float(self.total)
        k = len(self.vars)
        if self.lower.shape != (k,) or self.upper.shape != (k,):
            raise ConfigError("mixture bounds must match the variable list")
        if self.total <= 0:
            raise ConfigError("mixture total must be positive")
        if np.any(self.lower > self.upper):
            raise ConfigError("mixture lower bounds exceed upper bounds")
        if self.lower.sum() > self.total + 1e-12 or self.upper.sum() < self.total - 1e-12:
            raise ConfigError(
                f"infeasible mixture group over {self.vars}: need "
                f"sum(lower) <= total <= sum(upper)")

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureGroup":
        return cls(doc["vars"], doc["lower"], doc["upper"], doc["total"])


@dataclass
class Goal:
    """Optimization goal for one response."""

    goal: str  # max | min | target
    weight: float = 1.0
    target: float | None = None

    def __post_init__(self):
        if self.goal not in ("max", "min", "target"):
            raise ConfigError(f"unknown goal {self.goal!r}")
        if self.weight <= 0:
            raise ConfigError("goal weights must be positive")
        if self.goal == "target" and self.target is None:
            raise ConfigError("target goals need a target value")


def _as_goal(entry) -> Goal:
    if isinstance(entry, Goal):
        return entry
    return Goal(entry["goal"], entry.get("weight", 1.0), entry.get("target"))


def normalized_weights(goals: dict) -> dict[str, float]:
    """User weights scaled to sum to one."""
    total = sum(_as_goal(g).weight for g in goals.values())
    return {r: _as_goal(g).weight / total for r, g in goals.items()}


# ---------------------------------------------------------------------------
# Feasible candidate sampling
# ---------------------------------------------------------------------------
def _sample_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _sample_mixture_group(group: MixtureGroup, n: int, rng) -> np.ndarray:
    """Uniform draws from the bounded simplex {x: sum x = total, l <= x <= u}.

    Shift by the lower bounds, sample the remaining simplex by exponential
    spacings, and reject rows violating the upper bounds; exact-uniform over
    the feasible region at the cost of rejection.
    """
    k = len(group.vars)
    slack = group.total - group.lower.sum()
    if slack <= 1e-15:
        return np.tile(group.lower, (n, 1))
    out = np.empty((n, k))
    have = 0
    attempts = 0
    budget = 1_000_000 * math.ceil(max(n, 1) / 10_000)
    span = group.upper - group.lower
    while have < n:
        m = max(1024, min(65_536, 2 * (n - have)))
        u = np.clip(rng.random((m, k)), 1e-300, 1.0)
        g = -np.log(u)
        v = slack * g / g.sum(axis=1, keepdims=True)
        ok = np.all(v <= span + 1e-12, axis=1)
        take = min(int(ok.sum()), n - have)
        out[have:have + take] = group.lower + v[ok][:take]
        have += take
        attempts += m
        if have < n and attempts > budget:
            raise NumericError(
                f"mixture rejection budget exhausted for group {group.vars} "
                f"({have}/{n} accepted after {attempts} attempts)")
    return out


def _blocking_value(spec: ExpansionSpec, factor: str, policy):
    if isinstance(policy, dict) and factor in policy:
        return policy[factor]
    if spec.kinds[factor] == CATEGORICAL:
        return spec.categorical_modes[factor]
    lo, hi = spec.numeric_ranges[factor]
    return 0.5 * (lo + hi)


def sample_candidates(
    spec: ExpansionSpec,
    mixture_groups=(),
    n_candidates: int = DEFAULT_N_CANDIDATES,
    rng_seed: int = 0,
    blocking_policy="auto",
) -> Dataset:
    """Sample feasible factor settings.

    Non-mixture numerics are uniform over training ranges, categoricals
    uniform over levels, mixture groups uniform on their bounded simplex.
    Blocking factors are held fixed: categorical at the most frequent
    training level, numeric at the range midpoint (or at explicit values
    supplied via a {factor: value} blocking_policy).
    """
    if n_candidates < 1:
        raise ConfigError("n_candidates must be >= 1")
    groups = [g if isinstance(g, MixtureGroup) else MixtureGroup.from_dict(g)
              for g in mixture_groups]
    in_mixture = {}
    for g in groups:
        for v in g.vars:
            if v not in spec.main_effects:
                raise ConfigError(f"mixture variable {v!r} is not a main effect")
            if spec.kinds[v] != NUMERIC:
                raise ConfigError(f"mixture variable {v!r} must be numeric")
            if v in in_mixture:
                raise ConfigError(f"mixture variable {v!r} appears in two groups")
            in_mixture[v] = g

    rng = _sample_rng(rng_seed)
    columns: dict[str, np.ndarray] = {}
    for g in groups:
        draws = _sample_mixture_group(g, n_candidates, rng)
        for j, v in enumerate(g.vars):
            columns[v] = draws[:, j]
    out: dict[str, np.ndarray] = {}
    for f in spec.main_effects:
        if f in columns:
            out[f] = columns[f]
        elif spec.kinds[f] == NUMERIC:
            lo, hi = spec.numeric_ranges[f]
            out[f] = rng.uniform(lo, hi, n_candidates)
        else:
            levels = spec.categorical_levels[f]
            out[f] = np.asarray(levels, dtype=object)[rng.integers(0, len(levels), n_candidates)].astype(str)
    for f in spec.blocking:
        val = _blocking_value(spec, f, blocking_policy)
        if spec.kinds[f] == NUMERIC:
            out[f] = np.full(n_candidates, float(val))
        else:
            out[f] = np.full(n_candidates, str(val), dtype=object).astype(str)
    return Dataset.from_columns(out)


# ---------------------------------------------------------------------------
# Desirability
# ---------------------------------------------------------------------------
def desirability(value, goal, anchors) -> np.ndarray:
    """Piecewise-linear desirability in [0, 1] for max/min/target goals.

    ``anchors = (low, high)`` are the 0-to-1 ramp endpoints; target goals ramp
    from 0 at both anchors to 1 at the target.
    """
    g = _as_goal(goal)
    low, high = float(anchors[0]), float(anchors[1])
    v = np.asarray(value, dtype=float)
    span = high - low
    if span <= 1e-12:
        # No discrimination among candidates: the response carries no ranking
        # information, so it drops out of the geometric mean.
        return np.ones_like(v)
    if g.goal == "max":
        d = (v - low) / span
    elif g.goal == "min":
        d = (high - v) / span
    else:
        t = float(g.target)
        d = np.zeros_like(v)
        left = t - low
        right = high - t
        if left > 1e-12:
            lo_side = (v <= t)
            d[lo_side] = (v[lo_side] - low) / left
        else:
            d[v == t] = 1.0
        if right > 1e-12:
            hi_side = v > t
            d[hi_side] = (high - v[hi_side]) / right
        elif right <= 1e-12 and left <= 1e-12:
            d[v == t] = 1.0
    return np.clip(d, 0.0, 1.0)


def _geometric_score(desirs: dict[str, np.ndarray], weights: dict[str, float],
                     eps: float = SCORE_EPS) -> np.ndarray:
    acc = None
    for r, d in desirs.items():
        term = weights[r] * np.log((1.0 - eps) * d + eps)
        acc = term if acc is None else acc + term
    return np.exp(acc)


def wmt_adjusted_weights(weights: dict[str, float], multipliers: dict) -> dict[str, float]:
    raw = {r: weights[r] * float(multipliers[r]) for r in weights}
    total = sum(raw.values())
    if total <= 0:
        return dict(weights)
    return {r: v / total for r, v in raw.items()}


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------
def _norm01(values, q_lo, q_hi):
    span = q_hi - q_lo
    if span <= 1e-12:
        return np.zeros_like(values)
    return np.clip((values - q_lo) / span, 0.0, 1.0)


def score_candidates(
    models: dict[str, SvemModel],
    goals: dict,
    candidates: Dataset,
    wmt=None,
    specs: dict | None = None,
    interval_level: float = DEFAULT_INTERVAL_LEVEL,
    eps: float = SCORE_EPS,
    width_norm: str = "widths",
) -> pd.DataFrame:
    """Score candidate settings against the fitted models.

    Adds per-response predictions, percentile intervals, desirabilities, the
    weighted-geometric-mean ``score`` (and ``wmt_score`` when whole-model-test
    multipliers are given), the normalized-width ``uncertainty_measure``, and
    mean-level spec probabilities when limits are supplied.

    Desirability ramps are anchored at the 2%/98% quantiles of each response's
    predictions over the candidate set; interval widths are normalized by the
    2%/98% quantiles of the width distribution (``width_norm='widths'``) or by
    the response's own prediction range (``width_norm='response'``).
    """
    if candidates.n_rows == 0:
        raise DataError("empty candidate table")
    if set(models) != set(goals):
        raise ConfigError(
            f"model/goal name mismatch: models={sorted(models)} goals={sorted(goals)}")
    if width_norm not in ("widths", "response"):
        raise ConfigError(f"unknown width_norm {width_norm!r}")
    weights = normalized_weights(goals)

    table = candidates.to_dataframe()
    factor_cols = list(table.columns)
    tail = (1.0 - interval_level) / 2.0

    desirs: dict[str, np.ndarray] = {}
    widths_norm: dict[str, np.ndarray] = {}
    members_by_resp: dict[str, np.ndarray] = {}
    for r, model in models.items():
        members = member_predictions(model, candidates)
        members_by_resp[r] = members
        mean = members.mean(axis=0)
        if model.debias is not None:
            a, b = model.debias
            mean = a + b * mean
        lo = np.quantile(members, tail, axis=0)
        hi = np.quantile(members, 1.0 - tail, axis=0)
        width = hi - lo
        anchors = (np.quantile(mean, 0.02), np.quantile(mean, 0.98))
        desirs[r] = desirability(mean, goals[r], anchors)
        if width_norm == "widths":
            widths_norm[r] = _norm01(width, np.quantile(width, 0.02),
                                     np.quantile(width, 0.98))
        else:
            widths_norm[r] = _norm01(width, 0.0, anchors[1] - anchors[0])
        table[f"pred_{r}"] = mean
        table[f"lo_{r}"] = lo
        table[f"hi_{r}"] = hi
        table[f"width_{r}"] = width
        table[f"d_{r}"] = desirs[r]

    table["score"] = _geometric_score(desirs, weights, eps)
    if wmt is not None:
        multipliers = getattr(wmt, "multipliers", wmt)
        w_adj = wmt_adjusted_weights(weights, multipliers)
        table["wmt_score"] = _geometric_score(desirs, w_adj, eps)
    table["uncertainty_measure"] = sum(
        weights[r] * widths_norm[r] for r in models)

    if specs is not None:
        probs = _spec_probs_from_members(members_by_resp, specs)
        for col, vals in probs.items():
            table[col] = vals

    table.attrs["factor_columns"] = factor_cols
    return table


def _spec_probs_from_members(members_by_resp: dict[str, np.ndarray], specs: dict):
    out: dict[str, np.ndarray] = {}
    indicators = []
    equal_b = len({members_by_resp[r].shape[0] for r in specs}) <= 1
    for r, limits in specs.items():
        if r not in members_by_resp:
            raise ConfigError(f"spec limits given for {r!r} but no model supplied")
        lower = limits.get("lower") if isinstance(limits, dict) else limits.lower
        upper = limits.get("upper") if isinstance(limits, dict) else limits.upper
        if lower is None and upper is None:
            raise ConfigError(f"spec for {r!r} needs at least one bounded side")
        members = members_by_resp[r]
        inside = np.ones_like(members, dtype=bool)
        if lower is not None:
            inside &= members >= float(lower)
        if upper is not None:
            inside &= members <= float(upper)
        out[f"prob_in_spec_{r}"] = inside.mean(axis=0)
        indicators.append(inside)
    if equal_b:
        joint = indicators[0]
        for ind in indicators[1:]:
            joint = joint & ind
        out["p_joint_mean"] = joint.mean(axis=0)
    else:
        # Ensembles of unequal size cannot be paired member-by-member.
        joint = np.ones_like(indicators[0].mean(axis=0))
        for ind in indicators:
            joint = joint * ind.mean(axis=0)
        out["p_joint_mean"] = joint
        out["p_joint_independent"] = np.ones(len(joint), dtype=bool)
    return out


def estimate_spec_probs(models: dict[str, SvemModel], specs: dict,
                        candidates: Dataset) -> pd.DataFrame:
    """Per-response and joint probabilities that the modeled mean lies inside
    the given limits, estimated from the ensemble members."""
    members = {r: member_predictions(models[r], candidates)
               for r in specs if r in models}
    missing = [r for r in specs if r not in models]
    if missing:
        raise ConfigError(f"spec limits given for {missing} but no model supplied")
    return pd.DataFrame(_spec_probs_from_members(members, specs))


# ---------------------------------------------------------------------------
# Gower distance + PAM medoids
# ---------------------------------------------------------------------------
def gower_distance_matrix(table: pd.DataFrame, columns) -> np.ndarray:
    """Mixed-type dissimilarity: range-normalized numeric differences and 0/1
    categorical mismatches, averaged over the given columns."""
    n = len(table)
    D = np.zeros((n, n))
    for col in columns:
        vals = table[col].to_numpy()
        if np.issubdtype(vals.dtype, np.number):
            v = vals.astype(float)
            rng = v.max() - v.min()
            if rng > 0:
                D += np.abs(v[:, None] - v[None, :]) / rng
        else:
            D += (vals[:, None] != vals[None, :]).astype(float)
    return D / len(columns)


def pam_medoids(D: np.ndarray, k: int, init=None) -> list[int]:
    """Partitioning around medoids: greedy build then swap to convergence.

    Deterministic: ties resolve to the lowest row index.  Returns sorted
    medoid indices.
    """
    n = D.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if init is None:
        medoids = [int(np.argmin(D.sum(axis=0)))]
        while len(medoids) < k:
            d_near = D[:, medoids].min(axis=1)
            gains = np.maximum(d_near[:, None] - D, 0.0).sum(axis=0)
            gains[medoids] = -np.inf
            medoids.append(int(np.argmax(gains)))
    else:
        medoids = [int(i) for i in init]
        if len(set(medoids)) != k:
            raise ConfigError("init must contain k distinct indices")

    while True:
        Dm = D[:, medoids]
        nearest = np.argmin(Dm, axis=1)
        d1 = Dm[np.arange(n), nearest]
        d2 = np.partition(Dm, 1, axis=1)[:, 1] if k > 1 else np.full(n, np.inf)
        best_delta = -1e-12
        best = None
        for a in range(k):
            mine = nearest == a
            t_mine = (np.minimum(D[mine], d2[mine, None]) - d1[mine, None]).sum(axis=0)
            t_rest = np.minimum(D[~mine] - d1[~mine, None], 0.0).sum(axis=0)
            delta = t_mine + t_rest
            delta[medoids] = np.inf
            h = int(np.argmin(delta))
            if delta[h] < best_delta:
                best_delta = float(delta[h])
                best = (a, h)
        if best is None:
            break
        medoids[best[0]] = best[1]
    return sorted(medoids)


# ---------------------------------------------------------------------------
# Selection and export
# ---------------------------------------------------------------------------
@dataclass
class SelectionResult:
    """Best row plus k diverse medoid rows for one ranking objective."""

    label: str
    target: str
    direction: str
    best_row: pd.Series
    medoids: pd.DataFrame
    medoid_indices: list[int] = field(default_factory=list)
    subset_size: int = 0


def select_from_score_table(
    table: pd.DataFrame,
    target: str,
    direction: str = "max",
    k: int = 5,
    top_type: str = "frac",
    top: float = 0.1,
    label: str = "selection",
    factor_columns=None,
) -> SelectionResult:
    """Rank by ``target``, retain the top slice, and cluster it into k medoids
    with Gower distance over the predictor columns; also return the single
    best row under the objective (ties break to the earliest row)."""
    if target not in table.columns:
        raise ConfigError(f"target column {target!r} not in score table")
    vals = table[target].to_numpy()
    if not np.issubdtype(vals.dtype, np.number):
        raise ConfigError(f"target column {target!r} is not numeric")
    if direction not in ("max", "min"):
        raise ConfigError(f"direction must be 'max' or 'min', got {direction!r}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if factor_columns is None:
        factor_columns = table.attrs.get("factor_columns")
    if not factor_columns:
        raise ConfigError("factor_columns not recorded on the table and not supplied")

    n = len(table)
    key = -vals if direction == "max" else vals
    order = np.argsort(key, kind="stable")
    if top_type == "frac":
        if not 0.0 < top <= 1.0:
            raise ConfigError("top fraction must be in (0, 1]")
        top_n = max(1, math.ceil(top * n))
    elif top_type == "n":
        top_n = int(top)
    else:
        raise ConfigError(f"unknown top_type {top_type!r}")
    if top_n > n:
        raise ConfigError(f"top subset ({top_n}) exceeds table size ({n})")
    if top_n < k:
        raise ConfigError(f"k={k} exceeds retained subset size {top_n}")

    subset_pos = order[:top_n]
    subset = table.iloc[subset_pos]
    D = gower_distance_matrix(subset, factor_columns)
    med_local = pam_medoids(D, k)
    med_pos = [int(subset_pos[i]) for i in med_local]
    return SelectionResult(
        label=label, target=target, direction=direction,
        best_row=table.iloc[int(order[0])],
        medoids=table.iloc[med_pos],
        medoid_indices=med_pos,
        subset_size=top_n,
    )


def export_candidates(selections, path, metadata: dict | None = None) -> None:
    """Write selections to one CSV: label, candidate_type (best|medoid), then
    every score-table column; values round-trip to 12 significant digits."""
    selections = list(selections)
    if not selections:
        raise ConfigError("no selections to export")
    columns = list(selections[0].best_row.index)
    rows = []
    for sel in selections:
        rows.append([sel.label, "best"] + [sel.best_row.get(c) for c in columns])
        for _, med in sel.medoids.iterrows():
            rows.append([sel.label, "medoid"] + [med.get(c) for c in columns])
    out = pd.DataFrame(rows, columns=["label", "candidate_type"] + columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if metadata:
            pairs = " ".join(f"{k}={v}" for k, v in metadata.items())
            fh.write(f"# {pairs}\n")
        out.to_csv(fh, index=False, float_format="%.12g")


def read_candidates_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
