"""Permutation-based whole-model test heuristic.

Compares the pattern of ensemble predictions on a space-filling evaluation
set against a reference distribution from refitting the same specification to
permuted responses; yields an approximate p-value per response for the global
null of a flat surface, plus score-reweighting multipliers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .expand import Dataset, ExpansionSpec
from .optimize import MULTIPLIER_FLOOR, sample_candidates
from .svem import fit_svem, predict_svem, replicate_rng

DEFAULT_N_PERM = 150
DEFAULT_N_EVAL_POINTS = 500
VAR_RIDGE = 1e-8


@dataclass
class WmtResult:
    """Per-response permutation p-values, multipliers, and raw distances."""

    p_values: dict[str, float]
    multipliers: dict[str, float]
    original_distance: dict[str, float]
    permuted_distances: dict[str, np.ndarray]
    degenerate: dict[str, bool]
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "svemkit-wmt/1",
            "p_values": self.p_values,
            "multipliers": self.multipliers,
            "original_distance": self.original_distance,
            "permuted_distances": {r: [float(v) for v in d]
                                   for r, d in self.permuted_distances.items()},
            "degenerate": self.degenerate,
            "settings": self.settings,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WmtResult":
        if doc.get("format") != "svemkit-wmt/1":
            raise ConfigError(f"unsupported wmt document format {doc.get('format')!r}")
        return cls(
            p_values=dict(doc["p_values"]),
            multipliers=dict(doc["multipliers"]),
            original_distance=dict(doc["original_distance"]),
            permuted_distances={r: np.asarray(d, dtype=float)
                                for r, d in doc["permuted_distances"].items()},
            degenerate=dict(doc["degenerate"]),
            settings=dict(doc.get("settings", {})),
        )


def save_wmt(result: WmtResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=1)


def load_wmt(path) -> WmtResult:
    with open(path, encoding="utf-8") as fh:
        return WmtResult.from_dict(json.load(fh))


def _centered_pattern(pred: np.ndarray) -> np.ndarray:
    # Centering removes intercept offsets; the spread is kept deliberately,
    # since a flat-surface refit collapses toward constant predictions and the
    # spread carries most of the evidence against the flat null.
    return pred - pred.mean()


def _reference_distance(vectors: np.ndarray, mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    diffs = vectors - mu
    return np.sqrt((diffs * diffs / (var + VAR_RIDGE)).sum(axis=-1))


def wmt_single(
    spec: ExpansionSpec,
    data: Dataset,
    response: str,
    mixture_groups=(),
    svem_config: dict | None = None,
    n_perm: int = DEFAULT_N_PERM,
    n_eval_points: int = DEFAULT_N_EVAL_POINTS,
    rng_seed: int = 0,
) -> tuple[float, dict]:
    """Approximate whole-model p-value for one gaussian response.

    Fits the ensemble to the original response and to ``n_perm`` permuted
    copies, forms centered prediction patterns on one shared feasible
    evaluation set, and measures each pattern's diagonal Mahalanobis-like
    distance to the permutation reference.  The p-value uses the add-one
    permutation formula.
    """
    if n_perm < 19:
        raise ConfigError("n_perm must be >= 19")
    config = dict(svem_config or {})
    config.setdefault("family", "gaussian")
    # Non-relaxed refits by default: unpenalized active-set refits can blow up
    # off the training support and make the permutation reference heavy-tailed.
    config.setdefault("relax", False)
    if config["family"] != "gaussian":
        raise ConfigError("whole-model reweighting is defined for gaussian responses")
    if response not in data.names:
        raise DataError(f"response column {response!r} not found")
    y = data.column(response).astype(float)

    if y.std() <= 0:
        return 1.0, {"distances": np.zeros(n_perm), "original": 0.0,
                     "degenerate": True}

    eval_points = sample_candidates(spec, mixture_groups, n_eval_points,
                                    rng_seed=_sub_seed(rng_seed, 0))
    patterns = np.empty((n_perm + 1, n_eval_points))
    for k in range(n_perm + 1):
        sub = _sub_seed(rng_seed, k + 1)
        if k == 0:
            y_fit = y
        else:
            y_fit = replicate_rng(sub, 0).permutation(y)
        model = fit_svem(spec, data.with_column(response, y_fit), response,
                         rng_seed=_sub_seed(sub, 1), **config)
        patterns[k] = _centered_pattern(predict_svem(model, eval_points))

    ref = patterns[1:]
    mu = ref.mean(axis=0)
    var = ref.var(axis=0)
    original = float(_reference_distance(patterns[0], mu, var))
    permuted = _reference_distance(ref, mu, var)
    p_value = (1.0 + int(np.sum(permuted >= original))) / (1.0 + n_perm)
    return p_value, {"distances": permuted, "original": original,
                     "degenerate": False}


def _sub_seed(seed, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def multipliers_from_pvalues(p_values: dict[str, float]) -> dict[str, float]:
    """Monotone reweighting: max(-log10 p, floor), renormalized to mean one."""
    raw = {r: max(-np.log10(p), MULTIPLIER_FLOOR) for r, p in p_values.items()}
    mean = sum(raw.values()) / len(raw)
    return {r: v / mean for r, v in raw.items()}


def wmt_multi(
    specs: dict[str, ExpansionSpec],
    data: Dataset,
    mixture_groups=(),
    svem_config: dict | None = None,
    n_perm: int = DEFAULT_N_PERM,
    n_eval_points: int = DEFAULT_N_EVAL_POINTS,
    rng_seed: int = 0,
) -> WmtResult:
    """Run the permutation test per response and derive mean-one multipliers."""
    if not specs:
        raise ConfigError("wmt_multi needs at least one response")
    p_values: dict[str, float] = {}
    originals: dict[str, float] = {}
    distances: dict[str, np.ndarray] = {}
    degenerate: dict[str, bool] = {}
    for i, (response, spec) in enumerate(specs.items()):
        p, info = wmt_single(spec, data, response, mixture_groups, svem_config,
                             n_perm, n_eval_points,
                             rng_seed=_sub_seed(rng_seed, 1000 + i))
        p_values[response] = p
        originals[response] = info["original"]
        distances[response] = info["distances"]
        degenerate[response] = info["degenerate"]
    return WmtResult(
        p_values=p_values,
        multipliers=multipliers_from_pvalues(p_values),
        original_distance=originals,
        permuted_distances=distances,
        degenerate=degenerate,
        settings={"n_perm": n_perm, "n_eval_points": n_eval_points,
                  "seed": rng_seed, "svem_config": {k: v for k, v in (svem_config or {}).items()}},
    )


def distances_frame(result: WmtResult):
    """Long-format distances for external plotting of the diagnostic."""
    import pandas as pd

    rows = []
    for r, dist in result.permuted_distances.items():
        rows.append({"response": r, "kind": "original",
                     "distance": result.original_distance[r]})
        rows.extend({"response": r, "kind": "permuted", "distance": float(d)}
                    for d in dist)
    return pd.DataFrame(rows, columns=["response", "kind", "distance"])
