"""Deterministic high-order model expansion shared across responses.

A fixed column recipe (interactions, polynomial powers, categorical contrasts,
additive blocking terms) is derived once from training data and then applied
to any conforming rows, guaranteeing identical design matrices and stable
column order across responses and sessions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# A term is a tuple of components, each ("num", factor, power) or
# ("cat", factor, level); the empty tuple is the intercept.  The column value
# is the product of x**power factors and level indicators.
Term = tuple


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------
@dataclass
class Dataset:
    """Named columns of numeric or categorical values, one row per run."""

    names: list[str]
    kinds: dict[str, str]
    values: dict[str, np.ndarray]
    levels: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(self.values[n]) for n in self.names}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        for name in self.names:
            if self.kinds[name] == CATEGORICAL and name not in self.levels:
                vals = self.values[name]
                self.levels[name] = sorted({str(v) for v in vals})

    @property
    def n_rows(self) -> int:
        return 0 if not self.names else len(self.values[self.names[0]])

    def column(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise DataError(f"unknown column {name!r}")
        return self.values[name]

    def with_column(self, name: str, values: np.ndarray) -> "Dataset":
        """Copy of the dataset with one column replaced (same kind)."""
        if name not in self.values:
            raise DataError(f"unknown column {name!r}")
        vals = dict(self.values)
        vals[name] = np.asarray(values)
        return Dataset(list(self.names), dict(self.kinds), vals, dict(self.levels))

    @classmethod
    def from_columns(cls, columns: dict) -> "Dataset":
        """Build from a name -> values mapping; kind inferred from dtype."""
        names, kinds, values = [], {}, {}
        for name, vals in columns.items():
            arr = np.asarray(vals)
            names.append(name)
            if arr.dtype.kind in "fiub":
                kinds[name] = NUMERIC
                values[name] = arr.astype(float)
            else:
                kinds[name] = CATEGORICAL
                values[name] = arr.astype(str)
        return cls(names, kinds, values)

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "Dataset":
        return cls.from_columns({str(c): df[c].to_numpy() for c in df.columns})

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read a UTF-8 CSV with a header row; a column is numeric unless any
        token fails to parse as a number."""
        df = pd.read_csv(path, comment="#")
        for col in df.columns:
            if df[col].dtype == object:
                df[col] = df[col].astype(str).str.strip()
        return cls.from_dataframe(df)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({n: self.values[n] for n in self.names})

    def check_complete(self, columns=None) -> None:
        """Raise DataError if any requested column contains missing values."""
        for name in columns if columns is not None else self.names:
            col = self.column(name)
            if self.kinds[name] == NUMERIC:
                if not np.all(np.isfinite(col)):
                    raise DataError(f"column {name!r} contains missing or non-finite values")
            else:
                bad = (col == "nan") | (col == "") | (col == "None")
                if bad.any():
                    raise DataError(f"column {name!r} contains missing values")


# ---------------------------------------------------------------------------
# ExpansionSpec
# ---------------------------------------------------------------------------
@dataclass
class ExpansionSpec:
    """Frozen recipe mapping main-effect factors to an ordered term list."""

    main_effects: list[str]
    blocking: list[str]
    factorial_order: int
    polynomial_order: int
    include_pc_2way: bool
    kinds: dict[str, str]
    categorical_levels: dict[str, list[str]]  # first entry is the reference
    numeric_ranges: dict[str, tuple[float, float]]
    categorical_modes: dict[str, str]  # most frequent training level, per factor
    term_list: list[Term] = field(default_factory=list)

    def __post_init__(self):
        if not self.term_list:
            self.term_list = derive_term_list(self)

    @property
    def factors(self) -> list[str]:
        return list(self.main_effects) + list(self.blocking)

    def reference_level(self, factor: str) -> str:
        return self.categorical_levels[factor][0]

    def column_names(self) -> list[str]:
        return [term_name(t) for t in self.term_list]


@dataclass
class DesignMatrix:
    """Numeric model matrix with the spec's column order; column 0 is the intercept."""

    column_names: list[str]
    values: np.ndarray

    @property
    def p_full(self) -> int:
        return self.values.shape[1]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def term_name(term: Term) -> str:
    if not term:
        return "Intercept"
    parts = []
    for comp in term:
        if comp[0] == "num":
            _, factor, power = comp
            parts.append(factor if power == 1 else f"{factor}^{power}")
        else:
            _, factor, level = comp
            parts.append(f"{factor}[{level}]")
    return ":".join(parts)


def _term_signature(term: Term) -> tuple:
    """Canonical form used to deduplicate overlapping construction paths."""
    merged: dict = {}
    for comp in term:
        if comp[0] == "num":
            _, factor, power = comp
            key = ("num", factor)
            merged[key] = merged.get(key, 0) + power
        else:
            merged[comp] = 1
    out = []
    for key, val in merged.items():
        out.append(("num", key[1], val) if key[0] == "num" else key)
    return tuple(sorted(out))


def _main_terms(spec: ExpansionSpec, factor: str) -> list[Term]:
    if spec.kinds[factor] == NUMERIC:
        return [(("num", factor, 1),)]
    levels = spec.categorical_levels[factor]
    return [(("cat", factor, lvl),) for lvl in levels[1:]]


def derive_term_list(spec: ExpansionSpec) -> list[Term]:
    """Rebuild the ordered term list from the spec's scalar fields.

    Order: intercept, numeric mains, categorical mains, blocking mains,
    interactions by ascending order (pairs, triples, ...), pure polynomial
    powers, partial-cubic products.  Duplicates arising from overlapping
    construction paths are removed by canonical signature, first wins.
    """
    mains = {f: _main_terms(spec, f) for f in spec.factors}
    terms: list[Term] = [()]
    for f in spec.main_effects:
        if spec.kinds[f] == NUMERIC:
            terms.extend(mains[f])
    for f in spec.main_effects:
        if spec.kinds[f] == CATEGORICAL:
            terms.extend(mains[f])
    for f in spec.blocking:
        terms.extend(mains[f])

    # Interactions of distinct main-effect factors; blocking never interacts.
    for order in range(2, spec.factorial_order + 1):
        for combo in itertools.combinations(spec.main_effects, order):
            for parts in itertools.product(*(mains[f] for f in combo)):
                terms.append(tuple(c for part in parts for c in part))

    for power in range(2, spec.polynomial_order + 1):
        for f in spec.main_effects:
            if spec.kinds[f] == NUMERIC:
                terms.append((("num", f, power),))

    if spec.include_pc_2way:
        for f in spec.main_effects:
            if spec.kinds[f] != NUMERIC:
                continue
            for other in spec.main_effects:
                if other == f:
                    continue
                for part in mains[other]:
                    terms.append((("num", f, 2),) + part)

    seen = set()
    out = []
    for t in terms:
        sig = _term_signature(t)
        if sig not in seen:
            seen.add(sig)
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------
def build_expansion_spec(
    data: Dataset,
    main_effects,
    blocking=(),
    factorial_order: int = 1,
    polynomial_order: int = 1,
    include_pc_2way: bool = False,
) -> ExpansionSpec:
    """Derive a frozen expansion recipe from training data.

    Categorical factors are recorded with their sorted level lists (first
    level is the reference for dummy contrasts); numeric factors record the
    observed (min, max) range.  Blocking factors enter additively only.
    """
    main_effects = list(main_effects)
    blocking = list(blocking)
    if factorial_order < 1 or polynomial_order < 1:
        raise ConfigError("factorial_order and polynomial_order must be >= 1")
    if len(set(main_effects)) != len(main_effects):
        raise ConfigError("duplicate names in main_effects")
    overlap = set(main_effects) & set(blocking)
    if overlap:
        raise ConfigError(f"blocking factors overlap main effects: {sorted(overlap)}")

    factors = main_effects + blocking
    for f in factors:
        if f not in data.names:
            raise DataError(f"unknown factor {f!r}")
    data.check_complete(factors)

    kinds, cat_levels, num_ranges, cat_modes = {}, {}, {}, {}
    for f in factors:
        kinds[f] = data.kinds[f]
        if kinds[f] == CATEGORICAL:
            col = data.column(f)
            levels = sorted({str(v) for v in col})
            if len(levels) < 2:
                raise DataError(f"categorical factor {f!r} has < 2 levels")
            cat_levels[f] = levels
            counts = {lvl: int(np.sum(col == lvl)) for lvl in levels}
            cat_modes[f] = max(levels, key=lambda l: (counts[l], ))  # ties: first sorted
        else:
            col = data.column(f)
            lo, hi = float(col.min()), float(col.max())
            if hi - lo <= 0.0:
                raise DataError(f"numeric factor {f!r} is constant (zero range)")
            num_ranges[f] = (lo, hi)

    return ExpansionSpec(
        main_effects=main_effects,
        blocking=blocking,
        factorial_order=int(factorial_order),
        polynomial_order=int(polynomial_order),
        include_pc_2way=bool(include_pc_2way),
        kinds=kinds,
        categorical_levels=cat_levels,
        numeric_ranges=num_ranges,
        categorical_modes=cat_modes,
    )


def term_count(spec: ExpansionSpec) -> int:
    """Number of model-matrix columns (p_full), intercept included."""
    return len(spec.term_list)


def expand_rows(spec: ExpansionSpec, data: Dataset) -> DesignMatrix:
    """Apply the recipe to conforming rows; bit-identical for identical input."""
    n = data.n_rows
    for f in spec.factors:
        if f not in data.names:
            raise DataError(f"data is missing factor {f!r}")
    data.check_complete(spec.factors)

    numeric_cols = {}
    indicator_cols: dict[tuple[str, str], np.ndarray] = {}
    for f in spec.factors:
        if spec.kinds[f] == NUMERIC:
            col = data.column(f)
            if data.kinds[f] != NUMERIC:
                raise DataError(f"factor {f!r} must be numeric")
            numeric_cols[f] = col.astype(float)
        else:
            col = data.column(f).astype(str)
            known = set(spec.categorical_levels[f])
            unseen = sorted(set(col) - known)
            if unseen:
                raise DataError(f"factor {f!r} has unseen levels {unseen}")
            for lvl in spec.categorical_levels[f]:
                indicator_cols[(f, lvl)] = (col == lvl).astype(float)

    out = np.empty((n, len(spec.term_list)))
    for j, term in enumerate(spec.term_list):
        if not term:
            out[:, j] = 1.0
            continue
        col = np.ones(n)
        for comp in term:
            if comp[0] == "num":
                _, f, power = comp
                col = col * (numeric_cols[f] ** power if power != 1 else numeric_cols[f])
            else:
                _, f, lvl = comp
                col = col * indicator_cols[(f, lvl)]
        out[:, j] = col
    return DesignMatrix(spec.column_names(), out)


# ---------------------------------------------------------------------------
# Serialization (versioned JSON)
# ---------------------------------------------------------------------------
SPEC_FORMAT = "svemkit-expansion/1"


def spec_to_dict(spec: ExpansionSpec) -> dict:
    return {
        "format": SPEC_FORMAT,
        "main_effects": spec.main_effects,
        "blocking": spec.blocking,
        "factorial_order": spec.factorial_order,
        "polynomial_order": spec.polynomial_order,
        "include_pc_2way": spec.include_pc_2way,
        "kinds": spec.kinds,
        "categorical_levels": spec.categorical_levels,
        "numeric_ranges": {k: list(v) for k, v in spec.numeric_ranges.items()},
        "categorical_modes": spec.categorical_modes,
        "term_list": [[list(c) for c in t] for t in spec.term_list],
    }


def spec_from_dict(doc: dict) -> ExpansionSpec:
    if doc.get("format") != SPEC_FORMAT:
        raise ConfigError(f"unsupported expansion document format {doc.get('format')!r}")
    term_list = [tuple(tuple(c) if c[0] == "cat" else ("num", c[1], int(c[2])) for c in t)
                 for t in doc["term_list"]]
    spec = ExpansionSpec(
        main_effects=list(doc["main_effects"]),
        blocking=list(doc["blocking"]),
        factorial_order=int(doc["factorial_order"]),
        polynomial_order=int(doc["polynomial_order"]),
        include_pc_2way=bool(doc["include_pc_2way"]),
        kinds=dict(doc["kinds"]),
        categorical_levels={k: list(v) for k, v in doc["categorical_levels"].items()},
        numeric_ranges={k: (float(v[0]), float(v[1])) for k, v in doc["numeric_ranges"].items()},
        categorical_modes=dict(doc["categorical_modes"]),
        term_list=term_list,
    )
    return spec


def save_spec(spec: ExpansionSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=1)


def load_spec(path) -> ExpansionSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))
