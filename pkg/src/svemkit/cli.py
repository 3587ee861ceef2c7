"""Command-line front end: expand / fit / predict / wmt / score / select /
export / simulate / gen-lnp, with JSON configs and CSV tables in and out.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every output file embeds the seed, package version, and a config hash (CSV
header comment row; ``_meta`` object in JSON documents).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, enet, optimize, simulate, svem, wmt
from .errors import ConfigError, DataError, NumericError, SvemkitError
from .expand import (Dataset, build_expansion_spec, expand_rows, load_spec,
                     save_spec, spec_to_dict)


def _config_hash(args: argparse.Namespace) -> str:
    payload = json.dumps({k: repr(v) for k, v in sorted(vars(args).items())
                          if k != "func"}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _meta(args, seed) -> dict:
    return {"svemkit": __version__, "seed": seed, "config": _config_hash(args)}


def _meta_line(args, seed) -> str:
    m = _meta(args, seed)
    return f"# svemkit={m['svemkit']} seed={m['seed']} config={m['config']}\n"


def _write_frame(frame: pd.DataFrame, path, args, seed, extra_comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_meta_line(args, seed))
        for line in extra_comments:
            fh.write(f"# {line}\n")
        frame.to_csv(fh, index=False, float_format="%.12g")


def _load_json(path, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed {what} file {path}: {exc}")


def _load_data(path) -> Dataset:
    try:
        return Dataset.from_csv(path)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")


def _split_names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_mixture(path) -> list[optimize.MixtureGroup]:
    if path is None:
        return []
    doc = _load_json(path, "mixture config")
    if isinstance(doc, dict):
        doc = [doc]
    return [optimize.MixtureGroup.from_dict(g) for g in doc]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_expand(args) -> int:
    data = _load_data(args.data)
    spec = build_expansion_spec(
        data, _split_names(args.main_effects),
        blocking=_split_names(args.blocking) if args.blocking else (),
        factorial_order=args.factorial_order,
        polynomial_order=args.polynomial_order,
        include_pc_2way=args.include_pc_2way)
    doc = spec_to_dict(spec)
    doc["_meta"] = _meta(args, 0)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    print(f"expansion: {len(spec.term_list)} terms -> {args.out}")
    if args.matrix_out:
        dm = expand_rows(spec, data)
        frame = pd.DataFrame(dm.values, columns=dm.column_names)
        _write_frame(frame, args.matrix_out, args, 0)
    return 0


def cmd_fit(args) -> int:
    data = _load_data(args.data)
    spec = load_spec(args.spec)
    relax = None if args.relax == "auto" else args.relax == "true"
    objective = None if args.objective == "auto" else args.objective
    model = svem.fit_svem(
        spec, data, args.response, family=args.family, B=args.b,
        alpha_grid=tuple(float(a) for a in _split_names(args.alpha_grid)),
        relax=relax, objective=objective, debias=args.debias,
        rng_seed=args.seed, nlambda=args.nlambda)
    svem.save_model(model, args.out, meta=_meta(args, args.seed))
    ks = [s.k_lambda for s in model.selections]
    gammas = [s.gamma for s in model.selections]
    print(f"fit {args.response}: family={model.family} objective={model.objective} "
          f"relax={model.relax} B={model.B}")
    print(f"  mean k_lambda={np.mean(ks):.2f} median={np.median(ks):.1f} "
          f"mean gamma={np.mean(gammas):.2f} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = svem.load_model(args.model)
    data = _load_data(args.data)
    if args.interval is not None:
        mean, lo, hi = svem.predict_svem(model, data, interval_level=args.interval)
        frame = pd.DataFrame({"pred": mean, "lower": lo, "upper": hi})
    else:
        frame = pd.DataFrame({"pred": svem.predict_svem(model, data)})
    _write_frame(frame, args.out, args, model.rng_seed)
    print(f"predictions for {len(frame)} rows -> {args.out}")
    return 0


def cmd_wmt(args) -> int:
    data = _load_data(args.data)
    spec = load_spec(args.spec)
    responses = _split_names(args.responses)
    config = _load_json(args.svem_config, "svem config") if args.svem_config else {}
    result = wmt.wmt_multi(
        {r: spec for r in responses}, data,
        mixture_groups=_parse_mixture(args.mixture),
        svem_config=config, n_perm=args.n_perm,
        n_eval_points=args.n_eval_points, rng_seed=args.seed)
    doc = result.to_dict()
    doc["_meta"] = _meta(args, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    for r in responses:
        print(f"wmt {r}: p={result.p_values[r]:.4g} "
              f"multiplier={result.multipliers[r]:.3f}")
    if args.distances_out:
        _write_frame(wmt.distances_frame(result), args.distances_out, args, args.seed)
    return 0


def cmd_score(args) -> int:
    models = {}
    for entry in args.model:
        if "=" not in entry:
            raise ConfigError(f"--model expects NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        models[name] = svem.load_model(path)
    goals_doc = _load_json(args.goals, "goals config")
    goals = {r: optimize.Goal(d["goal"], d.get("weight", 1.0), d.get("target"))
             for r, d in goals_doc.items()}
    specs = _load_json(args.specs, "specs config") if args.specs else None
    wmt_result = wmt.load_wmt(args.wmt) if args.wmt else None

    first = next(iter(models.values()))
    if args.candidates:
        candidates = _load_data(args.candidates)
    else:
        candidates = optimize.sample_candidates(
            first.spec, _parse_mixture(args.mixture), args.n_candidates,
            rng_seed=args.seed)
    table = optimize.score_candidates(
        models, goals, candidates, wmt=wmt_result, specs=specs,
        interval_level=args.interval)
    factor_cols = table.attrs["factor_columns"]
    _write_frame(table, args.out, args, args.seed,
                 extra_comments=[f"factor_columns={','.join(factor_cols)}"])
    print(f"scored {len(table)} candidates -> {args.out}")
    return 0


def _read_score_table(path):
    factor_cols = None
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                if line.startswith("# factor_columns="):
                    factor_cols = _split_names(line.split("=", 1)[1])
    except FileNotFoundError:
        raise DataError(f"score table not found: {path}")
    table = pd.read_csv(path, comment="#")
    return table, factor_cols


def cmd_select(args) -> int:
    table, factor_cols = _read_score_table(args.score_table)
    if args.factors:
        factor_cols = _split_names(args.factors)
    sel = optimize.select_from_score_table(
        table, target=args.target, direction=args.direction, k=args.k,
        top_type=args.top_type, top=args.top, label=args.label,
        factor_columns=factor_cols)
    doc = {
        "format": "svemkit-selection/1",
        "label": sel.label, "target": sel.target, "direction": sel.direction,
        "columns": list(sel.best_row.index),
        "factor_columns": factor_cols,
        "subset_size": sel.subset_size,
        "best_row": {k: _jsonable(v) for k, v in sel.best_row.items()},
        "medoids": [{k: _jsonable(v) for k, v in row.items()}
                    for _, row in sel.medoids.iterrows()],
        "_meta": _meta(args, 0),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    print(f"selection {sel.label}: best {args.target}="
          f"{sel.best_row[args.target]:.6g}, {len(sel.medoids)} medoids -> {args.out}")
    return 0


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def cmd_export(args) -> int:
    selections = []
    for path in args.selection:
        doc = _load_json(path, "selection")
        if doc.get("format") != "svemkit-selection/1":
            raise ConfigError(f"unsupported selection format in {path}")
        columns = doc["columns"]
        best = pd.Series({c: doc["best_row"].get(c) for c in columns})
        medoids = pd.DataFrame(doc["medoids"], columns=columns)
        selections.append(optimize.SelectionResult(
            label=doc["label"], target=doc["target"], direction=doc["direction"],
            best_row=best, medoids=medoids))
    optimize.export_candidates(selections, args.out,
                               metadata=_meta(args, 0))
    n_rows = sum(1 + len(s.medoids) for s in selections)
    print(f"exported {n_rows} candidate rows -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    doc = _load_json(args.config, "simulation config")
    seed = int(doc.get("seed", 0))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records = []
    failures = 0
    for i, cell_doc in enumerate(doc.get("cells", [])):
        cell = simulate.SimCell(
            n_total=int(cell_doc["n_total"]),
            target_r2=float(cell_doc["target_R2"]),
            fit_order=int(cell_doc["fit_order"]),
            setting=simulate.SimSetting.from_dict(cell_doc.get("setting", {})),
            n_reps=int(cell_doc.get("n_reps", 1)),
            seed=int(cell_doc.get("seed", seed)))
        family = cell_doc.get("family", "gaussian")
        records = simulate.run_cell(cell, family=family)
        skipped = [r for r in records if r.skipped]
        failures += len(skipped)
        for r in skipped:
            print(f"cell {i} replicate skipped: {r.skipped}", file=sys.stderr)
        all_records.extend(records)
    frame = simulate.records_frame(all_records)
    _write_frame(frame, out_dir / "replicates.csv", args, seed)
    _write_frame(simulate.summarize(frame), out_dir / "summary.csv", args, seed)
    print(f"{len(all_records)} replicates ({failures} skipped) -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Synthetic screening-data generator
# ---------------------------------------------------------------------------
LNP_MIXTURE = {
    "vars": ["PEG", "Helper", "Ionizable", "Cholesterol"],
    "lower": [0.01, 0.10, 0.10, 0.10],
    "upper": [0.05, 0.60, 0.60, 0.60],
    "total": 1.0,
}
LNP_GOALS = {
    "Potency": {"goal": "max", "weight": 0.6},
    "Size": {"goal": "min", "weight": 0.3},
    "PDI": {"goal": "min", "weight": 0.1},
}
LNP_SPECS = {
    "Potency": {"lower": 78},
    "Size": {"upper": 100},
    "PDI": {"upper": 0.25},
}


def _lnp_surfaces(frame: pd.DataFrame, rng: np.random.Generator):
    """Planted response surfaces: two structured responses, one pure-noise."""
    ion = frame["Ionizable"].to_numpy()
    helper = frame["Helper"].to_numpy()
    chol = frame["Cholesterol"].to_numpy()
    peg = frame["PEG"].to_numpy()
    npr = frame["N_P_ratio"].to_numpy()
    flow = frame["flow_rate"].to_numpy()
    lipid = frame["Ionizable_Lipid_Type"].to_numpy()
    oper = frame["Operator"].to_numpy()
    lipid_eff = np.select([lipid == "H101", lipid == "H102"], [3.0, 1.5], 0.0)
    oper_eff = np.where(oper == "B", 1.2, 0.0)
    n = len(frame)
    potency = (70.0 + 40.0 * ion + 25.0 * helper - 300.0 * (ion - 0.30) ** 2
               + 1.5 * (npr - 6.0) - 2.0 * (flow - 2.0) ** 2
               + lipid_eff + oper_eff + rng.normal(0.0, 1.5, n))
    size = (120.0 - 60.0 * helper - 25.0 * chol + 8.0 * (flow - 2.0) ** 2
            + 4000.0 * (peg - 0.05) ** 2
            + np.select([lipid == "H102", lipid == "H103"], [-4.0, 2.0], 0.0)
            + np.where(oper == "B", 2.0, 0.0) + rng.normal(0.0, 2.5, n))
    pdi = 0.20 + rng.normal(0.0, 0.025, n)
    return potency, size, pdi


def cmd_gen_lnp(args) -> int:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    n = args.n_runs
    group = optimize.MixtureGroup.from_dict(LNP_MIXTURE)
    mix = optimize._sample_mixture_group(group, n, rng)
    lipid_levels = ["H101", "H102", "H103"]
    base, extra = divmod(n, 3)
    lipid = [lipid_levels[i] for i in range(3) for _ in range(base + (1 if i < extra else 0))]
    oper = ["A" if i < (n + 1) // 2 else "B" for i in range(n)]
    frame = pd.DataFrame({
        "PEG": mix[:, 0], "Helper": mix[:, 1], "Ionizable": mix[:, 2],
        "Cholesterol": mix[:, 3],
        "Ionizable_Lipid_Type": np.asarray(lipid, dtype=object)[rng.permutation(n)],
        "N_P_ratio": rng.uniform(6.0, 12.0, n),
        "flow_rate": rng.uniform(1.0, 3.0, n),
        "Operator": np.asarray(oper, dtype=object)[rng.permutation(n)],
    })
    potency, size, pdi = _lnp_surfaces(frame, rng)
    frame["Potency"] = potency
    frame["Size"] = size
    frame["PDI"] = pdi
    _write_frame(frame, args.out, args, args.seed)
    print(f"generated {n} screening runs -> {args.out}")
    if args.configs_out:
        cfg_dir = Path(args.configs_out)
        cfg_dir.mkdir(parents=True, exist_ok=True)
        for name, doc in (("mixture.json", [LNP_MIXTURE]),
                          ("goals.json", LNP_GOALS),
                          ("specs.json", LNP_SPECS)):
            with open(cfg_dir / name, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=1)
        print(f"configs -> {cfg_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svemkit",
        description="Self-validated elastic-net ensembles for small-sample DOE")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", help="build a deterministic expansion recipe")
    p.add_argument("--data", required=True)
    p.add_argument("--main-effects", required=True)
    p.add_argument("--blocking", default="")
    p.add_argument("--factorial-order", type=int, default=2)
    p.add_argument("--polynomial-order", type=int, default=2)
    p.add_argument("--include-pc-2way", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--matrix-out")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("fit", help="fit a self-validated ensemble model")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--family", choices=["gaussian", "binomial"], default="gaussian")
    p.add_argument("--b", type=int, default=svem.DEFAULT_B)
    p.add_argument("--alpha-grid", default="0.5,1")
    p.add_argument("--relax", choices=["auto", "true", "false"], default="auto")
    p.add_argument("--objective", choices=["auto", "wSSE", "wAIC", "wBIC"],
                   default="auto")
    p.add_argument("--debias", action="store_true")
    p.add_argument("--nlambda", type=int, default=enet.DEFAULT_NLAMBDA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score new rows with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--interval", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("wmt", help="permutation whole-model test per response")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--mixture")
    p.add_argument("--svem-config", help="JSON file of fit overrides (B, relax, ...)")
    p.add_argument("--n-perm", type=int, default=wmt.DEFAULT_N_PERM)
    p.add_argument("--n-eval-points", type=int, default=wmt.DEFAULT_N_EVAL_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--distances-out")
    p.set_defaults(func=cmd_wmt)

    p = sub.add_parser("score", help="sample and score feasible candidates")
    p.add_argument("--model", action="append", required=True,
                   help="NAME=PATH, repeatable")
    p.add_argument("--goals", required=True)
    p.add_argument("--mixture")
    p.add_argument("--specs")
    p.add_argument("--wmt")
    p.add_argument("--candidates", help="score an existing CSV instead of sampling")
    p.add_argument("--n-candidates", type=int, default=optimize.DEFAULT_N_CANDIDATES)
    p.add_argument("--interval", type=float, default=optimize.DEFAULT_INTERVAL_LEVEL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="best row + diverse medoids from a score table")
    p.add_argument("--score-table", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--direction", choices=["max", "min"], default="max")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--top-type", choices=["frac", "n"], default="frac")
    p.add_argument("--top", type=float, default=0.1)
    p.add_argument("--label", default="selection")
    p.add_argument("--factors", help="comma-separated predictor columns override")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("export", help="merge selections into one candidates CSV")
    p.add_argument("--selection", action="append", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("simulate", help="run benchmark cells from a JSON grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-lnp", help="synthetic mixture-process screening data")
    p.add_argument("--n-runs", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--configs-out", help="also write goals/mixture/specs JSON here")
    p.set_defaults(func=cmd_gen_lnp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except SvemkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
