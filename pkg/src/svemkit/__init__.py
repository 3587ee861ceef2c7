"""Self-validated elastic-net ensembles for small-sample DOE workflows.

Fractional-random-weight resampling over a native (relaxed) elastic-net
solver, validation-weighted information-criterion selection, a permutation
whole-model test heuristic, and a mixture-constrained multi-response
desirability optimizer with medoid shortlists, plus a simulation harness
benchmarking the ensemble against repeated cross-validated baselines.
"""

__version__ = "0.1.0"

from ._kernel import active_backend, available_backends, set_backend
from .enet import (PathFit, PathPoint, fit_path, kkt_max_violation,
                   predict_path_point, relaxed_refit, repeated_kfold_cv)
from .errors import ConfigError, DataError, NumericError, SvemkitError
from .expand import (Dataset, DesignMatrix, ExpansionSpec,
                     build_expansion_spec, expand_rows, load_spec, save_spec,
                     term_count)
from .optimize import (Goal, MixtureGroup, SelectionResult, desirability,
                       estimate_spec_probs, export_candidates, pam_medoids,
                       sample_candidates, score_candidates,
                       select_from_score_table)
from .svem import (CriterionConfig, EffectiveSize, FrwPair, SvemModel,
                   criterion_binomial, criterion_gaussian, draw_frw, fit_svem,
                   kish_neff, load_model, predict_svem, save_model)
from .wmt import WmtResult, load_wmt, save_wmt, wmt_multi, wmt_single

__all__ = [
    "__version__",
    "active_backend", "available_backends", "set_backend",
    "PathFit", "PathPoint", "fit_path", "kkt_max_violation",
    "predict_path_point", "relaxed_refit", "repeated_kfold_cv",
    "ConfigError", "DataError", "NumericError", "SvemkitError",
    "Dataset", "DesignMatrix", "ExpansionSpec", "build_expansion_spec",
    "expand_rows", "load_spec", "save_spec", "term_count",
    "Goal", "MixtureGroup", "SelectionResult", "desirability",
    "estimate_spec_probs", "export_candidates", "pam_medoids",
    "sample_candidates", "score_candidates", "select_from_score_table",
    "CriterionConfig", "EffectiveSize", "FrwPair", "SvemModel",
    "criterion_binomial", "criterion_gaussian", "draw_frw", "fit_svem",
    "kish_neff", "load_model", "predict_svem", "save_model",
    "WmtResult", "load_wmt", "save_wmt", "wmt_multi", "wmt_single",
]
