"""Symbolic regression with logistic-gated threshold operators.

Gated operators carry a learnable steepness and threshold per gate node, so a
model can express "x matters once it crosses b" while staying differentiable
enough for local refinement. The package couples a typed tree search with
threshold refinement, equivalence-checked simplification, and an audit path
that maps fitted thresholds back to natural units.
"""

from .audit import (
    AnchorCatalogue,
    AuditReport,
    aggregate_seeds,
    audit_thresholds,
    coverage_report,
    extract_thresholds,
    gate_usage,
    load_anchors,
    summarize_thresholds,
)
from .data import (
    CANONICAL_SEEDS,
    Dataset,
    FeatureStats,
    fit_subexpr_stats,
    invert_threshold,
    load_csv,
    split,
    standardize,
)
from .errors import ConfigError, DataError, LgosrError, ParseError
from .expr import (
    OPERATOR_SETS,
    Call,
    Const,
    Feature,
    Node,
    PosConst,
    ThrConst,
    TypeTag,
    complexity,
    depth,
    evaluate,
    gate_count,
    parse_expr,
    print_expr,
    random_tree,
    register_primitives,
)
from .gates import (
    gate_expr,
    lgo_and2,
    lgo_and3,
    lgo_hard,
    lgo_or2,
    lgo_pair,
    lgo_soft,
    sigmoid,
    softplus,
)
from .metrics import binary_metrics, regression_metrics, self_check
from .refine import RefineConfig, coordinate_descent_gates, refine, refit_constants
from .search import SearchConfig, CVConfig, evolve, top_k
from .simplify import (
    display_format,
    merge_near_duplicate_gates,
    rewrite_fixpoint,
    simplify,
)
from .synth import gen_synth, write_synth

__version__ = "0.1.0"

__all__ = [
    "AnchorCatalogue", "AuditReport", "CANONICAL_SEEDS", "CVConfig", "Call",
    "ConfigError", "Const", "DataError", "Dataset", "Feature", "FeatureStats",
    "LgosrError", "Node", "OPERATOR_SETS", "ParseError", "PosConst",
    "RefineConfig", "SearchConfig", "ThrConst", "TypeTag", "aggregate_seeds",
    "audit_thresholds", "binary_metrics", "complexity", "coordinate_descent_gates",
    "coverage_report", "depth", "display_format", "evaluate", "evolve",
    "extract_thresholds", "fit_subexpr_stats", "gate_count", "gate_expr",
    "gate_usage", "gen_synth", "invert_threshold", "lgo_and2", "lgo_and3",
    "lgo_hard", "lgo_or2", "lgo_pair", "lgo_soft", "load_anchors", "load_csv",
    "merge_near_duplicate_gates", "parse_expr", "print_expr", "random_tree",
    "refine", "refit_constants", "register_primitives", "regression_metrics",
    "rewrite_fixpoint", "self_check", "sigmoid", "simplify", "softplus",
    "split", "standardize", "summarize_thresholds", "top_k", "write_synth",
]
