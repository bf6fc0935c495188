"""Threshold extraction, anchor auditing, and cross-seed aggregation.

Recovered thresholds live in z-space; extraction inverts them to natural units
through the training statistics (or the cached subexpression moments for gated
compound expressions) and the audit compares pooled medians against an anchor
catalogue with traffic-light agreement bands:

    green  rel_dev <= 0.10
    yellow rel_dev <= 0.20
    red    otherwise

Features with unit "(std)" or without a numeric anchor are reported for
coverage but never banded; an anchor of exactly 0 cannot anchor a relative
deviation and is excluded with a note.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .data import FeatureStats, fit_subexpr_stats, invert_threshold
from .errors import ConfigError
from .expr import (
    Call,
    Feature,
    Node,
    gate_count,
    gate_params,
    is_gate,
    print_expr,
    register_primitives,
)
from .search import ParetoEntry

_SUB_PRIM = register_primitives("base")["sub"]

GREEN_MAX = 0.10
YELLOW_MAX = 0.20

STD_UNIT = "(std)"

# The gate kind whose b_z is a dedicated per-feature cut-point, per operator
# set. The and/or forms share one b_z across two scales and expression gates
# shape a magnitude ramp, so their rows are reported but not anchor-banded.
THRESHOLD_GATE_KIND = {"hard": "lgo_thre", "soft": "lgo"}


@dataclass
class Anchor:
    feature: str
    unit: str
    anchor: float | None
    note: str = ""


@dataclass
class AnchorCatalogue:
    anchors: dict[str, Anchor]

    def __contains__(self, feature: str) -> bool:
        return feature in self.anchors

    def __getitem__(self, feature: str) -> Anchor:
        return self.anchors[feature]

    def bandable(self, feature: str) -> bool:
        a = self.anchors.get(feature)
        return a is not None and a.unit != STD_UNIT and a.anchor is not None


class _StrictLoader(yaml.SafeLoader):
    pass


def _no_duplicates(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in mapping:
            raise ConfigError("duplicate feature %r in anchor catalogue" % (key,))
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _no_duplicates
)


def load_anchors(path) -> AnchorCatalogue:
    """Parse the anchor catalogue YAML.

    Schema per feature: {unit: "...", anchor: <number>, note: "..."}. The unit
    is required; the anchor must be numeric when present and may be omitted or
    null for presence-only entries.
    """
    with open(path) as fh:
        try:
            doc = yaml.load(fh, Loader=_StrictLoader)
        except yaml.YAMLError as exc:
            raise ConfigError("anchor catalogue %r is not valid YAML: %s" % (str(path), exc)) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("anchor catalogue must map feature names to entries")
    anchors = {}
    for feature, entry in doc.items():
        if not isinstance(entry, dict):
            raise ConfigError("anchor entry for %r must be a mapping" % (feature,))
        if "unit" not in entry or not isinstance(entry["unit"], str):
            raise ConfigError("anchor entry for %r is missing a unit" % (feature,))
        anchor_val = entry.get("anchor")
        if anchor_val is not None and not isinstance(anchor_val, (int, float)):
            raise ConfigError("non-numeric anchor for %r: %r" % (feature, anchor_val))
        anchors[str(feature)] = Anchor(
            feature=str(feature),
            unit=entry["unit"],
            anchor=None if anchor_val is None else float(anchor_val),
            note=str(entry.get("note", "")),
        )
    return AnchorCatalogue(anchors)


@dataclass
class CoverageReport:
    anchored: list[str]
    unanchored: list[str]
    missing_from_dataset: list[str]


def coverage_report(catalogue: AnchorCatalogue, feature_names) -> CoverageReport:
    """Partition dataset features into anchored vs unanchored; also lists
    catalogue entries that name no dataset feature."""
    anchored = [f for f in feature_names if catalogue.bandable(f)]
    unanchored = [f for f in feature_names if not catalogue.bandable(f)]
    missing = [f for f in catalogue.anchors if f not in set(feature_names)]
    return CoverageReport(anchored, unanchored, missing)


# --- threshold extraction ---

@dataclass
class ThresholdRow:
    model_id: str
    seed: int
    target: str            # feature name, or serialized subexpression
    is_feature: bool
    gate_type: str
    b_z: float
    b_raw: float
    unit: str
    invertible: bool


def _gated_inputs(node: Call):
    """The quantities a gate node thresholds at its shared b_z.

    Single-input gates threshold their one input; and/or gates threshold each
    input; the pair gate thresholds the difference of its inputs.
    """
    name = node.prim.name
    if name in ("lgo", "lgo_thre", "gate_expr"):
        return [node.args[0]]
    if name in ("lgo_and2", "lgo_or2"):
        return [node.args[0], node.args[1]]
    if name == "lgo_and3":
        return [node.args[0], node.args[1], node.args[2]]
    if name == "lgo_pair":
        return [Call(_SUB_PRIM, (node.args[0], node.args[1]))]
    raise ValueError("unknown gate %r" % (name,))


def extract_thresholds(pool: list[ParetoEntry], stats: FeatureStats,
                       z_train_X=None, units: dict[str, str] | None = None) -> list[ThresholdRow]:
    """One row per (gate occurrence, gated quantity) across a model pool.

    Bare-feature inputs invert through the feature's training statistics;
    compound inputs invert through their own training-fold moments when
    z_train_X is available, otherwise they are flagged non-invertible.
    """
    units = units or {}
    rows = []
    for rank, entry in enumerate(pool, start=1):
        model_id = "s%d_r%d" % (entry.seed, rank)
        for node in _iter_gates(entry.expr):
            params = gate_params(node)
            for target in _gated_inputs(node):
                if isinstance(target, Feature):
                    b_raw = invert_threshold(params.b_z, target.name, stats)
                    rows.append(ThresholdRow(
                        model_id=model_id, seed=entry.seed, target=target.name,
                        is_feature=True, gate_type=node.prim.name, b_z=params.b_z,
                        b_raw=b_raw, unit=units.get(target.name, ""), invertible=True,
                    ))
                else:
                    label = print_expr(target)
                    if z_train_X is not None:
                        sub = fit_subexpr_stats(target, z_train_X)
                        b_raw = sub.mu + sub.sigma * params.b_z if sub.invertible else float("nan")
                        inv = sub.invertible
                    else:
                        b_raw, inv = float("nan"), False
                    rows.append(ThresholdRow(
                        model_id=model_id, seed=entry.seed, target=label,
                        is_feature=False, gate_type=node.prim.name, b_z=params.b_z,
                        b_raw=b_raw, unit="(expr)", invertible=inv,
                    ))
    return rows


def _iter_gates(expr: Node):
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Call):
            if is_gate(node):
                yield node
            stack.extend(reversed(node.args))


# --- aggregation ---

@dataclass
class ThresholdSummary:
    target: str
    unit: str
    gate_type: str
    gate_cnt: int
    models_with_gate: int
    models_total: int
    median: float
    q1: float
    q3: float

    @property
    def models_with_gate_pct(self) -> float:
        if self.models_total == 0:
            return 0.0
        return 100.0 * self.models_with_gate / self.models_total


def summarize_thresholds(rows: list[ThresholdRow], models_total: int) -> list[ThresholdSummary]:
    """Aggregate rows per (target, unit, gate kind): occurrence counts, model
    coverage, and median/Q1/Q3 of the inverted thresholds (linear
    interpolation).

    Gate kinds stay disaggregated because their b_z are different estimands: a
    single-input threshold gate locates a cut-point on its feature, while the
    and/or forms share one b_z across two scales and expression gates shape a
    magnitude ramp. Consumers pick the kind they mean (the per-feature
    cut-point table reads the threshold-gate rows) instead of a mixed median.
    """
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.target, row.unit, row.gate_type), []).append(row)
    out = []
    for (target, unit, gate_type), members in sorted(groups.items()):
        vals = np.array([m.b_raw for m in members if m.invertible and np.isfinite(m.b_raw)])
        if vals.size:
            median = float(np.median(vals))
            q1 = float(np.percentile(vals, 25))
            q3 = float(np.percentile(vals, 75))
        else:
            median = q1 = q3 = float("nan")
        out.append(ThresholdSummary(
            target=target, unit=unit, gate_type=gate_type, gate_cnt=len(members),
            models_with_gate=len({m.model_id for m in members}),
            models_total=models_total, median=median, q1=q1, q3=q3,
        ))
    return out


@dataclass
class AuditRow:
    feature: str
    unit: str
    median: float
    q1: float
    q3: float
    anchor: float
    rel_dev: float           # |median - anchor| / |anchor|
    band: str                # green | yellow | red


@dataclass
class AuditReport:
    rows: list[AuditRow]
    excluded: list[tuple[str, str]] = field(default_factory=list)  # (feature, reason)

    def band_counts(self) -> dict[str, int]:
        counts = {"green": 0, "yellow": 0, "red": 0}
        for row in self.rows:
            counts[row.band] += 1
        return counts


def band_of(rel_dev: float) -> str:
    if rel_dev <= GREEN_MAX:
        return "green"
    if rel_dev <= YELLOW_MAX:
        return "yellow"
    return "red"


def audit_thresholds(summaries: list[ThresholdSummary], catalogue: AnchorCatalogue) -> AuditReport:
    """Band per-feature threshold medians against the anchor catalogue.

    Subexpression targets, (std) entries, missing anchors, and zero anchors
    are excluded (with reasons) rather than force-banded.
    """
    rows = []
    excluded = []
    for summary in summaries:
        feature = summary.target
        if feature not in catalogue:
            excluded.append((feature, "no_anchor_entry"))
            continue
        anchor = catalogue[feature]
        if anchor.unit == STD_UNIT:
            excluded.append((feature, "std_feature"))
            continue
        if anchor.anchor is None:
            excluded.append((feature, "no_numeric_anchor"))
            continue
        if anchor.anchor == 0.0:
            excluded.append((feature, "zero_anchor"))
            continue
        if not np.isfinite(summary.median):
            excluded.append((feature, "no_invertible_thresholds"))
            continue
        rel = abs(summary.median - anchor.anchor) / abs(anchor.anchor)
        rows.append(AuditRow(
            feature=feature, unit=anchor.unit, median=summary.median,
            q1=summary.q1, q3=summary.q3, anchor=anchor.anchor,
            rel_dev=rel, band=band_of(rel),
        ))
    return AuditReport(rows=rows, excluded=excluded)


@dataclass
class GateUsageRow:
    top_k: int
    usage_pct: float        # % of top-k models with >= 1 gate
    median_gates: float     # median gate count, zeros included
    complexity_median: float
    cv_loss_median: float


def gate_usage(pool: list[ParetoEntry], k: int = 100,
               presorted: bool = False) -> GateUsageRow:
    """Usage statistics over the top-k pool entries. By default entries are
    ranked by the search objective; pass presorted=True when the caller has
    already ranked the pool (e.g. by post-refinement test loss)."""
    ranked = list(pool) if presorted else sorted(
        pool, key=lambda e: (e.cv_loss, e.complexity, e.expr_str))
    ranked = ranked[:k]
    if not ranked:
        return GateUsageRow(0, 0.0, 0.0, float("nan"), float("nan"))
    counts = np.array([gate_count(e.expr) for e in ranked], dtype=float)
    return GateUsageRow(
        top_k=len(ranked),
        usage_pct=100.0 * float(np.mean(counts >= 1)),
        median_gates=float(np.median(counts)),
        complexity_median=float(np.median([e.complexity for e in ranked])),
        cv_loss_median=float(np.median([e.cv_loss for e in ranked])),
    )


def aggregate_seeds(values: list[float]) -> tuple[float, float, int]:
    """Mean and sample standard deviation (ddof=1) across seeds; a single
    seed reports std 0."""
    arr = np.asarray(values, dtype=float)
    n = arr.size
    if n == 0:
        return float("nan"), float("nan"), 0
    mean = float(arr.mean())
    std = 0.0 if n == 1 else float(arr.std(ddof=1))
    return mean, std, n
