"""Rewrite-based simplification with a strict numeric-equivalence gate.

Every stage (constant folding + algebraic rules, then commutative
canonicalization) is checked against the raw expression on held-out data:
max pointwise deviation < 1e-9 and exact equality of the external metrics.
A stage that breaks equivalence is rolled back and the result is flagged, so
the returned form always reproduces the raw model's reported numbers.

Domain-sensitive rules (sqrt(pow(x,2)) -> x, log/exp inverses) apply only when
a small interval analysis proves them sound under the protected-operator
semantics; soundness wins over rewrite coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .data import FeatureStats, fit_subexpr_stats, invert_threshold
from .expr import (
    Call,
    Const,
    Feature,
    Node,
    PosConst,
    ThrConst,
    evaluate,
    gate_params,
    is_gate,
    print_expr,
    with_gate_params,
)

POINTWISE_TOL = 1e-9
MERGE_TOLERANCE_Z = 0.05

_INF = float("inf")


# --- interval analysis for rule guards ---

def value_range(node: Node) -> tuple[float, float]:
    """Conservative bounds on a subtree's value under protected semantics.

    Unknown constructs widen to (-inf, inf); the guards below only need the
    easy cases (gates in (0,1), exp/sqrt/pow2 nonnegative, exact constants).
    """
    if isinstance(node, Const):
        return node.value, node.value
    if isinstance(node, (Feature, PosConst, ThrConst)):
        return -_INF, _INF
    name = node.prim.name
    if name == "lgo_thre":
        return 0.0, 1.0
    if name == "sqrt":
        lo, hi = value_range(node.args[0])
        bound = max(abs(lo), abs(hi))
        return 0.0, math.sqrt(bound) if math.isfinite(bound) else _INF
    if name == "exp":
        lo, hi = value_range(node.args[0])
        return math.exp(max(-60.0, min(lo, 60.0))), math.exp(min(60.0, max(hi, -60.0)))
    if name == "log":
        lo, hi = value_range(node.args[0])
        lo_out = math.log(max(lo, 1e-12)) if math.isfinite(lo) else math.log(1e-12)
        hi_out = math.log(max(hi, 1e-12)) if math.isfinite(hi) else _INF
        return lo_out, hi_out
    if name == "add":
        (a, b), (c, d) = value_range(node.args[0]), value_range(node.args[1])
        return a + c, b + d
    if name == "mul":
        (a, b), (c, d) = value_range(node.args[0]), value_range(node.args[1])
        if all(map(math.isfinite, (a, b, c, d))):
            prods = (a * c, a * d, b * c, b * d)
            return min(prods), max(prods)
        if a >= 0.0 and c >= 0.0:
            return 0.0, _INF
        return -_INF, _INF
    if name == "pow":
        k = int(node.args[1].value)
        lo, hi = value_range(node.args[0])
        if k % 2 == 0:
            if lo >= 0.0:
                return lo**k if math.isfinite(lo) else _INF, hi**k if math.isfinite(hi) else _INF
            top = max(abs(lo), abs(hi))
            return 0.0, top**k if math.isfinite(top) else _INF
        return (lo**k if math.isfinite(lo) else -_INF,
                hi**k if math.isfinite(hi) else _INF)
    return -_INF, _INF


def provably_nonnegative(node: Node) -> bool:
    return value_range(node)[0] >= 0.0


# --- rewrite rules ---

def _is_const(node: Node, value: float | None = None) -> bool:
    return isinstance(node, Const) and (value is None or node.value == value)


def _rule_add_zero(node: Call) -> Node | None:
    if node.prim.name != "add":
        return None
    if _is_const(node.args[1], 0.0):
        return node.args[0]
    if _is_const(node.args[0], 0.0):
        return node.args[1]
    return None


def _rule_sub_zero(node: Call) -> Node | None:
    if node.prim.name == "sub" and _is_const(node.args[1], 0.0):
        return node.args[0]
    return None


def _rule_mul_one(node: Call) -> Node | None:
    if node.prim.name != "mul":
        return None
    if _is_const(node.args[1], 1.0):
        return node.args[0]
    if _is_const(node.args[0], 1.0):
        return node.args[1]
    return None


def _rule_mul_zero(node: Call) -> Node | None:
    if node.prim.name != "mul":
        return None
    if _is_const(node.args[0], 0.0) or _is_const(node.args[1], 0.0):
        return Const(0.0)
    return None


def _rule_div_one(node: Call) -> Node | None:
    if node.prim.name == "div" and _is_const(node.args[1], 1.0):
        return node.args[0]
    return None


def _rule_pow_one(node: Call) -> Node | None:
    if node.prim.name == "pow" and _is_const(node.args[1], 1.0):
        return node.args[0]
    return None


def _rule_pow_zero(node: Call) -> Node | None:
    if node.prim.name == "pow" and _is_const(node.args[1], 0.0):
        return Const(1.0)
    return None


def _rule_sqrt_square(node: Call) -> Node | None:
    # sqrt(|x^2|) == x only when x is provably nonnegative.
    if node.prim.name != "sqrt":
        return None
    inner = node.args[0]
    if isinstance(inner, Call) and inner.prim.name == "pow" and _is_const(inner.args[1], 2.0):
        if provably_nonnegative(inner.args[0]):
            return inner.args[0]
    return None


# log(exp(x)) == x needs exp unclipped and exp(x) above the 1e-12 log floor.
_LOG_EXP_LO, _LOG_EXP_HI = -27.0, 59.5
# exp(log(x)) == x needs x at or above the log floor and log(x) below the exp clip.
_EXP_LOG_LO, _EXP_LOG_HI = 1e-12, 1e25


def _rule_log_exp(node: Call) -> Node | None:
    if node.prim.name != "log":
        return None
    inner = node.args[0]
    if isinstance(inner, Call) and inner.prim.name == "exp":
        lo, hi = value_range(inner.args[0])
        if lo >= _LOG_EXP_LO and hi <= _LOG_EXP_HI:
            return inner.args[0]
    return None


def _rule_exp_log(node: Call) -> Node | None:
    if node.prim.name != "exp":
        return None
    inner = node.args[0]
    if isinstance(inner, Call) and inner.prim.name == "log":
        lo, hi = value_range(inner.args[0])
        if lo >= _EXP_LOG_LO and hi <= _EXP_LOG_HI:
            return inner.args[0]
    return None


REWRITE_RULES = (
    ("add_zero", _rule_add_zero),
    ("sub_zero", _rule_sub_zero),
    ("mul_one", _rule_mul_one),
    ("mul_zero", _rule_mul_zero),
    ("div_one", _rule_div_one),
    ("pow_one", _rule_pow_one),
    ("pow_zero", _rule_pow_zero),
    ("sqrt_square", _rule_sqrt_square),
    ("log_exp", _rule_log_exp),
    ("exp_log", _rule_exp_log),
)


def _fold(node: Call) -> Node | None:
    """Fold a call whose arguments are all constant terminals; non-finite
    results are left in place."""
    for a in node.args:
        if not isinstance(a, (Const, PosConst, ThrConst)):
            return None
    val = evaluate(node, np.zeros((1, 1)))[0]
    if not np.isfinite(val):
        return None
    return Const(float(val))


def rewrite_pass(node: Node) -> Node:
    """One bottom-up sweep of folding plus all algebraic rules."""
    if not isinstance(node, Call):
        return node
    args = tuple(rewrite_pass(a) for a in node.args)
    if args != node.args:
        node = Call(node.prim, args)
    folded = _fold(node)
    if folded is not None:
        return folded
    changed = True
    while changed and isinstance(node, Call):
        changed = False
        for _, rule in REWRITE_RULES:
            out = rule(node)
            if out is not None:
                node = out
                changed = True
                break
    return node


def rewrite_fixpoint(node: Node) -> tuple[Node, int]:
    """Apply rewrite passes until the tree stops changing; returns the pass
    count, which is bounded by the node count (each changing pass strictly
    shrinks the tree)."""
    passes = 0
    while True:
        passes += 1
        out = rewrite_pass(node)
        if out == node:
            return out, passes
        node = out


# --- commutative canonicalization ---

def _sort_key(node: Node):
    # Order: kind, then name, then full serialized form.
    if isinstance(node, Const):
        return (0, "", repr(node.value))
    if isinstance(node, Feature):
        return (1, node.name, "")
    if isinstance(node, (PosConst, ThrConst)):
        return (2, "", print_expr(node))
    return (3, node.prim.name, print_expr(node))


def _flatten(node: Node, op: str):
    if isinstance(node, Call) and node.prim.name == op:
        return _flatten(node.args[0], op) + _flatten(node.args[1], op)
    return [node]


def canonicalize(node: Node) -> Node:
    """Flatten and sort add/mul chains into a left-deep canonical order.

    Reordering may regroup floating-point accumulation; the equivalence gate
    decides whether the canonical form is kept.
    """
    if not isinstance(node, Call):
        return node
    args = tuple(canonicalize(a) for a in node.args)
    if args != node.args:
        node = Call(node.prim, args)
    if node.prim.name in ("add", "mul"):
        terms = _flatten(node, node.prim.name)
        ordered = sorted(terms, key=_sort_key)
        rebuilt = ordered[0]
        for term in ordered[1:]:
            rebuilt = Call(node.prim, (rebuilt, term))
        if rebuilt != node:
            return rebuilt
    return node


# --- equivalence-gated pipeline ---

@dataclass
class EquivalenceReport:
    max_dev: float = 0.0
    metrics_equal: bool | None = None
    flagged: bool = False
    applied: list[str] = field(default_factory=list)
    rolled_back: list[str] = field(default_factory=list)
    rewrite_passes: int = 0


def _metric_values(task: str, y, pred) -> dict:
    if task == "binary":
        return metrics_mod.binary_metrics(y, pred).values()
    return metrics_mod.regression_metrics(y, pred).values()


def _values_equal(a: dict, b: dict) -> bool:
    for key in a:
        va, vb = a[key], b[key]
        if va is None or vb is None:
            if va is not vb:
                return False
            continue
        if math.isnan(va) and math.isnan(vb):
            continue
        if va != vb:
            return False
    return True


def _max_dev(pred_a, pred_b) -> float:
    d = np.abs(pred_a - pred_b)
    return float(d.max()) if d.size else 0.0


def simplify(expr: Node, X_check, y_check=None, task: str = "regression"):
    """Simplify with per-stage equivalence checkpoints against the raw model.

    Returns (expression, EquivalenceReport). When a stage's output deviates by
    >= 1e-9 anywhere on X_check, or changes any external metric, that stage is
    rolled back and the report is flagged; the returned expression is the last
    passing form.
    """
    X_check = np.asarray(X_check, dtype=float)
    raw_pred = evaluate(expr, X_check)
    raw_ok = bool(np.all(np.isfinite(raw_pred)))
    raw_vals = None
    if y_check is not None and raw_ok:
        raw_vals = _metric_values(task, np.asarray(y_check, dtype=float), raw_pred)
    report = EquivalenceReport()
    current = expr

    def admit(stage: str, cand: Node) -> Node:
        if cand == current:
            return current
        cand_pred = evaluate(cand, X_check)
        dev = _max_dev(cand_pred, raw_pred) if raw_ok else float("inf")
        ok = np.all(np.isfinite(cand_pred)) and dev < POINTWISE_TOL
        m_equal = None
        if ok and raw_vals is not None:
            m_equal = _values_equal(raw_vals, _metric_values(task, np.asarray(y_check, dtype=float), cand_pred))
            ok = ok and m_equal
        if ok:
            report.applied.append(stage)
            report.max_dev = max(report.max_dev, dev)
            if m_equal is not None:
                report.metrics_equal = m_equal
            return cand
        report.rolled_back.append(stage)
        report.flagged = True
        return current

    rewritten, passes = rewrite_fixpoint(current)
    report.rewrite_passes = passes
    current = admit("rewrite", rewritten)
    current = admit("canonicalize", canonicalize(current))
    if y_check is not None and raw_ok and report.metrics_equal is None:
        report.metrics_equal = True
    return current, report


def merge_near_duplicate_gates(expr: Node, X_check=None, y_check=None,
                               task: str = "regression",
                               tolerance_z: float = MERGE_TOLERANCE_Z):
    """Collapse same-feature single-input gates whose thresholds sit within
    tolerance_z of each other onto their median (a~, b_z).

    With X_check given, the merge must pass the same equivalence gate as
    simplify (pointwise < 1e-9 plus exact metric equality) or it is rolled
    back and flagged; near-equal but not identical thresholds usually fail,
    which is the intended conservatism.
    """
    groups: dict = {}
    for path_node in _gate_occurrences(expr):
        path, node = path_node
        if node.prim.arity == 3 and isinstance(node.args[0], Feature):
            groups.setdefault((node.prim.name, node.args[0].index), []).append((path, node))
    merged = expr
    did_merge = False
    for members in groups.values():
        if len(members) < 2:
            continue
        members = sorted(members, key=lambda pn: gate_params(pn[1]).b_z)
        cluster = [members[0]]
        clusters = []
        for pn in members[1:]:
            if gate_params(pn[1]).b_z - gate_params(cluster[-1][1]).b_z <= tolerance_z:
                cluster.append(pn)
            else:
                clusters.append(cluster)
                cluster = [pn]
        clusters.append(cluster)
        for cluster in clusters:
            if len(cluster) < 2:
                continue
            a_med = float(np.median([gate_params(n).a_tilde for _, n in cluster]))
            b_med = float(np.median([gate_params(n).b_z for _, n in cluster]))
            for path, node in cluster:
                merged = _replace_gate_params(merged, path, a_med, b_med)
            did_merge = True
    report = EquivalenceReport()
    if not did_merge:
        return expr, report
    if X_check is None:
        report.applied.append("merge_gates")
        return merged, report
    X_check = np.asarray(X_check, dtype=float)
    pre = evaluate(expr, X_check)
    post = evaluate(merged, X_check)
    dev = _max_dev(pre, post)
    ok = bool(np.all(np.isfinite(post))) and dev < POINTWISE_TOL
    if ok and y_check is not None and np.all(np.isfinite(pre)):
        y_arr = np.asarray(y_check, dtype=float)
        ok = _values_equal(_metric_values(task, y_arr, pre), _metric_values(task, y_arr, post))
        report.metrics_equal = ok
    if ok:
        report.applied.append("merge_gates")
        report.max_dev = dev
        return merged, report
    report.rolled_back.append("merge_gates")
    report.flagged = True
    return expr, report


def _gate_occurrences(expr: Node):
    out = []

    def walk(node: Node, path: tuple):
        if isinstance(node, Call):
            if is_gate(node):
                out.append((path, node))
            for i, a in enumerate(node.args):
                walk(a, path + (i,))

    walk(expr, ())
    return out


def _replace_gate_params(expr: Node, path: tuple, a_tilde: float, b_z: float) -> Node:
    if not path:
        return with_gate_params(expr, a_tilde, b_z)
    i = path[0]
    args = expr.args[:i] + (_replace_gate_params(expr.args[i], path[1:], a_tilde, b_z),) + expr.args[i + 1 :]
    return Call(expr.prim, args)


# --- display formatting ---

# Decimal places for thresholds rendered in natural units.
UNIT_DECIMALS = {"mmHg": 1, "mmol/L": 1, "mg/dL": 0}
DEFAULT_DECIMALS = 3


def format_threshold(value: float, unit: str | None = None) -> str:
    decimals = UNIT_DECIMALS.get(unit, DEFAULT_DECIMALS)
    if decimals == 0:
        return "%d" % (round(value),)
    return "%.*f" % (decimals, value)


def _fmt_const(v: float) -> str:
    return "%.4g" % (v,)


_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def display_format(expr: Node, stats: FeatureStats | None = None,
                   units: dict[str, str] | None = None,
                   z_train_X=None) -> str:
    """Human-readable infix form with gates compacted to gate(u > threshold).

    Thresholds are shown in natural units (via train statistics) at
    unit-specific precision when invertible, otherwise in z units with a 'z'
    suffix. Soft gates render as gate(u > t)*u, matching their magnitude-
    passing semantics.
    """
    units = units or {}

    def thr_text(u_node: Node, b_z: float) -> str:
        if isinstance(u_node, Feature) and stats is not None:
            unit = units.get(u_node.name)
            raw = invert_threshold(b_z, u_node.name, stats)
            text = format_threshold(raw, unit)
            return "%s %s" % (text, unit) if unit else text
        if z_train_X is not None:
            sub = fit_subexpr_stats(u_node, z_train_X)
            if sub.invertible:
                return format_threshold(sub.mu + sub.sigma * b_z, None)
        return "%sz" % (format_threshold(b_z, None),)

    def gate_text(u_node: Node, b_z: float) -> str:
        return "gate(%s > %s)" % (render(u_node, 0), thr_text(u_node, b_z))

    def render(node: Node, parent_prec: int) -> str:
        if isinstance(node, Feature):
            return node.name
        if isinstance(node, Const):
            return _fmt_const(node.value)
        if isinstance(node, (PosConst, ThrConst)):
            return _fmt_const(node.a_tilde if isinstance(node, PosConst) else node.b_z)
        name = node.prim.name
        if name in ("add", "sub", "mul", "div"):
            sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[name]
            prec = _PRECEDENCE[name]
            left = render(node.args[0], prec)
            right = render(node.args[1], prec + (1 if name in ("sub", "div") else 0))
            text = "%s%s%s" % (left, sym, right)
            return "(%s)" % text if prec < parent_prec else text
        if name == "pow":
            return "%s^%d" % (render(node.args[0], 3), int(node.args[1].value))
        if name in ("sqrt", "log", "exp", "inv"):
            return "%s(%s)" % (name, render(node.args[0], 0))
        params = gate_params(node)
        b = params.b_z
        if name == "lgo_thre":
            return gate_text(node.args[0], b)
        if name in ("lgo", "gate_expr"):
            u = render(node.args[0], 3)
            return "%s*%s" % (gate_text(node.args[0], b), u)
        if name == "lgo_pair":
            x, y = node.args[0], node.args[1]
            diff = "%s - %s" % (render(x, 2), render(y, 2))
            return "gate(%s > %sz)*%s*%s" % (diff, format_threshold(b, None),
                                             render(x, 3), render(y, 3))
        if name == "lgo_and2":
            x, y = node.args[0], node.args[1]
            return "%s*%s*%s*%s" % (render(x, 3), render(y, 3),
                                    gate_text(x, b), gate_text(y, b))
        if name == "lgo_or2":
            x, y = node.args[0], node.args[1]
            return "(%s + %s)*or(%s, %s)" % (render(x, 1), render(y, 1),
                                             gate_text(x, b), gate_text(y, b))
        if name == "lgo_and3":
            x, y, z = node.args[0], node.args[1], node.args[2]
            return "%s*%s*%s*%s*%s*%s" % (render(x, 3), render(y, 3), render(z, 3),
                                          gate_text(x, b), gate_text(y, b), gate_text(z, b))
        return print_expr(node)

    return render(expr, 0)
