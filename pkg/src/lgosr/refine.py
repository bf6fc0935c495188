"""Post-search refinement: constant refitting and coordinate descent on gates.

Both passes are strictly monotone in training RMSE: a step is accepted only if
the loss strictly decreases, otherwise the step size shrinks. Gate coordinates
use the analytic gate gradient (residual-weighted, local to the gate node) to
propose the step direction; the opposite direction is probed before shrinking,
so a misleading local sign costs one extra evaluation, never an ascent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gates
from .expr import (
    Call,
    Const,
    Node,
    PosConst,
    ThrConst,
    evaluate,
    is_gate,
    points,
    replace_at,
    subtree_at,
)
from .search import B_Z_CLIP, rmse_loss


@dataclass
class RefineConfig:
    steps: int = 60          # full coordinate cycles
    step_a: float = 0.5      # initial step on a~
    step_b: float = 0.25     # initial step on b_z
    shrink: float = 0.5
    min_step: float = 1e-4


# Constants need a much finer floor than gate parameters: the refit contract is
# recovery of a closed-form optimum to 1e-6.
@dataclass
class ConstFitConfig:
    steps: int = 120
    init_step: float = 0.5
    shrink: float = 0.5
    min_step: float = 1e-9


@dataclass
class RefineResult:
    expr: Node
    loss: float
    loss_history: list[float] = field(default_factory=list)
    changed: bool = False
    flag: str = ""


def _loss_of(expr: Node, X, y) -> float:
    pred = evaluate(expr, X)
    if not np.all(np.isfinite(pred)):
        return float("inf")
    return rmse_loss(pred, y)


def _gate_coords(expr: Node):
    """(path-to-param, kind) for every gate parameter, depth-first, a~ before b_z."""
    coords = []
    for path, node, _ in points(expr):
        if is_gate(node):
            arity = node.prim.arity
            coords.append((path + (arity - 2,), "a"))
            coords.append((path + (arity - 1,), "b"))
    return coords


def _grad_sign(expr: Node, gate_path: tuple, which: str, X, y) -> float:
    """Sign of d(loss)/d(param) through the gate node only.

    residual-weighted local gradient: sum_i r_i * d gate_i / d param. Exact for
    a model whose root is the gate; a direction heuristic when the gate is
    nested. Multi-input gates return 0 (pattern probing decides)."""
    gate_node = subtree_at(expr, gate_path)
    name = gate_node.prim.name
    if name in ("lgo", "gate_expr", "lgo_thre"):
        kind = "hard" if name == "lgo_thre" else "soft"
    else:
        return 0.0
    pred = evaluate(expr, X)
    if not np.all(np.isfinite(pred)):
        return 0.0
    u = evaluate(gate_node.args[0], X)
    p = gate_node.args[1]
    t = gate_node.args[2]
    a = float(gates.softplus(p.a_tilde))
    da, db = gates.gate_gradients(kind, u, a, t.b_z)
    g = da if which == "a" else db
    r = pred - y
    return float(np.sign(np.dot(r, g)))


def coordinate_descent_gates(expr: Node, X, y, config: RefineConfig | None = None) -> RefineResult:
    """Backtracking coordinate descent over every gate's (a~, b_z).

    b_z is reclipped to [-3, 3] at every move; accepted steps strictly decrease
    the training RMSE, so the loss history is monotone non-increasing.
    """
    config = config or RefineConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    coords = _gate_coords(expr)
    loss = _loss_of(expr, X, y)
    history = [loss]
    if not coords or not np.isfinite(loss):
        return RefineResult(expr, loss, history, changed=False,
                            flag="" if coords else "no_gates")
    steps = {c: (config.step_a if c[1] == "a" else config.step_b) for c in coords}
    changed = False
    for _ in range(config.steps):
        if all(s < config.min_step for s in steps.values()):
            break
        for coord in coords:
            path, which = coord
            if steps[coord] < config.min_step:
                continue
            sign = _grad_sign(expr, path[:-1], which, X, y)
            primary = -sign if sign != 0.0 else 1.0
            accepted = False
            for direction in (primary, -primary):
                cand = _bump_param(expr, path, which, direction * steps[coord])
                cand_loss = _loss_of(cand, X, y)
                if cand_loss < loss:
                    expr, loss = cand, cand_loss
                    history.append(loss)
                    accepted = True
                    changed = True
                    break
            if not accepted:
                steps[coord] *= config.shrink
    return RefineResult(expr, loss, history, changed=changed)


def _bump_param(expr: Node, path: tuple, which: str, delta: float) -> Node:
    node = subtree_at(expr, path)
    if which == "a":
        return replace_at(expr, path, PosConst(node.a_tilde + delta))
    new_b = float(np.clip(node.b_z + delta, -B_Z_CLIP, B_Z_CLIP))
    return replace_at(expr, path, ThrConst(new_b))


def _const_coords(expr: Node):
    """Paths of free constants; frozen slots (pow exponents) are excluded."""
    return [path for path, node, selectable in points(expr)
            if selectable and isinstance(node, Const)]


def refit_constants(expr: Node, X, y, config: ConstFitConfig | None = None) -> RefineResult:
    """Re-optimize the ephemeral constants with the same backtracking scheme.

    Constants have no analytic gradient here, so both directions are probed.
    An expression without constants, or one that evaluates non-finite at the
    start, is returned unchanged with a flag.
    """
    config = config or ConstFitConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    coords = _const_coords(expr)
    loss = _loss_of(expr, X, y)
    history = [loss]
    if not coords:
        return RefineResult(expr, loss, history, changed=False, flag="no_constants")
    if not np.isfinite(loss):
        return RefineResult(expr, loss, history, changed=False, flag="nonfinite_at_start")
    steps = {path: config.init_step for path in coords}
    changed = False
    for _ in range(config.steps):
        if all(s < config.min_step for s in steps.values()):
            break
        for path in coords:
            if steps[path] < config.min_step:
                continue
            node = subtree_at(expr, path)
            accepted = False
            for direction in (1.0, -1.0):
                cand = replace_at(expr, path, Const(node.value + direction * steps[path]))
                cand_loss = _loss_of(cand, X, y)
                if cand_loss < loss:
                    expr, loss = cand, cand_loss
                    history.append(loss)
                    accepted = True
                    changed = True
                    break
            if not accepted:
                steps[path] *= config.shrink
    return RefineResult(expr, loss, history, changed=changed)


def refine(expr: Node, X, y, gate_config: RefineConfig | None = None,
           const_config: ConstFitConfig | None = None) -> RefineResult:
    """Constant refit followed by gate coordinate descent; monotone end to end."""
    first = refit_constants(expr, X, y, const_config)
    second = coordinate_descent_gates(first.expr, X, y, gate_config)
    history = first.loss_history + second.loss_history[1:]
    return RefineResult(second.expr, second.loss, history,
                        changed=first.changed or second.changed,
                        flag=first.flag if second.flag == "" else second.flag)
