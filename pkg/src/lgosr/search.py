"""Typed genetic-programming search over gated expression trees.

The loop is deterministic for a fixed (config, dataset, seed): every stochastic
operator draws from one master RNG stream owned by the loop, candidate
evaluation is a pure function of the tree, and reduction happens in population
index order. Fitness values are cached by canonical expression string, which
already encodes the gate parameters at full precision.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .expr import (
    Call,
    Node,
    PrimitiveRegistry,
    complexity,
    depth,
    evaluate,
    gate_count,
    is_gate,
    points,
    print_expr,
    random_tree,
    register_primitives,
    replace_at,
    return_type,
    with_gate_params,
)

B_Z_CLIP = 3.0

_CX_ATTEMPTS = 8
_MUT_SUBTREE_DEPTH = 3
_MICRO_SIGMA_A = 0.25
_MICRO_SIGMA_B = 0.1

_INIT_DEPTHS = (2, 3, 4, 5, 6)


@dataclass
class CVConfig:
    enabled: bool = True
    weight: float = 0.0
    folds: int = 2
    subsample: float = 0.30
    warmup: float = 0.80


@dataclass
class SearchConfig:
    pop: int = 800
    gen: int = 100
    tourn: int = 7
    p_cx: float = 0.8
    p_mut: float = 0.2
    micro_mut_prob: float = 0.10
    cv: CVConfig = field(default_factory=CVConfig)
    max_depth: int = 10
    operator_set: str = "base"
    seed: int = 1
    topk: int = 100


@dataclass
class ParetoEntry:
    expr: Node
    expr_str: str
    cv_loss: float
    complexity: int
    train_loss: float
    seed: int
    generation: int
    # Test-split loss, filled in after refinement; search never reads it.
    test_loss: float = float("nan")


@dataclass
class GenLogRow:
    generation: int
    best_cv_loss: float
    median_complexity: float
    gate_count_best: int


@dataclass
class EvolutionResult:
    best: Node
    pool: list[ParetoEntry]
    logs: list[GenLogRow]


def rmse_loss(pred: np.ndarray, y: np.ndarray) -> float:
    """The engine's internal loss; reporting recomputes RMSE independently."""
    err = pred - y
    return float(np.sqrt(np.mean(err * err)))


def _proxy_from_parts(pred_sub, y_sub, fold_slices, weight, in_warmup) -> float:
    if not np.all(np.isfinite(pred_sub)):
        return float("inf")
    base = rmse_loss(pred_sub, y_sub)
    if in_warmup or weight == 0.0:
        return base
    fold_losses = [rmse_loss(pred_sub[idx], y_sub[idx]) for idx in fold_slices]
    return (1.0 - weight) * base + weight * float(np.mean(fold_losses))


def _draw_subsample(n: int, cv: CVConfig, rng: np.random.Generator):
    """One subsample and fold assignment per run, so fitness values stay
    comparable across candidates and deterministic under the seed."""
    if cv.enabled:
        m = max(2, int(np.floor(cv.subsample * n)))
        m = min(m, n)
        sub_idx = np.sort(rng.choice(n, size=m, replace=False))
    else:
        sub_idx = np.arange(n)
        m = n
    perm = rng.permutation(m)
    folds = max(1, int(cv.folds))
    fold_slices = [np.sort(perm[f::folds]) for f in range(folds)]
    return sub_idx, fold_slices


def cv_proxy_loss(individual: Node, z_train_X, y, config: SearchConfig,
                  rng: np.random.Generator, generation: int = 0) -> float:
    """Standalone proxy loss: subsampled train RMSE during warmup, blended with
    the mean held-out fold RMSE afterwards. weight = 0 reduces to the
    subsampled train RMSE in both phases."""
    z_train_X = np.asarray(z_train_X, dtype=float)
    y = np.asarray(y, dtype=float)
    sub_idx, fold_slices = _draw_subsample(z_train_X.shape[0], config.cv, rng)
    pred = evaluate(individual, z_train_X[sub_idx])
    in_warmup = generation < config.cv.warmup * config.gen
    return _proxy_from_parts(pred, y[sub_idx], fold_slices, config.cv.weight, in_warmup)


# --- variation operators ---

def tournament_select(scored, tourn: int, rng: np.random.Generator):
    """Pick the best of `tourn` distinct entrants from (tree, loss, complexity)
    triples; ties break toward lower complexity, then uniformly at random."""
    idx = _tournament_index(
        np.asarray([s[1] for s in scored]), [s[2] for s in scored], tourn, rng
    )
    return scored[idx][0]


def _tournament_index(losses, complexities, tourn, rng):
    n = len(losses)
    if tourn < 1:
        raise ConfigError("tournament size must be >= 1")
    k = min(tourn, n)
    cand = rng.choice(n, size=k, replace=False)
    best = None
    for i in cand:
        key = (losses[i], complexities[i])
        if best is None or key < best_key:
            best = [i]
            best_key = key
        elif key == best_key:
            best.append(int(i))
    if len(best) == 1:
        return int(best[0])
    return int(best[int(rng.integers(0, len(best)))])


def crossover(parent_a: Node, parent_b: Node, rng: np.random.Generator,
              max_depth: int = 10):
    """Swap type-compatible subtrees; retry up to 8 times when the slot types
    cannot be matched or a child would exceed the depth limit, then return the
    parents unchanged."""
    pts_a = [p for p in points(parent_a) if p[2]]
    pts_b = [p for p in points(parent_b) if p[2]]
    for _ in range(_CX_ATTEMPTS):
        path_a, node_a, _ = pts_a[int(rng.integers(0, len(pts_a)))]
        want = _slot_type(node_a)
        compat = [p for p in pts_b if _slot_type(p[1]) is want]
        if not compat:
            continue
        path_b, node_b, _ = compat[int(rng.integers(0, len(compat)))]
        child_a = replace_at(parent_a, path_a, node_b)
        child_b = replace_at(parent_b, path_b, node_a)
        if depth(child_a) <= max_depth and depth(child_b) <= max_depth:
            return child_a, child_b
    return parent_a, parent_b


def _slot_type(node: Node):
    return return_type(node)


def mutate(individual: Node, rng: np.random.Generator, registry: PrimitiveRegistry,
           feature_names, max_depth: int = 10) -> Node:
    """Replace one uniformly chosen subtree with a fresh typed subtree of depth
    <= 3, respecting the overall depth limit. Nothing outside the chosen
    subtree changes."""
    pts = [p for p in points(individual) if p[2]]
    path, node, _ = pts[int(rng.integers(0, len(pts)))]
    budget = min(_MUT_SUBTREE_DEPTH, max_depth - len(path))
    fresh = random_tree(registry, feature_names, rng, max(0, budget), "grow", _slot_type(node))
    return replace_at(individual, path, fresh)


def micro_mutate_gates(individual: Node, prob: float, rng: np.random.Generator) -> Node:
    """Jitter each gate's parameters independently with the given probability:
    a~ += N(0, 0.25^2), b_z += N(0, 0.1^2), then reclip b_z to [-3, 3].
    Visits gates in depth-first order so the RNG stream is reproducible."""

    def walk(node: Node) -> Node:
        if not isinstance(node, Call):
            return node
        args = tuple(walk(a) for a in node.args)
        node = node if args == node.args else Call(node.prim, args)
        if is_gate(node) and rng.random() < prob:
            pos = node.args[-2]
            thr = node.args[-1]
            a_tilde = pos.a_tilde + _MICRO_SIGMA_A * rng.standard_normal()
            b_z = float(np.clip(thr.b_z + _MICRO_SIGMA_B * rng.standard_normal(), -B_Z_CLIP, B_Z_CLIP))
            node = with_gate_params(node, a_tilde, b_z)
        return node

    return walk(individual)


def init_population(config: SearchConfig, registry: PrimitiveRegistry, feature_names,
                    rng: np.random.Generator) -> list[Node]:
    """Ramped half-and-half initialization: depths cycle over 2..6 and the
    grow/full methods alternate."""
    pop = []
    for i in range(config.pop):
        d = _INIT_DEPTHS[i % len(_INIT_DEPTHS)]
        method = "grow" if (i // len(_INIT_DEPTHS)) % 2 == 0 else "full"
        pop.append(random_tree(registry, feature_names, rng, d, method))
    return pop


# --- evaluation with optional worker pool ---

_WORKER_CTX = {}


def _init_worker(X_sub, y_sub):
    _WORKER_CTX["X"] = X_sub
    _WORKER_CTX["y"] = y_sub


def _eval_tree_remote(tree):
    return evaluate(tree, _WORKER_CTX["X"])


class _Evaluator:
    """Caches (loss, complexity) by canonical string; evaluation itself is pure,
    so any worker count produces identical results."""

    def __init__(self, X, y, config: SearchConfig, rng, workers: int = 1):
        self.config = config
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.sub_idx, self.fold_slices = _draw_subsample(self.X.shape[0], config.cv, rng)
        self.X_sub = self.X[self.sub_idx]
        self.y_sub = self.y[self.sub_idx]
        self.cache: dict = {}
        self.workers = max(1, int(workers))
        self._pool = None
        if self.workers > 1:
            self._pool = multiprocessing.get_context("fork").Pool(
                self.workers, initializer=_init_worker, initargs=(self.X_sub, self.y_sub)
            )

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def phase(self, generation: int) -> str:
        in_warmup = generation < self.config.cv.warmup * self.config.gen
        if in_warmup or self.config.cv.weight == 0.0:
            return "warmup"
        return "blend"

    def score_population(self, trees, generation: int):
        """(losses, complexities, keys) for a population, reduced in index order."""
        phase = self.phase(generation)
        keys = [(phase, print_expr(t)) for t in trees]
        missing = []
        seen = set()
        for tree, key in zip(trees, keys):
            if key not in self.cache and key not in seen:
                seen.add(key)
                missing.append((key, tree))
        if self._pool is not None and len(missing) > 1:
            preds = self._pool.map(_eval_tree_remote, [t for _, t in missing])
        else:
            preds = [evaluate(t, self.X_sub) for _, t in missing]
        for (key, tree), pred in zip(missing, preds):
            loss = _proxy_from_parts(pred, self.y_sub, self.fold_slices,
                                     self.config.cv.weight, phase == "warmup")
            self.cache[key] = (loss, complexity(tree))
        losses = np.array([self.cache[k][0] for k in keys])
        cplx = [self.cache[k][1] for k in keys]
        return losses, cplx, keys


# --- Pareto pool ---

def pareto_front(entries: list[ParetoEntry]) -> list[ParetoEntry]:
    """Non-dominated subset under (cv_loss, complexity), both minimized.
    Entries tied on both objectives are all kept."""
    ordered = sorted(entries, key=lambda e: (e.cv_loss, e.complexity, e.expr_str))
    front = []
    best_cplx = None
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].cv_loss == ordered[i].cv_loss:
            j += 1
        group = ordered[i:j]
        group_min = min(e.complexity for e in group)
        if best_cplx is None or group_min < best_cplx:
            front.extend(e for e in group if e.complexity == group_min)
            best_cplx = group_min
        i = j
    return front


def top_k(entries: list[ParetoEntry], k: int) -> list[ParetoEntry]:
    return sorted(entries, key=lambda e: (e.cv_loss, e.complexity, e.expr_str))[:k]


def build_pool(candidates: dict, k: int) -> list[ParetoEntry]:
    """Non-dominated points plus the top-k archive, deduplicated, ranked by
    (cv_loss, complexity, string)."""
    entries = list(candidates.values())
    entries = [e for e in entries if np.isfinite(e.cv_loss)]
    keep = {e.expr_str: e for e in pareto_front(entries)}
    for e in top_k(entries, k):
        keep.setdefault(e.expr_str, e)
    return sorted(keep.values(), key=lambda e: (e.cv_loss, e.complexity, e.expr_str))


def evolve(config: SearchConfig, z_train_X, y, feature_names, workers: int = 1) -> EvolutionResult:
    """Run the full loop: init -> (select -> crossover -> mutate -> micro-mutate)
    x generations, with elitism of one and a Pareto pool over every candidate
    evaluated during the run."""
    registry = register_primitives(config.operator_set)
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(z_train_X, y, config, rng, workers)
    try:
        population = init_population(config, registry, feature_names, rng)
        losses, cplx, keys = ev.score_population(population, 0)
        candidates: dict = {}
        _absorb(candidates, population, losses, cplx, config.seed, 0)
        best_i = int(np.lexsort((cplx, losses))[0])
        best_tree, best_loss = population[best_i], float(losses[best_i])
        logs = [_log_row(0, best_loss, cplx, best_tree)]
        for g in range(1, config.gen + 1):
            offspring = [None] * (config.pop - 1)
            for i in range(config.pop - 1):
                offspring[i] = population[_tournament_index(losses, cplx, config.tourn, rng)]
            for i in range(0, config.pop - 2, 2):
                if rng.random() < config.p_cx:
                    offspring[i], offspring[i + 1] = crossover(
                        offspring[i], offspring[i + 1], rng, config.max_depth
                    )
            for i in range(config.pop - 1):
                if rng.random() < config.p_mut:
                    offspring[i] = mutate(offspring[i], rng, registry, feature_names,
                                          config.max_depth)
                offspring[i] = micro_mutate_gates(offspring[i], config.micro_mut_prob, rng)
            population = [best_tree] + offspring
            losses, cplx, keys = ev.score_population(population, g)
            _absorb(candidates, population, losses, cplx, config.seed, g)
            gen_best = int(np.lexsort((cplx, losses))[0])
            if (losses[gen_best], cplx[gen_best]) < (best_loss, complexity(best_tree)):
                best_tree, best_loss = population[gen_best], float(losses[gen_best])
            logs.append(_log_row(g, best_loss, cplx, best_tree))
        pool = build_pool(candidates, config.topk)
        for e in pool:
            pred = evaluate(e.expr, ev.X)
            e.train_loss = rmse_loss(pred, ev.y) if np.all(np.isfinite(pred)) else float("inf")
        return EvolutionResult(best=best_tree, pool=pool, logs=logs)
    finally:
        ev.close()


def _absorb(candidates, population, losses, cplx, seed, generation):
    for tree, loss, c in zip(population, losses, cplx):
        if not np.isfinite(loss):
            continue
        key = print_expr(tree)
        if key not in candidates:
            candidates[key] = ParetoEntry(tree, key, float(loss), int(c), float("nan"),
                                          seed, generation)


def _log_row(generation, best_loss, cplx, best_tree):
    return GenLogRow(
        generation=generation,
        best_cv_loss=float(best_loss),
        median_complexity=float(np.median(cplx)),
        gate_count_best=gate_count(best_tree),
    )
