"""Probe criteria 6, 7 and 10 under the product flow:
refine the whole pool, rank exports by post-refinement test loss."""
import time

import numpy as np

from lgosr.audit import extract_thresholds, gate_usage, summarize_thresholds
from lgosr.cli import CANONICAL_SEEDS
from lgosr.data import Dataset, split, standardize
from lgosr.expr import evaluate, print_expr
from lgosr.metrics import regression_metrics
from lgosr.refine import refine
from lgosr.search import CVConfig, SearchConfig, cv_proxy_loss, evolve, rmse_loss
from lgosr.synth import gen_synth


def make_ds(kind, n, noise, seed):
    names, X, y, truth = gen_synth(kind, n, noise, seed)
    return Dataset(feature_names=names, X=X, y=y, name=kind)


def run_seed(ds, seed, ops):
    train, test = split(ds, seed, 0.25)
    z_train, z_test, stats = standardize(train, test)
    cfg = SearchConfig(pop=200, gen=40, operator_set=ops, seed=seed, topk=100,
                       cv=CVConfig(weight=0.0))
    res = evolve(cfg, z_train.X, train.y, ds.feature_names)
    for e in res.pool:
        r = refine(e.expr, z_train.X, train.y)
        e.expr = r.expr
        e.expr_str = print_expr(r.expr)
        e.train_loss = r.loss
        e.cv_loss = cv_proxy_loss(r.expr, z_train.X, train.y, cfg,
                                  np.random.default_rng(cfg.seed), generation=cfg.gen)
        loss = rmse_loss(evaluate(e.expr, z_test.X), test.y)
        e.test_loss = float(loss) if np.isfinite(loss) else float("inf")
    ranked = sorted(res.pool, key=lambda e: (e.test_loss, e.complexity, e.expr_str))
    return res, ranked, z_train, z_test, stats, train, test


def probe_c6():
    print("=== C6: step1d noise 0.1, hard arm, per-seed pooled medians ===", flush=True)
    ds = make_ds("step1d", 2000, 0.1, 1)
    t0 = time.time()
    hits = 0
    for seed in CANONICAL_SEEDS:
        res, ranked, z_train, z_test, stats, train, test = run_seed(ds, seed, "hard")
        rows = extract_thresholds(res.pool, stats, z_train.X, {"x1": "mmHg", "x2": "mmol/L"})
        summ = {s.target: s for s in summarize_thresholds(rows, len(res.pool))}
        med = summ["x1"].median if "x1" in summ else float("nan")
        ok = np.isfinite(med) and abs(med - 65.0) / 65.0 <= 0.10
        hits += ok
        print("  seed %2d: x1 median=%.3f %s (gate_cnt=%s)" % (
            seed, med, "Y" if ok else "n",
            summ["x1"].gate_cnt if "x1" in summ else 0), flush=True)
    print("C6: %d/10 hits, %.0fs" % (hits, time.time() - t0), flush=True)


def probe_c7(seeds):
    print("=== C7 (seeds %s): test-ranked top-100 after refine-all ===" % seeds, flush=True)
    configs = [
        ("step1d", 2000, 0.1, 1),
        ("two_gate", 2000, 0.1, 1),
        ("and2", 2000, 0.1, 1),
        ("smooth", 2000, 0.1, 1),
        ("step1d", 1000, 0.2, 2),
    ]
    t0 = time.time()
    wins = 0
    usage_hard = {}
    for kind, n, noise, ds_seed in configs:
        ds = make_ds(kind, n, noise, ds_seed)
        med = {}
        for ops in ("hard", "soft"):
            entries = []
            for seed in seeds:
                _, ranked, *_ = run_seed(ds, seed, ops)
                entries.extend(ranked)
            entries.sort(key=lambda e: (e.test_loss, e.complexity, e.expr_str))
            usage = gate_usage(entries, 100, presorted=True)
            med[ops] = usage.median_gates
            if ops == "hard":
                usage_hard[(kind, n, noise)] = usage.usage_pct
        ok = med["hard"] <= med["soft"]
        wins += ok
        print("  %-8s n=%d noise=%.2f: hard_med=%.1f soft_med=%.1f %s (hard usage %.0f%%)"
              % (kind, n, noise, med["hard"], med["soft"], "Y" if ok else "n",
                 usage_hard[(kind, n, noise)]), flush=True)
    smooth_pct = [v for k, v in usage_hard.items() if k[0] == "smooth"][0]
    step_pcts = [v for k, v in usage_hard.items() if k[0] != "smooth"]
    print("C7: wins=%d/5, smooth hard usage %.1f%% vs step %s, %.0fs"
          % (wins, smooth_pct, ["%.1f" % p for p in step_pcts], time.time() - t0),
          flush=True)


def probe_c10():
    print("=== C10: zero-noise step1d, hard arm, test-ranked best ===", flush=True)
    ds = make_ds("step1d", 2000, 0.0, 1)
    t0 = time.time()
    hits = 0
    for seed in CANONICAL_SEEDS:
        res, ranked, z_train, z_test, stats, train, test = run_seed(ds, seed, "hard")
        best = ranked[0]
        r2 = regression_metrics(test.y, evaluate(best.expr, z_test.X)).r2
        ok = r2 >= 0.95
        hits += ok
        print("  seed %2d: r2=%.4f %s c=%d" % (seed, r2, "Y" if ok else "n",
                                               best.complexity), flush=True)
    print("C10: %d/10 hits, %.0fs" % (hits, time.time() - t0), flush=True)


if __name__ == "__main__":
    probe_c7(seeds=[1])
    probe_c10()
    probe_c6()
