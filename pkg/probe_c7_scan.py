"""Scan budgets for the parsimony direction: objective-ranked top-100 gate
stats, no refinement (counts are structural)."""
import sys
import time

from lgosr.audit import gate_usage
from lgosr.data import Dataset, split, standardize
from lgosr.search import CVConfig, SearchConfig, evolve
from lgosr.synth import gen_synth

CONFIGS = [
    ("step1d", 2000, 0.1, 1),
    ("two_gate", 2000, 0.1, 1),
    ("and2", 2000, 0.1, 1),
    ("smooth", 2000, 0.1, 1),
    ("step1d", 1000, 0.2, 2),
]


def make_ds(kind, n, noise, seed):
    names, X, y, truth = gen_synth(kind, n, noise, seed)
    return Dataset(feature_names=names, X=X, y=y, name=kind)


def scan(pop, gen, seeds):
    print("--- pop=%d gen=%d seeds=%s ---" % (pop, gen, seeds), flush=True)
    wins = 0
    usage_hard = {}
    for kind, n, noise, ds_seed in CONFIGS:
        ds = make_ds(kind, n, noise, ds_seed)
        med = {}
        for ops in ("hard", "soft"):
            entries = []
            for seed in seeds:
                train, test = split(ds, seed, 0.25)
                z_train, z_test, stats = standardize(train, test)
                cfg = SearchConfig(pop=pop, gen=gen, operator_set=ops, seed=seed,
                                   topk=100, cv=CVConfig(weight=0.0))
                res = evolve(cfg, z_train.X, train.y, ds.feature_names)
                entries.extend(res.pool)
            usage = gate_usage(entries, 100)
            med[ops] = usage.median_gates
            if ops == "hard":
                usage_hard[(kind, n, noise)] = usage.usage_pct
        ok = med["hard"] <= med["soft"]
        wins += ok
        print("  %-8s n=%4d noise=%.2f: hard=%5.1f soft=%5.1f %s usage=%5.1f%%"
              % (kind, n, noise, med["hard"], med["soft"], "Y" if ok else "n",
                 usage_hard[(kind, n, noise)]), flush=True)
    smooth_pct = [v for k, v in usage_hard.items() if k[0] == "smooth"][0]
    step_pcts = [v for k, v in usage_hard.items() if k[0] != "smooth"]
    clause2 = all(smooth_pct < p for p in step_pcts)
    print("  wins=%d/5 clause2(smooth<steps)=%s smooth=%.1f steps=%s"
          % (wins, clause2, smooth_pct, ["%.1f" % p for p in step_pcts]), flush=True)


if __name__ == "__main__":
    t0 = time.time()
    seeds = [int(s) for s in sys.argv[1].split(",")] if len(sys.argv) > 1 else [1, 2, 3]
    for pop, gen in ((200, 10), (200, 20), (200, 40), (400, 20)):
        scan(pop, gen, seeds)
    print("total %.0fs" % (time.time() - t0), flush=True)
