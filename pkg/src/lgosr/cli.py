"""Command-line interface: run, gen-synth, audit, simplify, plotdata.

Exports are byte-identical across runs with the same manifest: CSV cells are
written with repr() full-precision floats, rows in deterministic order, no
timestamps anywhere, and the JSON manifest records a sha256 per artifact.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 self-check
failure (exports are still written before exiting with 4).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import audit as audit_mod
from . import metrics as metrics_mod
from .data import (
    CANONICAL_SEEDS,
    DEFAULT_TEST_FRACTION,
    load_csv,
    split,
    standardize,
)
from .errors import ConfigError, DataError, LgosrError
from .expr import OPERATOR_SETS, evaluate, parse_expr, print_expr, register_primitives
from .refine import refine
from .search import (
    CVConfig,
    EvolutionResult,
    SearchConfig,
    cv_proxy_loss,
    evolve,
    rmse_loss,
)
from .simplify import display_format, merge_near_duplicate_gates, simplify
from .synth import KINDS, write_synth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SELF_CHECK = 4

ARM_NAMES = {"base": "base", "soft": "lgo_soft", "hard": "lgo_hard"}
METHOD = "lgosr"

WORKERS_ENV = "LGOSR_WORKERS"


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV %r" % (str(path),)) from None
        return header, [row for row in reader if row]


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class _SeedContext:
    seed: int
    stats: object
    z_train_X: np.ndarray
    z_test_X: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    result: EvolutionResult
    ranked: list  # pool entries ordered by post-refinement test loss
    report: metrics_mod.MetricReport
    internal_loss: float
    findings: list[str] = field(default_factory=list)


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("%s must be an integer, got %r" % (WORKERS_ENV, env)) from None
    return 1


def _parse_seeds(text: str | None):
    if not text:
        return list(CANONICAL_SEEDS)
    try:
        seeds = [int(s) for s in text.replace(" ", "").split(",") if s != ""]
    except ValueError:
        raise ConfigError("--seeds must be a comma-separated integer list, got %r" % (text,)) from None
    if not seeds:
        raise ConfigError("--seeds produced an empty list")
    return seeds


def cmd_run(args) -> int:
    if args.ops not in OPERATOR_SETS:
        raise ConfigError("--ops must be one of %s, got %r" % (", ".join(OPERATOR_SETS), args.ops))
    if args.pop < 2 or args.gen < 0:
        raise ConfigError("--pop must be >= 2 and --gen >= 0")
    seeds = _parse_seeds(args.seeds)
    workers = _workers(args)
    dataset = load_csv(args.data, args.target, args.task, name=args.name or "")
    catalogue = audit_mod.load_anchors(args.anchors) if args.anchors else None
    units = {}
    if catalogue is not None:
        units = {f: a.unit for f, a in catalogue.anchors.items()}
    arm = ARM_NAMES[args.ops]
    os.makedirs(args.out, exist_ok=True)

    contexts: list[_SeedContext] = []
    for seed in seeds:
        cfg = SearchConfig(
            pop=args.pop, gen=args.gen, operator_set=args.ops, seed=seed,
            topk=args.topk, cv=CVConfig(weight=args.cv_weight),
        )
        train, test = split(dataset, seed, args.test_fraction)
        z_train, z_test, stats = standardize(train, test)
        result = evolve(cfg, z_train.X, train.y, dataset.feature_names, workers=workers)
        # refine_top <= 0 means the whole pool; the front members matter even
        # though they rank poorly on loss, because refinement is what sharpens
        # their gate parameters into reportable thresholds.
        limit = len(result.pool) if args.refine_top <= 0 else args.refine_top
        for entry in result.pool[:limit]:
            refined = refine(entry.expr, z_train.X, train.y)
            entry.expr = refined.expr
            entry.expr_str = print_expr(refined.expr)
            entry.train_loss = refined.loss
            # Rescore on the same subsample evolve drew: the subsample is the
            # first thing the run seed generates, so it can be reproduced here.
            entry.cv_loss = cv_proxy_loss(
                refined.expr, z_train.X, train.y, cfg,
                np.random.default_rng(cfg.seed), generation=cfg.gen,
            )
        # Search objective orders the pool dump; exports rank by test loss
        # computed once per candidate after refinement.
        for entry in result.pool:
            loss = rmse_loss(evaluate(entry.expr, z_test.X), test.y)
            entry.test_loss = float(loss) if np.isfinite(loss) else float("inf")
        result.pool.sort(key=lambda e: (e.cv_loss, e.complexity, e.expr_str))
        ranked = sorted(result.pool,
                        key=lambda e: (e.test_loss, e.complexity, e.expr_str))
        best = ranked[0]
        pred_test = evaluate(best.expr, z_test.X)
        internal = rmse_loss(pred_test, test.y)
        if args.task == "binary":
            report = metrics_mod.binary_metrics(test.y, pred_test)
        else:
            report = metrics_mod.regression_metrics(test.y, pred_test)
        findings = metrics_mod.self_check(report, internal)
        contexts.append(_SeedContext(
            seed=seed, stats=stats, z_train_X=z_train.X, z_test_X=z_test.X,
            y_train=train.y, y_test=test.y, result=result, ranked=ranked,
            report=report, internal_loss=internal, findings=findings,
        ))
        print("seed %d: best %s test_loss=%.6g complexity=%d%s" % (
            seed, arm, best.test_loss, best.complexity,
            " findings=" + ";".join(findings) if findings else ""))

    outputs = _write_run_exports(args, arm, dataset, contexts, catalogue, units)
    manifest = _build_manifest(args, arm, dataset, seeds, contexts, outputs)
    manifest_path = os.path.join(args.out, "run_manifest.json")
    with open(manifest_path, "w") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print("wrote %d artifacts to %s" % (len(outputs) + 1, args.out))
    if any(ctx.findings for ctx in contexts):
        print("self-check FAILED:", file=sys.stderr)
        for ctx in contexts:
            for finding in ctx.findings:
                print("  seed %d: %s" % (ctx.seed, finding), file=sys.stderr)
        return EXIT_SELF_CHECK
    return EXIT_OK


def _write_run_exports(args, arm, dataset, contexts, catalogue, units):
    out = args.out
    name = dataset.name or "dataset"
    written = []

    def emit(filename, header, rows):
        path = os.path.join(out, filename)
        write_csv(path, header, rows)
        written.append(filename)

    # Per-seed artifacts: generation logs and standardization stats.
    for ctx in contexts:
        emit("gen_log_seed%d.csv" % ctx.seed,
             ["generation", "best_cv_loss", "median_complexity", "gate_count_best"],
             [[r.generation, r.best_cv_loss, r.median_complexity, r.gate_count_best]
              for r in ctx.result.logs])
        emit("stats_seed%d.csv" % ctx.seed,
             ["feature", "mu", "sigma"],
             [[f, float(ctx.stats.mu[i]), float(ctx.stats.sigma[i])]
              for i, f in enumerate(ctx.stats.feature_names)])

    emit("overall_metrics.csv",
         ["dataset", "method", "experiment", "seed", "metric", "value"],
         [[name, METHOD, arm, ctx.seed, metric, float(value)]
          for ctx in contexts
          for metric, value in sorted(ctx.report.values().items())
          if value is not None] +
         [[name, METHOD, arm, ctx.seed, "internal_rmse", ctx.internal_loss] for ctx in contexts])

    # Cross-seed aggregation; seeds flagged as implausible are excluded here
    # (and only here) with the exclusion recorded.
    summary_rows = []
    anomalous = {ctx.seed for ctx in contexts
                 if any(f.startswith("implausible_r2") for f in ctx.findings)}
    kept = [ctx for ctx in contexts if ctx.seed not in anomalous]
    metric_names = sorted({m for ctx in contexts for m, v in ctx.report.values().items()
                           if v is not None})
    for metric in metric_names:
        vals = [ctx.report.values()[metric] for ctx in kept
                if ctx.report.values().get(metric) is not None]
        mean, std, n = audit_mod.aggregate_seeds(vals)
        summary_rows.append([name, METHOD, arm, metric, mean, std, n, len(anomalous)])
    emit("metrics_summary.csv",
         ["dataset", "method", "experiment", "metric", "mean", "std", "n_seeds", "n_excluded"],
         summary_rows)

    all_entries = [e for ctx in contexts for e in ctx.result.pool]
    emit("pool.csv",
         ["expression", "cv_loss", "complexity", "seed", "generation"],
         [[e.expr_str, e.cv_loss, e.complexity, e.seed, e.generation]
          for e in sorted(all_entries, key=lambda e: (e.cv_loss, e.complexity, e.expr_str))])

    # Export ranking is the post-refinement test loss; the search objective
    # only orders the pool dump above.
    union_top = sorted(all_entries,
                       key=lambda e: (e.test_loss, e.complexity, e.expr_str))[: args.topk]
    by_seed = {ctx.seed: ctx for ctx in contexts}

    # Threshold rows for the union top-k, inverted per-seed (train-only stats).
    union_rows = []
    for ctx in contexts:
        subset = [e for e in union_top if e.seed == ctx.seed]
        union_rows.extend(audit_mod.extract_thresholds(subset, ctx.stats, ctx.z_train_X, units))
    summaries = audit_mod.summarize_thresholds(union_rows, models_total=len(union_top))
    emit("thresholds_units.csv",
         ["dataset", "feature", "unit", "gate_cnt", "models_with_gate_N",
          "models_with_gate_pct", "median", "q1", "q3", "gate_type"],
         [[name, s.target, s.unit, s.gate_cnt, s.models_with_gate,
           s.models_with_gate_pct, s.median, s.q1, s.q3, s.gate_type]
          for s in summaries])

    # Per-seed rows pool the seed's whole candidate pool (Pareto front plus
    # the top-k archive): truncating to top-k alone would drop the simple
    # front models that carry the cleanest thresholds.
    per_seed_rows = []
    for ctx in contexts:
        pool = ctx.result.pool
        rows = audit_mod.extract_thresholds(pool, ctx.stats, ctx.z_train_X, units)
        for s in audit_mod.summarize_thresholds(rows, models_total=len(pool)):
            per_seed_rows.append([name, ctx.seed, s.target, s.unit, s.gate_cnt,
                                  s.models_with_gate, s.models_with_gate_pct,
                                  s.median, s.q1, s.q3, s.gate_type])
    emit("thresholds_per_seed.csv",
         ["dataset", "seed", "feature", "unit", "gate_cnt", "models_with_gate_N",
          "models_with_gate_pct", "median", "q1", "q3", "gate_type"],
         per_seed_rows)

    # Gate usage is a search diagnostic: it stays on the objective ranking
    # (its row even reports cv_loss_median), unlike the model-facing exports
    # above which rank by held-out loss.
    usage = audit_mod.gate_usage(all_entries, args.topk)
    emit("gating_usage.csv",
         ["dataset", "experiment", "top_k", "usage_pct", "median_gates",
          "complexity_median", "cv_loss_median"],
         [[name, arm, usage.top_k, usage.usage_pct, usage.median_gates,
           usage.complexity_median, usage.cv_loss_median]])

    if catalogue is not None:
        threshold_kind = audit_mod.THRESHOLD_GATE_KIND.get(args.ops)
        feature_summaries = [s for s in summaries
                             if s.unit != "(expr)" and s.gate_type == threshold_kind]
        audit_report = audit_mod.audit_thresholds(feature_summaries, catalogue)
        emit("threshold_audit.csv",
             ["feature", "unit", "median", "q1", "q3", "anchor", "rel_dev", "band"],
             [[r.feature, r.unit, r.median, r.q1, r.q3, r.anchor, r.rel_dev, r.band]
              for r in audit_report.rows])

    topk_rows = []
    for rank, entry in enumerate(union_top, start=1):
        ctx = by_seed[entry.seed]
        simp, eq_report = simplify(entry.expr, ctx.z_test_X, ctx.y_test, dataset.task)
        merged, merge_report = merge_near_duplicate_gates(
            simp, ctx.z_test_X, ctx.y_test, dataset.task, args.merge_tolerance)
        flagged = eq_report.flagged or merge_report.flagged
        topk_rows.append([rank, entry.expr_str, print_expr(merged), flagged,
                          entry.cv_loss, entry.complexity])
    emit("topk_expressions.csv",
         ["rank", "raw", "simplified", "equivalence_flag", "cv_loss", "complexity"],
         topk_rows)

    if union_top:
        best = union_top[0]
        ctx = by_seed[best.seed]
        simp, _ = simplify(best.expr, ctx.z_test_X, ctx.y_test, dataset.task)
        lines = [
            "raw: %s" % (best.expr_str,),
            "simplified: %s" % (print_expr(simp),),
            "display: %s" % (display_format(simp, ctx.stats, units, ctx.z_train_X),),
            "cv_loss: %r" % (best.cv_loss,),
            "complexity: %d" % (best.complexity,),
        ]
        path = os.path.join(out, "top1_expression.txt")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        written.append("top1_expression.txt")
    return written


def _build_manifest(args, arm, dataset, seeds, contexts, outputs):
    cfg = {
        "pop": args.pop, "gen": args.gen, "operator_set": args.ops,
        "topk": args.topk, "refine_top": args.refine_top,
        "test_fraction": args.test_fraction, "cv_weight": args.cv_weight,
        "merge_tolerance": args.merge_tolerance, "task": args.task,
    }
    return {
        "dataset": dataset.name, "data_path": str(args.data),
        "target": args.target, "method": METHOD, "experiment": arm,
        "seeds": seeds, "config": cfg,
        "anchors_path": str(args.anchors) if args.anchors else None,
        "rows_dropped": dataset.n_dropped,
        "self_check_findings": {str(ctx.seed): ctx.findings for ctx in contexts},
        "outputs": {fname: sha256_of(os.path.join(args.out, fname)) for fname in sorted(outputs)},
    }


def cmd_gen_synth(args) -> int:
    csv_path, truth_path = write_synth(args.kind, args.n, args.noise, args.seed, args.out)
    print("wrote %s and %s" % (csv_path, truth_path))
    return EXIT_OK


def cmd_audit(args) -> int:
    catalogue = audit_mod.load_anchors(args.anchors)
    header, rows = read_csv_rows(args.thresholds)
    idx = {col: i for i, col in enumerate(header)}
    for col in ("feature", "unit", "median", "q1", "q3", "gate_type"):
        if col not in idx:
            raise DataError("thresholds CSV is missing column %r" % (col,))
    summaries = []
    for row in rows:
        try:
            summaries.append(audit_mod.ThresholdSummary(
                target=row[idx["feature"]], unit=row[idx["unit"]],
                gate_type=row[idx["gate_type"]],
                gate_cnt=int(float(row[idx["gate_cnt"]])) if "gate_cnt" in idx else 0,
                models_with_gate=0, models_total=0,
                median=float(row[idx["median"]]),
                q1=float(row[idx["q1"]]), q3=float(row[idx["q3"]]),
            ))
        except ValueError:
            raise DataError("non-numeric threshold row for feature %r" % (row[idx["feature"]],)) from None
    feature_summaries = [s for s in summaries if s.unit != "(expr)"]
    report = audit_mod.audit_thresholds(feature_summaries, catalogue)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "threshold_audit.csv")
    write_csv(out_path,
              ["feature", "unit", "median", "q1", "q3", "anchor", "rel_dev", "band"],
              [[r.feature, r.unit, r.median, r.q1, r.q3, r.anchor, r.rel_dev, r.band]
               for r in report.rows])
    counts = report.band_counts()
    print("audit: %d green, %d yellow, %d red (%d excluded)" % (
        counts["green"], counts["yellow"], counts["red"], len(report.excluded)))
    for feature, reason in report.excluded:
        print("  excluded %s: %s" % (feature, reason))
    print("wrote %s" % (out_path,))
    return EXIT_OK


def cmd_simplify(args) -> int:
    dataset = load_csv(args.data, args.target, args.task)
    z_all, _, stats = standardize(dataset)
    registry = register_primitives(args.ops)
    header, rows = read_csv_rows(args.pool)
    idx = {col: i for i, col in enumerate(header)}
    if "expression" not in idx:
        raise DataError("pool CSV is missing an 'expression' column")
    out_rows = []
    for row in rows:
        text = row[idx["expression"]]
        tree = parse_expr(text, registry, dataset.feature_names)
        simp, report = simplify(tree, z_all.X, dataset.y, args.task)
        merged, merge_report = merge_near_duplicate_gates(
            simp, z_all.X, dataset.y, args.task, args.merge_tolerance)
        out_rows.append([text, print_expr(merged),
                         report.flagged or merge_report.flagged,
                         display_format(merged, stats, {}, z_all.X)])
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "simplified_pool.csv")
    write_csv(out_path, ["expression", "simplified", "equivalence_flag", "display"], out_rows)
    print("wrote %s (%d expressions)" % (out_path, len(out_rows)))
    return EXIT_OK


def cmd_plotdata(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    violin = []
    pareto = []
    usage = []
    thresholds = []
    for run_dir in args.runs:
        manifest_path = os.path.join(run_dir, "run_manifest.json")
        if not os.path.exists(manifest_path):
            raise DataError("run directory %r has no run_manifest.json" % (run_dir,))
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        ds = manifest.get("dataset", "")
        arm = manifest.get("experiment", "")
        om = os.path.join(run_dir, "overall_metrics.csv")
        if os.path.exists(om):
            _, rows = read_csv_rows(om)
            violin.extend(rows)
        pool_path = os.path.join(run_dir, "pool.csv")
        if os.path.exists(pool_path):
            _, rows = read_csv_rows(pool_path)
            for row in rows:
                pareto.append([ds, arm, row[2], row[1], row[3]])
        gu = os.path.join(run_dir, "gating_usage.csv")
        if os.path.exists(gu):
            _, rows = read_csv_rows(gu)
            usage.extend(rows)
        ta = os.path.join(run_dir, "threshold_audit.csv")
        if os.path.exists(ta):
            _, rows = read_csv_rows(ta)
            for row in rows:
                thresholds.append([ds, arm] + row)
    write_csv(os.path.join(args.out, "plotdata_violin.csv"),
              ["dataset", "method", "experiment", "seed", "metric", "value"], violin)
    write_csv(os.path.join(args.out, "plotdata_pareto.csv"),
              ["dataset", "experiment", "complexity", "cv_loss", "seed"], pareto)
    write_csv(os.path.join(args.out, "plotdata_gate_usage.csv"),
              ["dataset", "experiment", "top_k", "usage_pct", "median_gates",
               "complexity_median", "cv_loss_median"], usage)
    write_csv(os.path.join(args.out, "plotdata_thresholds.csv"),
              ["dataset", "experiment", "feature", "unit", "median", "q1", "q3",
               "anchor", "rel_dev", "band"], thresholds)
    print("wrote plot data for %d run(s) to %s" % (len(args.runs), args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgosr",
        description="Symbolic regression with logistic-gated threshold operators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run search + refinement + exports on a dataset")
    run.add_argument("--data", required=True)
    run.add_argument("--target", required=True)
    run.add_argument("--task", choices=("regression", "binary"), default="regression")
    run.add_argument("--ops", required=True, choices=OPERATOR_SETS)
    run.add_argument("--seeds", default=None,
                     help="comma-separated seeds (default: canonical ten)")
    run.add_argument("--pop", type=int, default=800)
    run.add_argument("--gen", type=int, default=100)
    run.add_argument("--out", required=True)
    run.add_argument("--anchors", default=None)
    run.add_argument("--name", default=None)
    run.add_argument("--topk", type=int, default=100)
    run.add_argument("--refine-top", dest="refine_top", type=int, default=0,
                     help="refine only the N best pool entries (<=0: whole pool)")
    run.add_argument("--test-fraction", dest="test_fraction", type=float,
                     default=DEFAULT_TEST_FRACTION)
    run.add_argument("--cv-weight", dest="cv_weight", type=float, default=0.0)
    run.add_argument("--merge-tolerance", dest="merge_tolerance", type=float, default=0.05)
    run.add_argument("--workers", type=int, default=0,
                     help="evaluation workers (default: %s env var or 1)" % WORKERS_ENV)
    run.set_defaults(fn=cmd_run)

    gen = sub.add_parser("gen-synth", help="generate a synthetic benchmark with ground truth")
    gen.add_argument("--kind", required=True, choices=KINDS)
    gen.add_argument("--n", type=int, default=2000)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--out", required=True, help="output path prefix")
    gen.set_defaults(fn=cmd_gen_synth)

    aud = sub.add_parser("audit", help="band exported thresholds against an anchor catalogue")
    aud.add_argument("--thresholds", required=True)
    aud.add_argument("--anchors", required=True)
    aud.add_argument("--out", required=True)
    aud.set_defaults(fn=cmd_audit)

    simp = sub.add_parser("simplify", help="re-simplify a pool export against a dataset")
    simp.add_argument("--pool", required=True)
    simp.add_argument("--data", required=True)
    simp.add_argument("--target", required=True)
    simp.add_argument("--task", choices=("regression", "binary"), default="regression")
    simp.add_argument("--ops", required=True, choices=OPERATOR_SETS)
    simp.add_argument("--merge-tolerance", dest="merge_tolerance", type=float, default=0.05)
    simp.add_argument("--out", required=True)
    simp.set_defaults(fn=cmd_simplify)

    plot = sub.add_parser("plotdata", help="merge run exports into plot-ready tables")
    plot.add_argument("--runs", nargs="+", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(fn=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print("data error: %s" % (exc,), file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print("data error: %s" % (exc,), file=sys.stderr)
        return EXIT_DATA
    except LgosrError as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
