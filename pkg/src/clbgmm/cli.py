"""Command-line entry point.

Subcommands: synth (write a seeded synthetic dataset + manifest), run
(execute a manifest across its seeds), metrics (recompute the metric
series from a results file), oracle (union accuracy of two runs), report
(plot-ready CSV series). Exit codes: 0 success, 2 input/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .dataset import (
    SyntheticConfig,
    generate_synthetic,
    load_feature_table,
    parse_manifest,
    write_feature_table,
)
from .errors import NumericalError, ValidationError
from .metrics import relative_evolution
from .protocol import (
    aggregate,
    load_run_result,
    multi_seed,
    oracle_union_accuracy,
    save_run_result,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _default_manifest(out_dir: Path, dim_a: int, dim_b: int, tasks, seed: int) -> dict:
    return {
        "tasks": [{"name": t.name, "classes": list(t.class_labels)} for t in tasks],
        "modalities": [
            {"name": "mod_a", "path": str(out_dir / "mod_a.csv"), "dim": dim_a, "normalize": True},
            {"name": "mod_b", "path": str(out_dir / "mod_b.csv"), "dim": dim_b, "normalize": False},
        ],
        "fusion": {"strategy": "concat"},
        "bgmm": {"max_components": 10, "covariance_type": "diagonal"},
        "seeds": [seed],
        "output": str(out_dir / "results"),
    }


def cmd_synth(args) -> int:
    config = SyntheticConfig(
        n_basic_classes=args.basic,
        n_compound_classes=args.compound,
        dim_a=args.dim_a,
        dim_b=args.dim_b,
        samples_per_class_train=args.per_class_train,
        samples_per_class_test=args.per_class_test,
        cluster_spread=args.spread,
        modality_bias=args.bias,
    )
    table_a, table_b, tasks = generate_synthetic(config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_feature_table(table_a, out_dir / "mod_a.csv")
    write_feature_table(table_b, out_dir / "mod_b.csv")
    manifest = _default_manifest(out_dir, config.dim_a, config.dim_b, tasks, args.seed)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out_dir}/mod_a.csv, mod_b.csv, manifest.json "
          f"({len(tasks)} tasks, {config.n_basic_classes + config.n_compound_classes} classes)")
    return EXIT_OK


def cmd_run(args) -> int:
    manifest = parse_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    tables = [
        load_feature_table(spec.path, spec.dim, spec.name)
        for spec in manifest.modalities
    ]
    results, agg = multi_seed(manifest, tables)
    out_base = Path(args.out) if args.out else Path(manifest.output_path)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    for result in results:
        save_run_result(result, f"{out_base}_seed{result.seed}.json")
    Path(f"{out_base}_aggregate.json").write_text(
        json.dumps(agg.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    for result in results:
        final_aa = result.metrics().aa[-1]
        print(f"seed {result.seed}: final AA = {final_aa:.4f}")
    print(f"wrote {len(results)} result file(s) + aggregate at {out_base}_*.json")
    return EXIT_OK


def cmd_metrics(args) -> int:
    result = load_run_result(args.results)
    report = result.metrics()
    if args.format == "json":
        text = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    else:
        lines = ["k,AA,AIA,FM,IM"]
        for k in range(result.matrix.n_tasks):
            fm = "" if report.fm[k] is None else f"{report.fm[k]:.6f}"
            im = "" if report.im is None else f"{report.im[k]:.6f}"
            lines.append(f"{k + 1},{report.aa[k]:.6f},{report.aia[k]:.6f},{fm},{im}")
        lines.append(f"# final_macro={report.final_macro_accuracy:.6f} "
                     f"final_micro={report.final_micro_accuracy:.6f}")
        text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _final_predictions(result) -> dict:
    return {sid: (truth, pred) for sid, truth, pred in result.per_task_predictions[-1]}


def cmd_oracle(args) -> int:
    result_a = load_run_result(args.results_a)
    result_b = load_run_result(args.results_b)
    preds_a = _final_predictions(result_a)
    preds_b = _final_predictions(result_b)
    if set(preds_a) != set(preds_b):
        raise ValidationError("results cover different test sample ids")

    by_task_a = result_a.per_task_predictions[-1]
    tasks = result_a.matrix.task_names
    # group final-row predictions by owning task, in row order
    sizes = result_a.per_task_test_sizes
    offset = 0
    print("task,acc_a,acc_b,union")
    all_a, all_b, all_t = [], [], []
    for name, size in zip(tasks, sizes):
        chunk = by_task_a[offset:offset + size]
        offset += size
        truth = [t for _, t, _ in chunk]
        pa = [p for _, _, p in chunk]
        pb = [preds_b[sid][1] for sid, _, _ in chunk]
        acc_a = sum(p == t for p, t in zip(pa, truth)) / size
        acc_b = sum(p == t for p, t in zip(pb, truth)) / size
        union = oracle_union_accuracy(pa, pb, truth)
        print(f"{name},{acc_a:.6f},{acc_b:.6f},{union:.6f}")
        all_a.extend(pa)
        all_b.extend(pb)
        all_t.extend(truth)
    n = len(all_t)
    overall = oracle_union_accuracy(all_a, all_b, all_t)
    acc_a = sum(p == t for p, t in zip(all_a, all_t)) / n
    acc_b = sum(p == t for p, t in zip(all_b, all_t)) / n
    print(f"overall,{acc_a:.6f},{acc_b:.6f},{overall:.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.results:
        raise ValidationError("at least one results file is required")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [(Path(p).stem, load_run_result(p)) for p in args.results]

    for stem, result in loaded:
        t = result.matrix.n_tasks
        # per-task accuracy over time (one column per task)
        with (out_dir / f"{stem}_task_accuracy.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k"] + [f"acc_{name}" for name in result.matrix.task_names])
            for k in range(1, t + 1):
                row = [k] + [f"{result.matrix.get(k, j):.6f}" if j <= k else ""
                             for j in range(1, t + 1)]
                writer.writerow(row)
        report = result.metrics()
        with (out_dir / f"{stem}_metrics.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "AA", "AIA", "FM", "IM"])
            for k in range(t):
                writer.writerow([
                    k + 1,
                    f"{report.aa[k]:.6f}",
                    f"{report.aia[k]:.6f}",
                    "" if report.fm[k] is None else f"{report.fm[k]:.6f}",
                    "" if report.im is None else f"{report.im[k]:.6f}",
                ])

    # per-class correct counts side by side, plus a difference column for
    # the first two runs
    classes = sorted({c for _, r in loaded for c in r.per_class_correct_counts})
    with (out_dir / "per_class_correct.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["class"] + [stem for stem, _ in loaded]
        if len(loaded) >= 2:
            header.append(f"{loaded[0][0]}_minus_{loaded[1][0]}")
        writer.writerow(header)
        for cls in classes:
            counts = [r.per_class_correct_counts.get(cls, 0) for _, r in loaded]
            row = [cls] + counts
            if len(loaded) >= 2:
                row.append(counts[0] - counts[1])
            writer.writerow(row)

    if len(loaded) >= 2:
        # relative evolution of the first run against each other run
        merged = loaded[0][1].metrics().final_micro_accuracy
        with (out_dir / "relative_evolution.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["baseline", "merged_final", "baseline_final", "relative_evolution"])
            for stem, result in loaded[1:]:
                base = result.metrics().final_micro_accuracy
                writer.writerow([stem, f"{merged:.6f}", f"{base:.6f}",
                                 f"{relative_evolution(merged, base):.6f}"])
    print(f"wrote report CSVs to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clbgmm",
        description="Class-incremental learning with class-conditional Bayesian Gaussian mixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic two-modality dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--basic", type=int, default=4)
    p.add_argument("--compound", type=int, default=4)
    p.add_argument("--dim-a", type=int, default=2, dest="dim_a")
    p.add_argument("--dim-b", type=int, default=2, dest="dim_b")
    p.add_argument("--per-class-train", type=int, default=30, dest="per_class_train")
    p.add_argument("--per-class-test", type=int, default=10, dest="per_class_test")
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run a manifest across its seeds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="compute metric series from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("oracle", help="union accuracy of two runs")
    p.add_argument("--results-a", required=True, dest="results_a")
    p.add_argument("--results-b", required=True, dest="results_b")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="emit plot-ready CSV series")
    p.add_argument("--results", nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
