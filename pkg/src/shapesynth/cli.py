"""Command-line entry point.

Subcommands: sample (survey sampling), run (full two-level pipeline),
evaluate (metric report), rank (composite scores and tiers). Exit codes:
0 success, 2 schema/usage errors, 3 data/infeasibility errors, 4 internal.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import pandas as pd

from . import pipeline
from .errors import SchemaError, ShapeSynthError
from .evaluate import (
    composite_from_deviations,
    composite_scores,
    evaluate_estimates,
    rank_models,
)
from .harmonize import (
    RecodeSpec,
    filter_by_region,
    load_survey,
    stratified_sample,
    write_survey_csv,
)
from .pipeline import PipelineConfig, run_shape, write_json_atomic

log = logging.getLogger(__name__)


def _require(path: str, label: str) -> str:
    if not os.path.exists(path):
        raise SchemaError(f"{label} not found: {path}")
    return path


def _write_manifest(command: str, out_dir: str, inputs, outputs, seed, options):
    doc = {
        "tool": "shapesynth",
        "version": pipeline.TOOL_VERSION,
        "command": command,
        "seed": seed,
        "options": options,
        "inputs": {p: pipeline._sha256_file(p) for p in inputs},
        "outputs": {p: pipeline._sha256_file(p) for p in outputs},
        "status": "ok",
    }
    write_json_atomic(doc, os.path.join(out_dir, f"{command}_manifest.json"))


def cmd_sample(args) -> int:
    spec = RecodeSpec.from_json(_require(args.recode, "recode spec"))
    survey = load_survey(_require(args.survey, "survey"), spec)
    if args.mode == "stratified":
        strata = args.strata.split(",") if args.strata else list(spec.variable_names)
        sampled = stratified_sample(survey, strata, args.target_n, args.seed)
    else:
        if not args.region:
            raise SchemaError("--region is required with --mode region")
        column = args.region_column or (spec.keep_columns[0] if spec.keep_columns else "")
        if not column:
            raise SchemaError("no region column: pass --region-column or keep_columns")
        sampled = filter_by_region(survey, column, args.region)
    write_survey_csv(sampled, spec, args.out)
    _write_manifest(
        "sample",
        os.path.dirname(os.path.abspath(args.out)),
        [args.recode, args.survey],
        [args.out],
        args.seed,
        {"mode": args.mode, "target_n": args.target_n, "region": args.region,
         "rows": sampled.n_records, "dropped_at_load": survey.dropped_rows},
    )
    print(f"wrote {sampled.n_records} rows to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.from_json(_require(args.config, "config"))
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    if args.scale is not None:
        config.scale = args.scale
        if config.scale not in config.marginals_csv:
            raise SchemaError(f"config has no marginals for scale {config.scale!r}")
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    result = run_shape(
        config, manifest_extra={"config_digest": pipeline._sha256_file(args.config)}
    )
    print(
        f"run complete: {result.level1.weights.n_zones} zone(s), "
        f"outputs in {result.output_dir}"
    )
    return 0


def cmd_evaluate(args) -> int:
    estimates = pd.read_csv(_require(args.estimates, "estimates"))
    reference = pd.read_csv(_require(args.reference, "reference"))
    if estimates.empty:
        raise SchemaError(f"estimates file {args.estimates} has no rows")
    report = evaluate_estimates(estimates, reference)
    report.to_csv(args.out, index=False)
    _write_manifest(
        "evaluate",
        os.path.dirname(os.path.abspath(args.out)),
        [args.estimates, args.reference],
        [args.out],
        None,
        {"rows": len(report)},
    )
    print(f"wrote {len(report)} metric record(s) to {args.out}")
    return 0


def cmd_rank(args) -> int:
    if args.deviations:
        dev = pd.read_csv(_require(args.deviations, "deviation grid"))
        if dev.empty:
            raise SchemaError(f"deviation grid {args.deviations} has no rows")
        report = composite_from_deviations(dev)
        inputs = [args.deviations]
    else:
        metrics = pd.read_csv(_require(args.metrics, "metric grid"))
        if metrics.empty:
            raise SchemaError(f"metric grid {args.metrics} has no rows")
        report = composite_scores(metrics)
        inputs = [args.metrics]
    tiers = rank_models(report, threshold=args.threshold, moderate=args.moderate)
    composites_path = f"{args.out_prefix}_composites.csv"
    ranking_path = f"{args.out_prefix}_ranking.csv"
    report.composites.to_csv(composites_path, index=False)
    tiers.to_csv(ranking_path, index=False)
    _write_manifest(
        "rank",
        os.path.dirname(os.path.abspath(composites_path)) or ".",
        inputs,
        [composites_path, ranking_path],
        None,
        {"threshold": args.threshold, "moderate": args.moderate},
    )
    print(f"wrote {composites_path} and {ranking_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapesynth",
        description="Spatial microsimulation small-area estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="stratified or region-filtered survey sample")
    p.add_argument("--survey", required=True)
    p.add_argument("--recode", required=True)
    p.add_argument("--mode", choices=["stratified", "region"], required=True)
    p.add_argument("--target-n", type=int, default=0)
    p.add_argument("--strata", default="", help="comma list; default all variables")
    p.add_argument("--region", default="")
    p.add_argument("--region-column", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("run", help="execute the full two-level pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--scale", choices=["county", "tract"], default=None)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score estimates against a reference set")
    p.add_argument("--estimates", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="composite scores and reliability tiers")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--deviations", default="")
    group.add_argument("--metrics", default="")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--moderate", type=float, default=None)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapeSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - internal faults
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
