"""Command-line entry point.

Every pipeline stage is a subcommand; a JSON config file provides the
defaults and any flag given on the command line overrides it. The resolved
config is written into the run directory alongside the artifacts.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import graph as graph_mod
from .pipeline import (MissingStageError, PipelineConfig, emit_plot_data,
                       run_all, run_stage)


def _base_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.load(args.config)
    else:
        if not getattr(args, "input", None) and not getattr(args, "out", None):
            raise SystemExit("either --config or --input/--out is required")
        cfg = PipelineConfig(input_path=getattr(args, "input", None) or "",
                             output_dir=getattr(args, "out", None) or "run")
    if getattr(args, "input", None):
        cfg = replace(cfg, input_path=args.input)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed,
                      lasso=replace(cfg.lasso, seed=None),
                      nmf=replace(cfg.nmf, seed=None))
    return cfg


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    ingest_over = {}
    for flag, name in [("encoding", "encoding"),
                       ("cancellation_prefix", "cancellation_prefix"),
                       ("min_purchases", "frequent_min_purchases"),
                       ("wholesale_threshold", "wholesale_quantity_threshold")]:
        value = getattr(args, flag, None)
        if value is not None:
            ingest_over[name] = value
    if ingest_over:
        cfg = replace(cfg, ingest=replace(cfg.ingest, **ingest_over))

    rfm_over = {}
    for flag, name in [("w_recency", "w_recency"), ("w_frequency", "w_frequency"),
                       ("w_monetary", "w_monetary")]:
        value = getattr(args, flag, None)
        if value is not None:
            rfm_over[name] = value
    if rfm_over:
        cfg = replace(cfg, rfm=replace(cfg.rfm, **rfm_over))

    lasso_over = {}
    for flag, name in [("alpha_grid", "alpha_grid"), ("folds", "folds"),
                       ("slack", "slack")]:
        value = getattr(args, flag, None)
        if value is not None:
            lasso_over[name] = tuple(value) if flag == "alpha_grid" else value
    if lasso_over:
        cfg = replace(cfg, lasso=replace(cfg.lasso, **lasso_over))

    nmf_over = {}
    for flag, name in [("k", "k"), ("alpha_m", "alpha_m"), ("l1_ratio", "l1_ratio"),
                       ("k_min", "k_min"), ("k_max", "k_max")]:
        value = getattr(args, flag, None)
        if value is not None:
            nmf_over[name] = value
    if getattr(args, "k", None) is not None:
        nmf_over["use_grid_best"] = False
    if nmf_over:
        cfg = replace(cfg, nmf=replace(cfg.nmf, **nmf_over))

    cluster_over = {}
    if getattr(args, "min_cluster_size", None) is not None:
        cluster_over["min_cluster_size"] = args.min_cluster_size
    if getattr(args, "row_normalize", False):
        cluster_over["row_normalize"] = True
    if cluster_over:
        cfg = replace(cfg, cluster=replace(cfg.cluster, **cluster_over))

    if getattr(args, "threshold", None) is not None:
        cfg = replace(cfg, graph=replace(cfg.graph, affinity_threshold=args.threshold))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shoplens",
        description="Frequent-shopper characterization pipeline")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed applied to every stage")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", help="invoice-line CSV (ingest input)")
        p.add_argument("--out", help="run directory")
        return p

    p = add_stage("ingest", "parse, clean, segment, build the incidence matrix")
    p.add_argument("--encoding")
    p.add_argument("--cancellation-prefix", dest="cancellation_prefix")
    p.add_argument("--min-purchases", dest="min_purchases", type=int)
    p.add_argument("--wholesale-threshold", dest="wholesale_threshold", type=int)

    p = add_stage("rfm", "score customer value and fit the normalizing transform")
    p.add_argument("--w-recency", dest="w_recency", type=float)
    p.add_argument("--w-frequency", dest="w_frequency", type=float)
    p.add_argument("--w-monetary", dest="w_monetary", type=float)

    p = add_stage("select-features", "LASSO feature selection")
    p.add_argument("--alpha-grid", dest="alpha_grid", type=float, nargs="+")
    p.add_argument("--folds", type=int)
    p.add_argument("--slack", type=float)

    p = add_stage("grid-search", "NMF hyperparameter search by imputation error")
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)

    p = add_stage("factorize", "fit the purchase dictionary and affinities")
    p.add_argument("--k", type=int, help="latent dimension (skips grid best)")
    p.add_argument("--alpha-m", dest="alpha_m", type=float)
    p.add_argument("--l1-ratio", dest="l1_ratio", type=float)

    p = add_stage("cluster", "density-cluster the affinity rows")
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    p.add_argument("--row-normalize", dest="row_normalize", action="store_true")

    p = add_stage("export-graph", "export bipartite graphs with embeddings")
    p.add_argument("--kind", choices=["purchase", "affinity", "both"], default="both")
    p.add_argument("--threshold", type=float, help="minimum affinity edge weight")

    p = add_stage("run-all", "run every stage in order")
    p.add_argument("--alpha-grid", dest="alpha_grid", type=float, nargs="+")
    p.add_argument("--folds", type=int)
    p.add_argument("--slack", type=float)
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    p.add_argument("--row-normalize", dest="row_normalize", action="store_true")

    p = sub.add_parser("query-similar", help="rank nodes by embedding similarity")
    p.add_argument("--out", help="run directory", required=False)
    p.add_argument("--node", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--graph", choices=["purchase", "affinity"], default="affinity")

    p = sub.add_parser("plot-data", help="emit plot-ready data for a figure")
    p.add_argument("--out", help="run directory", required=False)
    p.add_argument("--kind", required=True)
    p.add_argument("--file", required=True, help="output file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    try:
        if args.command == "query-similar":
            cfg = _base_config(args)
            run_dir = Path(cfg.output_dir)
            doc = graph_mod.import_jsonl(
                run_dir / "graph" / f"{args.graph}_nodes.jsonl",
                run_dir / "graph" / f"{args.graph}_edges.jsonl")
            for node_id, score in graph_mod.similar_nodes(doc, args.node, args.top):
                print(f"{node_id}\t{score:.6f}")
            return 0

        if args.command == "plot-data":
            cfg = _base_config(args)
            path = emit_plot_data(cfg.output_dir, args.kind, args.file)
            print(f"wrote {path}")
            return 0

        cfg = _apply_overrides(_base_config(args), args)
        if args.command == "run-all":
            for entry in run_all(cfg):
                print(f"[{entry['name']}] {json.dumps(entry['metrics'], sort_keys=True)}")
        elif args.command == "export-graph":
            kinds = ("purchase", "affinity") if args.kind == "both" else (args.kind,)
            entry = run_stage("export-graph", cfg, kinds=kinds)
            print(f"[{entry['name']}] {json.dumps(entry['metrics'], sort_keys=True)}")
        else:
            entry = run_stage(args.command, cfg)
            print(f"[{entry['name']}] {json.dumps(entry['metrics'], sort_keys=True)}")
        return 0
    except MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
