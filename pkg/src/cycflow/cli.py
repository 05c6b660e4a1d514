"""Command-line entry point: ``cycflow run | build-artifacts | report | dump-task | validate-graph``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .experiment import (METHODS, PRESETS, EmptyTrainSplit, build_training_artifacts, load_config,
                         run_ablation, write_report)
from .gateway import GatewayError
from .graph import GraphError, TaskGraph, graph_statistics
from .orchestrator import ConfigError
from .textcraft import BENCHMARKS, TextCraftEnv, generate_task

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_EMPTY_TRAIN = 3
EXIT_GATEWAY = 4
EXIT_INVALID_GRAPH = 5


def _csv(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    p.add_argument("--methods", type=_csv, help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in _csv(s)], help="comma-separated seeds")
    p.add_argument("--tasks", type=lambda s: [int(x) for x in _csv(s)], help="explicit task ids")
    p.add_argument("--task-limit", type=int, dest="task_limit")
    p.add_argument("--partition", help="run slice i of k of the task list, as i/k")
    p.add_argument("--planner-tier")
    p.add_argument("--executor-tier")
    p.add_argument("--router-tier")
    p.add_argument("--react-tier")
    p.add_argument("--global-limit", type=int, dest="global_limit")
    p.add_argument("--local-limit", type=int, dest="local_limit")
    p.add_argument("--tool-exposure", dest="tool_exposure", choices=["generalist", "specialist"])
    p.add_argument("--n-shot", type=int, dest="n_shot", help="0 disables; -1 uses every frozen summary")
    p.add_argument("--fault-probability", type=float, dest="fault_probability")
    p.add_argument("--fault", action="store_true", default=None, dest="fault_enabled")
    p.add_argument("--record-states", action="store_true", default=None, dest="record_states")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--scripted", metavar="PATH", help="scripted oracle document; selects scripted mode")
    p.add_argument("--live", action="store_true", help="use the HTTP endpoint from the config")
    p.add_argument("--runs-dir", dest="runs_dir")
    p.add_argument("--artifacts-dir", dest="artifacts_dir")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--train-limit", type=int, dest="train_limit")


def _config_from_args(args: argparse.Namespace):
    overrides = {k: getattr(args, k, None) for k in (
        "benchmark", "methods", "seeds", "tasks", "task_limit", "partition", "global_limit", "local_limit",
        "tool_exposure", "n_shot", "fault_probability", "fault_enabled", "record_states", "concurrency",
        "runs_dir", "artifacts_dir", "run_id", "train_limit")}
    if args.scripted:
        overrides["gateway"], overrides["script"] = "scripted", args.scripted
    if args.live:
        overrides["gateway"] = "live"
    cfg = load_config(args.config, overrides=overrides)
    for role in ("planner", "executor", "router", "react"):
        tier = getattr(args, f"{role}_tier", None)
        if tier:
            cfg.tiers = {**cfg.tiers, role: tier}
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = run_ablation(cfg, args.preset, progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    print(f"run directory: {result.run_dir}")
    print(f"episodes run: {result.logs_written}, skipped (already logged): {result.logs_skipped}")
    print(result.report.main_table_csv(), end="")
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    art = build_training_artifacts(cfg, with_gen_graph=not args.no_graph)
    print(f"demo set: {art.demo_path} sha256={art.demo_hash} ({art.successes} summaries "
          f"from {len(art.train_ids)} train tasks)")
    if art.graph_path is not None:
        print(f"gen-cyc graph: {art.graph_path} sha256={art.graph_hash}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = write_report(args.run_dir)
    print(report.main_table_csv(), end="")
    if report.token_comparisons:
        print()
        print(report.token_table_csv(), end="")
    return EXIT_OK


def cmd_dump_task(args: argparse.Namespace) -> int:
    depth = BENCHMARKS[args.benchmark].depth
    task = generate_task(args.task_id, depth)
    text = task.dumps()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_validate_graph(args: argparse.Namespace) -> int:
    try:
        text = Path(args.path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.path}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR
    try:
        graph = TaskGraph.loads(text)
        graph.validate_tool_scopes(TextCraftEnv().tool_names())
    except (GraphError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid graph: {exc}", file=sys.stderr)
        return EXIT_INVALID_GRAPH
    n, words = graph_statistics(graph)
    print(json.dumps({"regime": graph.regime.value, "nodes": n, "criteria": len(graph.criteria),
                      "mean_criterion_words": round(words, 2), "sha256": graph.content_hash()}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycflow", description="Cyclic subtask-graph agent harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an ablation preset or an explicit configuration")
    p.add_argument("--preset", choices=PRESETS)
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("build-artifacts", help="freeze the n-shot summary set and the Gen-Cyc graph")
    _add_run_flags(p)
    p.add_argument("--no-graph", action="store_true", help="skip freezing the Gen-Cyc graph")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("report", help="recompute metrics from the logs of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump-task", help="write a TextCraft task fixture")
    p.add_argument("--benchmark", choices=sorted(BENCHMARKS), default="textcraft-2")
    p.add_argument("task_id", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_dump_task)

    p = sub.add_parser("validate-graph", help="lint a frozen graph file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_graph)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EmptyTrainSplit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_TRAIN
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as exc:
        print(f"gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY


if __name__ == "__main__":
    raise SystemExit(main())
