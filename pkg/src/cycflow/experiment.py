"""Run configuration, ablation presets A1-A6, sweep scheduling and training artifacts.

Configuration precedence is file < environment (``CYCFLOW_*``) < command-line
flags. A run directory holds ``manifest.json`` plus one log per
(method variant, task, seed); re-running the same configuration skips
episodes whose log already exists.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from . import agents, orchestrator, scripted
from .gateway import GatewayConfig, GatewayError, HttpBackend, ModelSession
from .graph import TaskGraph
from .metrics import MetricsReport, compute_report
from .orchestrator import AgentConfig, BudgetConfig, ConfigError, FaultInjectionConfig
from .records import DemoSet, EpisodeLog, Outcome
from .textcraft import BENCHMARKS, CraftingTask, TextCraftEnv, benchmark_split, generate_task

log = logging.getLogger(__name__)

METHODS = ("react", "depdag", "speccyc", "gencyc")
PRESETS = ("A1", "A2", "A3", "A4", "A5", "A6")
DEFAULT_TIER = "gpt-4o-mini"
DEFAULT_TIER_GRID = (
    {"planner": "gpt-4o-mini", "executor": "gpt-4o-mini", "router": "gpt-4o-mini"},
    {"planner": "gpt-5-mini", "executor": "gpt-4o-mini", "router": "gpt-4o-mini"},
    {"planner": "gpt-4o-mini", "executor": "gpt-5-mini", "router": "gpt-5-mini"},
    {"planner": "gpt-5-mini", "executor": "gpt-5-mini", "router": "gpt-5-mini"},
)


class EmptyTrainSplit(ConfigError):
    pass


@dataclass
class RunConfig:
    benchmark: str = "textcraft-2"
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    tiers: dict[str, str] = field(default_factory=lambda: {
        "planner": DEFAULT_TIER, "executor": DEFAULT_TIER, "router": DEFAULT_TIER, "react": DEFAULT_TIER})
    tier_grid: list[dict[str, str]] = field(default_factory=lambda: [dict(t) for t in DEFAULT_TIER_GRID])
    global_limit: int | None = None
    local_limit: int | None = None
    tool_exposure: str = agents.GENERALIST_EXPOSURE
    n_shot: int = 0                     # 0: off; otherwise at most n summaries (-1: all)
    fault_enabled: bool = False
    fault_probability: float = 0.5
    fault_seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    tasks: list[int] | None = None      # default: the benchmark's test split
    task_limit: int | None = None
    partition: str | None = None        # "i/k": run the i-th of k contiguous slices (1-based)
    train_limit: int | None = None
    record_states: bool = False
    concurrency: int = 4
    gateway: str = "scripted"           # scripted | live
    script: str | dict[str, Any] | None = None
    gateway_config: dict[str, Any] = field(default_factory=dict)
    memory_chars: int = 4000
    runs_dir: str = "runs"
    artifacts_dir: str = "artifacts"
    run_id: str | None = None

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; choose from {sorted(BENCHMARKS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.tool_exposure not in (agents.GENERALIST_EXPOSURE, agents.SPECIALIST_EXPOSURE):
            raise ConfigError(f"tool_exposure must be generalist or specialist, got {self.tool_exposure!r}")
        if self.gateway not in ("scripted", "live"):
            raise ConfigError("gateway must be scripted or live")
        if self.gateway == "scripted" and self.script is None:
            raise ConfigError("scripted mode needs a script (path or document)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.partition is not None:
            parse_partition(self.partition)
        self.budgets()
        FaultInjectionConfig(self.fault_enabled, self.fault_probability, self.fault_seed)

    def budgets(self) -> BudgetConfig:
        info = BENCHMARKS[self.benchmark]
        return BudgetConfig(self.global_limit or info.global_limit, self.local_limit or info.local_limit)

    def fault(self) -> FaultInjectionConfig:
        return FaultInjectionConfig(self.fault_enabled, self.fault_probability, self.fault_seed)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        data = self.to_dict()
        for k in ("concurrency", "runs_dir", "run_id", "gateway_config"):
            data.pop(k, None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


ENV_OVERRIDES: dict[str, tuple[str, Callable[[str], Any]]] = {
    "CYCFLOW_BENCHMARK": ("benchmark", str),
    "CYCFLOW_METHODS": ("methods", lambda v: [m.strip() for m in v.split(",") if m.strip()]),
    "CYCFLOW_SEEDS": ("seeds", lambda v: [int(s) for s in v.split(",") if s.strip()]),
    "CYCFLOW_CONCURRENCY": ("concurrency", int),
    "CYCFLOW_GATEWAY": ("gateway", str),
    "CYCFLOW_SCRIPT": ("script", str),
    "CYCFLOW_RUNS_DIR": ("runs_dir", str),
    "CYCFLOW_ARTIFACTS_DIR": ("artifacts_dir", str),
}


def load_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None,
                overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data.update(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    env = os.environ if environ is None else environ
    for var, (key, conv) in ENV_OVERRIDES.items():
        if env.get(var):
            try:
                data[key] = conv(env[var])
            except ValueError as exc:
                raise ConfigError(f"{var}: {exc}") from None
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig.from_mapping(data)
    return cfg


def parse_partition(text: str) -> tuple[int, int]:
    try:
        i, k = (int(x) for x in text.split("/"))
    except ValueError:
        raise ConfigError(f"partition must look like i/k, got {text!r}") from None
    if not 1 <= i <= k:
        raise ConfigError(f"partition index out of range: {text}")
    return i, k


def evaluation_task_ids(cfg: RunConfig) -> list[int]:
    ids = list(cfg.tasks) if cfg.tasks is not None else benchmark_split(cfg.benchmark)[1]
    if cfg.partition:
        i, k = parse_partition(cfg.partition)
        size = -(-len(ids) // k)
        ids = ids[(i - 1) * size: i * size]
    if cfg.task_limit is not None:
        ids = ids[: cfg.task_limit]
    return ids


# -- cells --------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    """One method under one configuration variant."""

    method: str
    tiers: tuple[tuple[str, str], ...]
    tool_exposure: str
    n_shot: int
    fault: FaultInjectionConfig
    record_states: bool
    variant: str = ""

    @property
    def label(self) -> str:
        return self.method + (f"__{self.variant}" if self.variant else "")

    @property
    def tier_map(self) -> dict[str, str]:
        return dict(self.tiers)

    @property
    def tiers_label(self) -> str:
        t = self.tier_map
        if self.method == "react":
            return t.get("react", DEFAULT_TIER)
        return "/".join(t.get(r, DEFAULT_TIER) for r in ("planner", "executor", "router"))


def _tiers(t: Mapping[str, str]) -> tuple[tuple[str, str], ...]:
    full = dict(t)
    full.setdefault("analyzer", full.get("router", DEFAULT_TIER))
    full.setdefault("summarizer", full.get("planner", DEFAULT_TIER))
    return tuple(sorted(full.items()))


def apply_preset(cfg: RunConfig, preset: str | None) -> tuple[RunConfig, list[Cell]]:
    """Force the preset's fixed settings and expand it into cells."""
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {list(PRESETS)}")
    cfg = dataclasses.replace(cfg)
    no_fault = FaultInjectionConfig(False, cfg.fault_probability, cfg.fault_seed)
    cells: list[Cell] = []

    def cell(method: str, tiers: Mapping[str, str] | None = None, exposure: str | None = None,
             fault: FaultInjectionConfig | None = None, n_shot: int | None = None, variant: str = "") -> Cell:
        return Cell(method, _tiers(tiers or cfg.tiers), exposure or cfg.tool_exposure,
                    cfg.n_shot if n_shot is None else n_shot, fault or cfg.fault(), cfg.record_states, variant)

    cyclic = [m for m in cfg.methods if m in ("speccyc", "gencyc")] or ["speccyc", "gencyc"]
    if preset is None:
        cells = [cell(m) for m in cfg.methods]
    elif preset == "A1":
        cfg.n_shot, cfg.fault_enabled = 0, False
        cells = [cell(m, fault=no_fault, n_shot=0) for m in cfg.methods]
    elif preset == "A2":
        cfg.n_shot, cfg.fault_enabled = 0, False
        for t in cfg.tier_grid:
            tag = "tiers-" + "-".join(t.get(r, DEFAULT_TIER) for r in ("planner", "executor", "router"))
            merged = {**cfg.tiers, **t}
            cells += [cell(m, tiers=merged, fault=no_fault, n_shot=0, variant=tag) for m in cyclic]
    elif preset == "A3":
        cfg.n_shot = cfg.n_shot or -1
        cfg.fault_enabled = False
        cells = [cell(m, fault=no_fault, n_shot=cfg.n_shot) for m in cfg.methods if m != "react"]
    elif preset == "A4":
        cfg.n_shot, cfg.fault_enabled = 0, False
        for exposure in (agents.GENERALIST_EXPOSURE, agents.SPECIALIST_EXPOSURE):
            cells += [cell(m, exposure=exposure, fault=no_fault, n_shot=0, variant=exposure) for m in cyclic]
    elif preset == "A5":
        cfg.n_shot, cfg.fault_enabled, cfg.fault_probability = 0, True, 0.5
        faulty = FaultInjectionConfig(True, 0.5, cfg.fault_seed)
        cells = [cell(m, fault=faulty, n_shot=0) for m in cyclic]
    elif preset == "A6":
        cfg.n_shot, cfg.fault_enabled, cfg.record_states = 0, False, True
        wanted = [m for m in cfg.methods if m in ("react", "speccyc", "gencyc")]
        if "react" not in wanted:
            wanted.insert(0, "react")
        cells = [dataclasses.replace(cell(m, fault=no_fault, n_shot=0), record_states=True) for m in wanted]
    return cfg, cells


# -- episode execution --------------------------------------------------------

class Runner:
    """Builds sessions and runs single episodes for a validated configuration."""

    def __init__(self, cfg: RunConfig, base_dir: str | Path = ".") -> None:
        cfg.validate()
        self.cfg = cfg
        self.base = Path(base_dir)
        self.budgets = cfg.budgets()
        self.depth = BENCHMARKS[cfg.benchmark].depth
        self._factories: dict[str, scripted.BackendFactory] = {}
        self._http: HttpBackend | None = None
        self._demos: dict[int, tuple[list, str | None]] = {}

    def _path(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    # backends
    def backend(self, task: CraftingTask | None, seed: int, method: str, exposure: str) -> Any:
        if self.cfg.gateway == "live":
            if self._http is None:
                self._http = HttpBackend(GatewayConfig.from_mapping(self.cfg.gateway_config))
            return self._http
        if exposure not in self._factories:
            script = self.cfg.script
            doc = script if isinstance(script, dict) else scripted.load_script(self._path(str(script)))
            self._factories[exposure] = scripted.backend_factory(doc, self.cfg.benchmark, exposure)
        return self._factories[exposure](task, seed, method)

    def session(self, cell: Cell, task: CraftingTask | None, seed: int) -> ModelSession:
        return ModelSession(self.backend(task, seed, cell.method, cell.tool_exposure), cell.tier_map)

    # artifacts
    def demo_path(self) -> Path:
        return self._path(self.cfg.artifacts_dir) / self.cfg.benchmark / "demos.json"

    def demos(self, n_shot: int) -> tuple[list, str | None]:
        if n_shot == 0:
            return [], None
        if n_shot not in self._demos:
            path = self.demo_path()
            if not path.exists():
                raise ConfigError(f"n-shot enabled but no frozen demo set at {path}; run build-artifacts first")
            text = path.read_text(encoding="utf-8")
            entries = DemoSet.loads(text).entries
            if n_shot > 0:
                entries = entries[:n_shot]
            self._demos[n_shot] = (entries, hashlib.sha256(text.encode()).hexdigest())
        return self._demos[n_shot]

    def graph_cache(self) -> agents.GraphCache:
        return agents.GraphCache(self._path(self.cfg.artifacts_dir) / "graphs")

    def gen_cyc_graph(self, cell: Cell) -> tuple[TaskGraph, str]:
        demos, demo_hash = self.demos(cell.n_shot)
        key = f"{cell.tool_exposure}__{cell.tier_map.get('planner', DEFAULT_TIER)}__nshot-{cell.n_shot}"
        session = self.session(cell, None, 0)
        env = TextCraftEnv(self.depth)
        return agents.plan_gen_cyc(session, self.cfg.benchmark, demos, env.tool_names(), cell.tool_exposure,
                                   cache=self.graph_cache(), cache_key=key)

    # episodes
    def metadata(self, cell: Cell, task: CraftingTask, seed: int) -> dict[str, Any]:
        _, demo_hash = self.demos(cell.n_shot)
        return {
            "method": cell.method,
            "benchmark": self.cfg.benchmark,
            "task_id": task.task_id,
            "seed": seed,
            "objective": task.objective(),
            "tiers": cell.tier_map,
            "tiers_label": cell.tiers_label,
            "tool_exposure": cell.tool_exposure,
            "n_shot": cell.n_shot != 0,
            "n_shot_limit": cell.n_shot,
            "demo_set_hash": demo_hash,
            "gateway": self.cfg.gateway,
            "record_states": cell.record_states,
            "variant": cell.variant,
        }

    def run_episode(self, cell: Cell, task_id: int, seed: int,
                    gen_graph: tuple[TaskGraph, str] | None = None) -> EpisodeLog:
        task = generate_task(task_id, self.depth)
        env = TextCraftEnv(self.depth, tasks={task_id: task}, record_states=cell.record_states)
        session = self.session(cell, task, seed)
        meta = self.metadata(cell, task, seed)
        agent_cfg = AgentConfig(memory_chars=self.cfg.memory_chars)
        demos, _ = self.demos(cell.n_shot)
        if cell.method == "react":
            return orchestrator.run_react_episode(env, self.budgets, session, task_id, seed, agent_cfg, meta)
        env.reset(task_id)
        notes: list[str] = []
        try:
            if cell.method == "depdag":
                plan = agents.plan_dep_dag(session, task.objective(), self.cfg.benchmark, demos)
                return orchestrator.run_depdag_episode(plan, env, self.budgets, session, task_id, seed,
                                                       agent_cfg, meta)
            if cell.method == "speccyc":
                graph = agents.plan_spec_cyc(session, task.objective(), self.cfg.benchmark, demos,
                                             env.tool_names(), cell.tool_exposure, notes=notes)
                meta["graph_hash"] = graph.content_hash()
            else:
                assert gen_graph is not None
                graph, meta["graph_hash"] = gen_graph
        except (agents.PlannerFailure, GatewayError) as exc:
            return EpisodeLog(meta, None, [], [], Outcome.ABORTED, session.ledger.snapshot(),
                              events=[f"aborted: {type(exc).__name__}: {exc}"])
        lg = orchestrator.run_cyclic_episode(graph, env, self.budgets, cell.fault, session, task_id, seed,
                                             agent_cfg, meta)
        lg.events[:0] = notes
        return lg


@dataclass
class RunResult:
    run_dir: Path
    logs_written: int
    logs_skipped: int
    report: MetricsReport


def run_ablation(cfg: RunConfig, preset: str | None = None, base_dir: str | Path = ".",
                 progress: Callable[[str], None] | None = None) -> RunResult:
    """Execute the method x seed x test-task grid, write logs and the report."""
    cfg, cells = apply_preset(cfg, preset)
    runner = Runner(cfg, base_dir)
    run_id = cfg.run_id or f"{cfg.benchmark}_{preset or 'custom'}_{cfg.config_hash()[:10]}"
    run_dir = runner._path(cfg.runs_dir) / run_id
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if old.get("config_hash") != cfg.config_hash():
            raise ConfigError(f"{run_dir} holds a run with a different configuration")
    task_ids = evaluation_task_ids(cfg)
    train_ids = set(benchmark_split(cfg.benchmark)[0])

    gen_graphs: dict[str, tuple[TaskGraph, str]] = {}
    demo_hashes: dict[str, str | None] = {}
    for c in cells:
        demo_hashes[c.label] = runner.demos(c.n_shot)[1]
        if c.method == "gencyc":
            gen_graphs[c.label] = runner.gen_cyc_graph(c)

    manifest = {
        "run_id": run_id,
        "preset": preset,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "cells": [c.label for c in cells],
        "graph_hashes": {k: h for k, (_, h) in sorted(gen_graphs.items())},
        "demo_set_hashes": demo_hashes,
        "test_task_ids": task_ids,
        "train_overlap": sorted(train_ids.intersection(task_ids)) if cfg.tasks is None else [],
    }
    orchestrator.write_manifest(run_dir, manifest)

    jobs = []
    skipped = 0
    for c in cells:
        for task_id in task_ids:
            for seed in cfg.seeds:
                if orchestrator.log_path(run_dir, c.label, task_id, seed).exists():
                    skipped += 1
                    continue
                jobs.append((c, task_id, seed))

    def work(job: tuple[Cell, int, int]) -> None:
        c, task_id, seed = job
        lg = runner.run_episode(c, task_id, seed, gen_graphs.get(c.label))
        orchestrator.write_log(run_dir, c.label, lg)
        if progress:
            progress(f"{c.label} task={task_id} seed={seed} {lg.outcome} k={lg.k_final}")

    if cfg.concurrency == 1:
        for job in jobs:
            work(job)
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            for _ in pool.map(work, jobs):
                pass

    report = write_report(run_dir)
    return RunResult(run_dir, len(jobs), skipped, report)


def write_report(run_dir: str | Path) -> MetricsReport:
    run_dir = Path(run_dir)
    report = compute_report(orchestrator.read_logs(run_dir))
    orchestrator.atomic_write(run_dir / "report.json", report.dumps())
    orchestrator.atomic_write(run_dir / "report_main.csv", report.main_table_csv())
    orchestrator.atomic_write(run_dir / "report_tokens.csv", report.token_table_csv())
    return report


@dataclass
class TrainingArtifacts:
    demo_path: Path
    demo_hash: str
    graph_path: Path | None
    graph_hash: str | None
    train_ids: list[int]
    successes: int


def build_training_artifacts(cfg: RunConfig, base_dir: str | Path = ".", seed: int = 0,
                             with_gen_graph: bool = True) -> TrainingArtifacts:
    """Run Spec-Cyc over the train split, freeze the summaries, then freeze the n-shot Gen-Cyc graph."""
    cfg = dataclasses.replace(cfg, n_shot=0, fault_enabled=False)
    runner = Runner(cfg, base_dir)
    train_ids, test_ids = benchmark_split(cfg.benchmark)
    if not train_ids:
        raise EmptyTrainSplit(f"{cfg.benchmark} has no training split; every task is used for evaluation")
    if cfg.train_limit is not None:
        train_ids = train_ids[: cfg.train_limit]
    cell = Cell("speccyc", _tiers(cfg.tiers), cfg.tool_exposure, 0, cfg.fault(), False)

    def episode(task_id: int) -> tuple[EpisodeLog, ModelSession]:
        lg = runner.run_episode(cell, task_id, seed)
        return lg, runner.session(cell, generate_task(task_id, runner.depth), seed)

    demo_set = agents.build_nshot_set(cfg.benchmark, train_ids, episode, test_ids=test_ids)
    path = runner.demo_path()
    orchestrator.atomic_write(path, demo_set.dumps())
    manifest: dict[str, Any] = {
        "benchmark": cfg.benchmark,
        "train_ids": train_ids,
        "demo_set_hash": demo_set.content_hash(),
        "zero_shot": demo_set.zero_shot,
        "source_task_ids": [d.source_task_id for d in demo_set.entries],
    }
    graph_path = graph_hash = None
    if with_gen_graph:
        runner._demos.clear()
        gcell = dataclasses.replace(cell, method="gencyc", n_shot=-1)
        _, graph_hash = runner.gen_cyc_graph(gcell)
        key = f"{gcell.tool_exposure}__{gcell.tier_map.get('planner', DEFAULT_TIER)}__nshot--1"
        graph_path = runner.graph_cache().path(cfg.benchmark, key)
        manifest["gen_cyc_graph_hash"] = graph_hash
    orchestrator.atomic_write(path.parent / "artifacts_manifest.json",
                              json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return TrainingArtifacts(path, demo_set.content_hash(), graph_path, graph_hash, train_ids,
                             len(demo_set.entries))
