"""Episode drivers for Spec-Cyc/Gen-Cyc, DepDAG and ReAct, plus fault injection.

State between segments is ``(k, current_index, last_segment, memory)``. After
each segment ``k`` grows by the segment's tool-call count; the episode stops as
soon as the environment reports success or ``k`` reaches the global limit.
"""

from __future__ import annotations

import json
import os
import random
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import agents
from .environment import Environment, ToolCallRecord
from .gateway import GatewayError, ModelSession
from .graph import DepDagPlan, TaskGraph, outgoing_criteria
from .prompts import PROMPT_VERSION
from .records import (EndedBy, EpisodeLog, FaultEvent, Outcome, RouterDecision, RouterMemory,
                      SegmentRecord)

# Behaviours the log records so every run states how ambiguous cases were handled.
RUN_FLAGS = {
    "start_node": 0,
    "analyzer_router_calls": "two",
    "fault_redirect_ends_segment": True,
    "fault_segment_updates_memory": True,
    "malformed_calls_counted": True,
    "token_ledger_budgeted": False,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetConfig:
    global_limit: int
    local_limit: int = 5

    def __post_init__(self) -> None:
        if not 1 <= self.local_limit <= self.global_limit:
            raise ConfigError(f"need 1 <= C_l <= C_g, got C_l={self.local_limit}, C_g={self.global_limit}")


@dataclass(frozen=True)
class FaultInjectionConfig:
    enabled: bool = False
    probability: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("fault probability must lie in [0, 1]")

    def episode_rng(self, task_id: Any, seed: int) -> random.Random:
        # string seeds hash through sha512, stable across processes and platforms
        return random.Random(f"fault:{self.rng_seed}:{task_id}:{seed}")


@dataclass
class EpisodeState:
    k: int = 0
    current_index: int = 0
    last_segment: SegmentRecord | None = None
    memory: RouterMemory = field(default_factory=RouterMemory)

    def advance(self, segment: SegmentRecord) -> None:
        self.k += segment.delta_k
        self.last_segment = segment


@dataclass
class AgentConfig:
    """Per-episode agent settings shared by every method."""

    memory_chars: int = 4000
    stall_limit: int = 2
    max_segments: int | None = None  # default 2 * C_g + 10

    def segment_cap(self, budgets: BudgetConfig) -> int:
        return self.max_segments if self.max_segments is not None else 2 * budgets.global_limit + 10


def maybe_inject_fault(cfg: FaultInjectionConfig, rng: random.Random, current_index: int,
                       node_count: int) -> int | None:
    """After one tool call: redirect to a uniformly chosen different node with ``cfg.probability``."""
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    if not cfg.enabled:
        return None
    u = rng.random()
    if u >= cfg.probability or node_count == 1:
        return None
    j = rng.randrange(node_count - 1)
    return j + 1 if j >= current_index else j


def _environment_text(env: Environment, initial: str) -> str:
    describe = getattr(env, "describe", None)
    return describe() if callable(describe) else initial


def base_metadata(method: str, task_id: Any, seed: int, budgets: BudgetConfig,
                  extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "method": method,
        "task_id": task_id,
        "seed": seed,
        "budgets": {"global": budgets.global_limit, "local": budgets.local_limit},
        "prompt_version": PROMPT_VERSION,
        "flags": dict(RUN_FLAGS),
    }
    meta.update(extra or {})
    return meta


def run_cyclic_episode(graph: TaskGraph, env: Environment, budgets: BudgetConfig,
                       fault_cfg: FaultInjectionConfig, session: ModelSession, task_id: Any, seed: int,
                       agent_cfg: AgentConfig | None = None,
                       metadata: Mapping[str, Any] | None = None) -> EpisodeLog:
    """Alternate executor segments and analyzer+router steps from node 0."""
    agent_cfg = agent_cfg or AgentConfig()
    initial = env.reset(task_id)
    objective = env.objective()
    env_text = _environment_text(env, initial)
    meta = base_metadata(str((metadata or {}).get("method", graph.regime.value.lower())), task_id, seed,
                         budgets, metadata)
    meta["graph_hash"] = meta.get("graph_hash") or graph.content_hash()
    meta["fault"] = asdict(fault_cfg)
    rng = fault_cfg.episode_rng(task_id, seed)
    n = graph.size
    state = EpisodeState()
    segments: list[SegmentRecord] = []
    decisions: list[RouterDecision] = []
    faults: list[FaultEvent] = []
    events: list[str] = []
    outcome = Outcome.ABORTED
    cap = agent_cfg.segment_cap(budgets)

    try:
        while True:
            if len(segments) >= cap:
                events.append(f"segment cap {cap} reached")
                outcome = Outcome.STALLED
                break
            current = state.current_index
            node = graph.nodes[current]

            def on_call(record: ToolCallRecord, current: int = current) -> int | None:
                target = maybe_inject_fault(fault_cfg, rng, current, n)
                if target is not None:
                    faults.append(FaultEvent(record.sequence_number, current, target))
                return target

            limit = min(budgets.local_limit, budgets.global_limit - state.k)
            segment = agents.execute_segment(session, node, state.memory, env, limit, objective=objective,
                                             on_call=on_call, environment_text=env_text)
            segments.append(segment)
            state.advance(segment)
            if env.is_success():
                outcome = Outcome.SUCCESS
                break
            if state.k >= budgets.global_limit:
                outcome = Outcome.BUDGET_EXHAUSTED
                break
            state.memory, degraded = agents.update_memory(session, state.memory, node, segment,
                                                          objective=objective, max_chars=agent_cfg.memory_chars)
            if degraded:
                events.append(f"degraded memory after segment {len(segments)}")
            if segment.ended_by == EndedBy.FAULT_REDIRECT:
                assert segment.redirect_to is not None
                state.current_index = segment.redirect_to
                continue
            decision = agents.select_next(
                session, state.memory, node, outgoing_criteria(graph, current), objective=objective,
                local_budget_exhausted=segment.ended_by == EndedBy.LOCAL_BUDGET,
                visited=[s.node_index for s in segments],
            )
            if decision.fallback:
                events.append(f"fallback routing after segment {len(segments)}")
            decisions.append(decision)
            state.current_index = decision.next_index
    except GatewayError as exc:
        events.append(f"aborted: {type(exc).__name__}: {exc}")
        outcome = Outcome.ABORTED

    return EpisodeLog(
        metadata=meta,
        plan=graph.to_dict(),
        segments=segments,
        decisions=decisions,
        outcome=outcome,
        ledger=session.ledger.snapshot(),
        fault_events=faults,
        events=events,
    )


def run_depdag_episode(plan: DepDagPlan, env: Environment, budgets: BudgetConfig, session: ModelSession,
                       task_id: Any, seed: int, agent_cfg: AgentConfig | None = None,
                       metadata: Mapping[str, Any] | None = None) -> EpisodeLog:
    """Execute plan steps once each, in order; the analyzer only refreshes guidance."""
    agent_cfg = agent_cfg or AgentConfig()
    initial = env.reset(task_id)
    objective = env.objective()
    env_text = _environment_text(env, initial)
    meta = base_metadata("depdag", task_id, seed, budgets, metadata)
    meta["plan_hash"] = plan.content_hash()
    state = EpisodeState()
    segments: list[SegmentRecord] = []
    events: list[str] = []
    outcome = Outcome.PLAN_EXHAUSTED
    try:
        for i, step in enumerate(plan.steps):
            limit = min(budgets.local_limit, budgets.global_limit - state.k)
            segment = agents.execute_segment(session, step, state.memory, env, limit, objective=objective,
                                             environment_text=env_text)
            segments.append(segment)
            state.advance(segment)
            if env.is_success():
                outcome = Outcome.SUCCESS
                break
            if state.k >= budgets.global_limit:
                outcome = Outcome.BUDGET_EXHAUSTED
                break
            if i + 1 < len(plan.steps):
                state.memory, degraded = agents.update_memory(session, state.memory, step, segment,
                                                              objective=objective,
                                                              max_chars=agent_cfg.memory_chars)
                if degraded:
                    events.append(f"degraded memory after segment {len(segments)}")
    except GatewayError as exc:
        events.append(f"aborted: {type(exc).__name__}: {exc}")
        outcome = Outcome.ABORTED
    return EpisodeLog(
        metadata=meta,
        plan=plan.to_dict(),
        segments=segments,
        decisions=[],
        outcome=outcome,
        ledger=session.ledger.snapshot(),
        events=events,
    )


def run_react_episode(env: Environment, budgets: BudgetConfig, session: ModelSession, task_id: Any, seed: int,
                      agent_cfg: AgentConfig | None = None,
                      metadata: Mapping[str, Any] | None = None) -> EpisodeLog:
    """ReAct under a unified budget equal to the global limit."""
    agent_cfg = agent_cfg or AgentConfig()
    initial = env.reset(task_id)
    meta = base_metadata("react", task_id, seed, budgets, metadata)
    return agents.run_react_loop(session, env.objective(), env, budgets.global_limit, metadata=meta,
                                 environment_text=_environment_text(env, initial),
                                 stall_limit=agent_cfg.stall_limit)


def log_path(run_dir: str | Path, method: str, task_id: Any, seed: int) -> Path:
    return Path(run_dir) / method / f"{task_id}_{seed}.log"


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_log(run_dir: str | Path, method: str, log: EpisodeLog) -> Path:
    path = log_path(run_dir, method, log.task_id, log.seed)
    atomic_write(path, log.dumps())
    return path


def write_manifest(run_dir: str | Path, manifest: Mapping[str, Any]) -> Path:
    path = Path(run_dir) / "manifest.json"
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_logs(run_dir: str | Path) -> list[EpisodeLog]:
    """Every episode log under ``run_dir``, in sorted path order."""
    return [EpisodeLog.loads(p.read_text(encoding="utf-8")) for p in sorted(Path(run_dir).glob("*/*.log"))]
