"""Planner, executor, analyzer+router, ReAct and trajectory-summary agents.

Every agent is a function over a :class:`~cycflow.gateway.ModelSession`; the
session fixes the episode's token ledger and scripted call ordinals.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import prompts
from .environment import Environment, ToolCallRecord
from .gateway import (ANALYZER, EXECUTOR, PLANNER, REACT, ROUTER, SUMMARIZER, CompletionRequest,
                      Message, ModelSession, SchemaViolation, TokenUsage)
from .graph import (GENERALIST, DepDagPlan, GraphError, Regime, SubtaskNode, TaskGraph,
                    build_complete_graph)
from .records import (MEMORY_SCHEMA, DemoSet, DemoSummary, EndedBy, EpisodeLog, Outcome,
                      RouterDecision, RouterMemory, SegmentRecord)

DEFAULT_CRITERION = "transition here if the analyzer judges this subtask most productive next"
GENERALIST_EXPOSURE = "generalist"
SPECIALIST_EXPOSURE = "specialist"

BENCHMARK_DESCRIPTIONS = {
    "textcraft": (
        "TextCraft: a text crafting game. Raw items are acquired with 'get', intermediate and target "
        "items are produced with exact-count crafting commands listed in the environment description. "
        "An episode succeeds once the target item is in the inventory."
    ),
}


class PlannerFailure(RuntimeError):
    pass


class NoSuccesses(RuntimeError):
    pass


def benchmark_family(benchmark: str) -> str:
    return benchmark.split("-")[0].lower()


def benchmark_description(benchmark: str) -> str:
    return BENCHMARK_DESCRIPTIONS.get(benchmark_family(benchmark), benchmark)


# -- planning ---------------------------------------------------------------

_TEXTCRAFT_NODES = (
    ("Inspect_recipes", "Read the crafting commands and the inventory; identify the target recipe "
                        "and which ingredients are still missing.", ("textcraft_inventory",)),
    ("Gather_materials", "Get the raw materials that can be gathered directly, in the quantities "
                         "the recipes require.", ("textcraft_get_item", "textcraft_inventory")),
    ("Craft_intermediates", "Craft intermediate items in dependency order using exact recipe counts.",
     ("textcraft_craft", "textcraft_inventory")),
    ("Craft_target", "Craft the target item and confirm it is in the inventory.",
     ("textcraft_craft", "textcraft_inventory")),
)

_TEXTCRAFT_WHEN = (
    "the recipe chain or the missing ingredients are unclear",
    "raw materials required by the next craft are missing from the inventory",
    "raw materials are available but an intermediate item is still missing",
    "every ingredient of the target recipe is in the inventory",
)


def default_graph(benchmark: str, regime: Regime | str = Regime.GEN_CYC,
                  tool_exposure: str = GENERALIST_EXPOSURE) -> TaskGraph | None:
    """Fallback graph used when the planner cannot produce a valid one."""
    if benchmark_family(benchmark) != "textcraft":
        return None
    nodes = [
        SubtaskNode(i, name, desc, scope if tool_exposure == SPECIALIST_EXPOSURE else None)
        for i, (name, desc, scope) in enumerate(_TEXTCRAFT_NODES)
    ]
    criteria = {}
    for f in range(len(nodes)):
        for t in range(len(nodes)):
            if f == t:
                criteria[(f, t)] = f"repeat {nodes[t].name} if it made progress but is not finished"
            else:
                criteria[(f, t)] = f"go to {nodes[t].name} if {_TEXTCRAFT_WHEN[t]}"
    return build_complete_graph(nodes, criteria, regime)


def default_steps(benchmark: str) -> DepDagPlan | None:
    graph = default_graph(benchmark)
    return None if graph is None else DepDagPlan.from_steps(graph.nodes)


def _render_demos(demos: Sequence[DemoSummary]) -> str:
    if not demos:
        return ""
    lines = [prompts.DEMOS_HEADER]
    lines += [f"- ({d.source_task_id}) {d.summary_text}" for d in demos]
    return "\n".join(lines)


def _parse_nodes(raw: Any, tool_names: Sequence[str], tool_exposure: str) -> list[SubtaskNode]:
    if not isinstance(raw, list) or not raw:
        raise ValueError("nodes must be a non-empty list")
    nodes = []
    for i, item in enumerate(raw):
        if not isinstance(item, Mapping):
            raise ValueError(f"node {i} is not an object")
        node = SubtaskNode.from_dict(item, index=int(item.get("index", i)))
        if tool_exposure == GENERALIST_EXPOSURE:
            node = SubtaskNode(node.index, node.name, node.description, None)
        nodes.append(node)
    return nodes


def parse_graph_response(content: Any, regime: Regime, tool_names: Sequence[str],
                         tool_exposure: str = GENERALIST_EXPOSURE,
                         default_criterion: str | None = DEFAULT_CRITERION) -> TaskGraph:
    if not isinstance(content, Mapping):
        raise ValueError("expected a JSON object with nodes and criteria")
    nodes = _parse_nodes(content.get("nodes"), tool_names, tool_exposure)
    criteria: dict[tuple[int, int], str] = {}
    for c in content.get("criteria", []) or []:
        try:
            criteria[(int(c["from"]), int(c["to"]))] = str(c["text"])
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"malformed criterion {c!r}") from None
    graph = build_complete_graph(nodes, criteria, regime, default_criterion=default_criterion)
    graph.validate_tool_scopes(tool_names)
    return graph


def _planner_request(session: ModelSession, text: str) -> CompletionRequest:
    return CompletionRequest(
        agent_role=PLANNER,
        model_tier=session.tier_for(PLANNER),
        messages=[Message("system", text)],
        response_schema={"type": "object"},
        max_tokens=4096,
    )


def _plan_cyclic(session: ModelSession, regime: Regime, benchmark: str, objective: str | None,
                 demos: Sequence[DemoSummary], tool_names: Sequence[str], tool_exposure: str,
                 default_criterion: str | None, notes: list[str] | None) -> TaskGraph:
    scope = (prompts.render(prompts.PLANNER_SCOPE_SPEC, objective=objective) if regime == Regime.SPEC_CYC
             else prompts.render(prompts.PLANNER_SCOPE_GEN))
    text = prompts.render(
        prompts.PLANNER_CYCLIC,
        benchmark=benchmark_description(benchmark),
        scope_line=scope,
        tools=", ".join(tool_names),
        demos=_render_demos(demos),
    )
    try:
        response = session.complete(
            _planner_request(session, text),
            validator=lambda c: parse_graph_response(c, regime, tool_names, tool_exposure, default_criterion),
        )
        return response.parsed
    except SchemaViolation as exc:
        fallback = default_graph(benchmark, regime, tool_exposure)
        if fallback is None:
            raise PlannerFailure(f"planner output invalid and no default graph for {benchmark}: {exc}") from exc
        if notes is not None:
            notes.append(f"planner_fallback: {exc}")
        return fallback


def plan_spec_cyc(session: ModelSession, objective: str, benchmark: str, demos: Sequence[DemoSummary] = (),
                  tool_names: Sequence[str] = (), tool_exposure: str = GENERALIST_EXPOSURE,
                  default_criterion: str | None = DEFAULT_CRITERION,
                  notes: list[str] | None = None) -> TaskGraph:
    """Task-specific graph for one instance, from objective, benchmark and demos."""
    return _plan_cyclic(session, Regime.SPEC_CYC, benchmark, objective, demos, tool_names,
                        tool_exposure, default_criterion, notes)


class GraphCache:
    """Frozen Gen-Cyc graphs, one file per (benchmark, planner key)."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def path(self, benchmark: str, key: str) -> Path:
        safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", f"{benchmark}__{key}")
        return self.directory / f"{safe}.graph.json"

    def load(self, benchmark: str, key: str) -> tuple[TaskGraph, str] | None:
        p = self.path(benchmark, key)
        if not p.exists():
            return None
        raw = p.read_bytes()
        return TaskGraph.loads(raw.decode("utf-8")), hashlib.sha256(raw).hexdigest()

    def store(self, benchmark: str, key: str, graph: TaskGraph) -> str:
        p = self.path(benchmark, key)
        p.parent.mkdir(parents=True, exist_ok=True)
        raw = graph.dumps().encode("utf-8")
        tmp = p.with_suffix(".tmp")
        tmp.write_bytes(raw)
        tmp.replace(p)
        return hashlib.sha256(raw).hexdigest()


def plan_gen_cyc(session: ModelSession, benchmark: str, demos: Sequence[DemoSummary] = (),
                 tool_names: Sequence[str] = (), tool_exposure: str = GENERALIST_EXPOSURE,
                 cache: GraphCache | None = None, cache_key: str = "default",
                 default_criterion: str | None = DEFAULT_CRITERION,
                 notes: list[str] | None = None) -> tuple[TaskGraph, str]:
    """Benchmark-generic graph, planned once and then served from ``cache``.

    Returns the graph and the sha256 of its frozen file.
    """
    if cache is not None:
        hit = cache.load(benchmark, cache_key)
        if hit is not None:
            return hit
    graph = _plan_cyclic(session, Regime.GEN_CYC, benchmark, None, demos, tool_names,
                         tool_exposure, default_criterion, notes)
    if cache is not None:
        return graph, cache.store(benchmark, cache_key, graph)
    return graph, graph.content_hash()


def _parse_steps(content: Any) -> DepDagPlan:
    if not isinstance(content, Mapping):
        raise ValueError("expected a JSON object with steps")
    steps = content.get("steps")
    if not isinstance(steps, list) or not steps:
        raise ValueError("steps must be a non-empty list")
    nodes = []
    for i, s in enumerate(steps):
        if isinstance(s, str):
            s = {"name": s, "description": s}
        if not isinstance(s, Mapping):
            raise ValueError(f"step {i} is not an object")
        nodes.append(SubtaskNode(i, str(s.get("name", "")), str(s.get("description", "")), None))
    try:
        return DepDagPlan.from_steps(nodes)
    except GraphError as exc:
        raise ValueError(str(exc)) from None


def plan_dep_dag(session: ModelSession, objective: str, benchmark: str,
                 demos: Sequence[DemoSummary] = ()) -> DepDagPlan:
    text = prompts.render(prompts.PLANNER_DEPDAG, benchmark=benchmark_description(benchmark),
                          objective=objective, demos=_render_demos(demos))
    try:
        return session.complete(_planner_request(session, text), validator=_parse_steps).parsed
    except SchemaViolation as exc:
        raise PlannerFailure(f"DepDAG planner output invalid: {exc}") from exc


# -- execution --------------------------------------------------------------

def _describe_calls(calls: Sequence[ToolCallRecord], limit: int = 8) -> str:
    if not calls:
        return "(none yet)"
    shown = calls[-limit:]
    return "\n".join(
        f"{c.sequence_number}. {c.tool_name} {json.dumps(c.arguments, sort_keys=True)} -> {c.observation}"
        for c in shown
    )


def _digest_summary(node: SubtaskNode, calls: Sequence[ToolCallRecord]) -> str:
    if not calls:
        return f"{node.name}: no tool calls"
    return f"{node.name}: " + "; ".join(f"{c.tool_name} -> {c.observation}" for c in calls)


def _executor_content(content: Any) -> tuple[bool, str]:
    if isinstance(content, Mapping):
        return bool(content.get("done", False)), str(content.get("summary", "") or "")
    return False, ""


def _usage_since(session: ModelSession, start: int) -> TokenUsage:
    total = TokenUsage()
    for call in session.ledger.calls[start:]:
        total = total + call.usage
    return total


OnCall = Callable[[ToolCallRecord], "int | None"]


def _tool_loop(session: ModelSession, role: str, env: Environment, limit: int, allowed: list[str],
               system_text: str, user_text: Callable[[list[ToolCallRecord]], str],
               on_call: OnCall | None = None, stall_limit: int = 2
               ) -> tuple[list[ToolCallRecord], str, bool, int | None, str]:
    """Shared inner loop: one model call per step, tool invocations counted one by one.

    Returns (calls, ended_by, stalled, redirect target, last model summary).
    """
    specs = [s.to_dict() for s in env.tool_specs() if s.name in allowed]
    calls: list[ToolCallRecord] = []
    stalls = 0
    summary = ""
    while True:
        if len(calls) >= limit:
            return calls, EndedBy.LOCAL_BUDGET, False, None, summary
        request = CompletionRequest(
            agent_role=role,
            model_tier=session.tier_for(role),
            messages=[Message("system", system_text), Message("user", user_text(calls))],
            tool_schemas=specs,
        )
        response = session.complete(request, validator=_executor_content)
        done, said = response.parsed
        summary = said or summary
        if response.tool_invocations:
            stalls = 0
            for inv in response.tool_invocations:
                record = env.invoke(inv.name, inv.arguments, allowed_tools=allowed)
                calls.append(record)
                if record.success_flag:
                    return calls, EndedBy.ENV_SUCCESS, False, None, summary
                if on_call is not None:
                    target = on_call(record)
                    if target is not None:
                        return calls, EndedBy.FAULT_REDIRECT, False, target, summary
                if len(calls) >= limit:
                    return calls, EndedBy.LOCAL_BUDGET, False, None, summary
            continue
        if done:
            return calls, EndedBy.EXECUTOR_DONE, False, None, summary
        stalls += 1
        if stalls >= stall_limit:
            return calls, EndedBy.EXECUTOR_DONE, True, None, summary


def execute_segment(session: ModelSession, node: SubtaskNode, guidance: RouterMemory, env: Environment,
                    local_budget: int, objective: str = "", on_call: OnCall | None = None,
                    environment_text: str = "") -> SegmentRecord:
    """Run the executor for ``node`` until done, budget, env success or a fault redirect.

    ``on_call`` sees every tool call that did not solve the task and may return a node index to
    redirect to.
    """
    if local_budget < 1:
        raise ValueError("local budget must be >= 1")
    allowed = node.allowed_tools(env.tool_names())
    system_text = prompts.render(
        prompts.EXECUTOR_SYSTEM,
        objective=objective,
        name=node.name,
        description=node.description,
        guidance=guidance.render(),
        tools=", ".join(allowed),
    )
    start = len(session.ledger.calls)
    calls, ended_by, stalled, redirect, summary = _tool_loop(
        session, EXECUTOR, env, local_budget, allowed, system_text,
        lambda cs: prompts.render(prompts.EXECUTOR_USER, environment=environment_text,
                                  recent=_describe_calls(cs)),
        on_call=on_call,
    )
    return SegmentRecord(
        node_index=node.index,
        tool_calls=calls,
        summary=summary or _digest_summary(node, calls),
        token_usage=_usage_since(session, start),
        ended_by=ended_by,
        stalled=stalled,
        redirect_to=redirect,
    )


# -- analyzer + router --------------------------------------------------------

def _parse_memory(content: Any) -> RouterMemory:
    if not isinstance(content, Mapping):
        raise ValueError("memory must be a JSON object")
    return RouterMemory.from_dict(content)


def update_memory(session: ModelSession, memory: RouterMemory, node: SubtaskNode, segment: SegmentRecord,
                  objective: str = "", max_chars: int = 4000) -> tuple[RouterMemory, bool]:
    """Analyzer call folding the last segment into memory.

    Returns the new memory and whether it ran in degraded mode (schema violation:
    previous memory kept, with a note appended).
    """
    text = prompts.render(
        prompts.ANALYZER_SYSTEM,
        objective=objective,
        name=node.name,
        description=node.description,
        memory=memory.render(),
        trace=_describe_calls(segment.tool_calls, limit=len(segment.tool_calls) or 1),
        summary=segment.summary,
    )
    request = CompletionRequest(
        agent_role=ANALYZER,
        model_tier=session.tier_for(ANALYZER) if ANALYZER in session.tiers else session.tier_for(ROUTER),
        messages=[Message("system", text)],
        response_schema=MEMORY_SCHEMA,
    )
    count = memory.segment_count + 1
    try:
        updated: RouterMemory = session.complete(request, validator=_parse_memory).parsed
        updated.segment_count = count
        updated.notes = list(memory.notes)
        return updated.enforce_budget(max_chars), False
    except SchemaViolation as exc:
        kept = RouterMemory.from_dict(memory.to_dict())
        kept.segment_count = count
        kept.notes.append(f"segment {count}: analyzer output rejected ({exc})")
        return kept.enforce_budget(max_chars), True


_INDEX_TEXT = re.compile(r"(?:next_index|index)\s*[:=]\s*(-?\d+)", re.IGNORECASE)


def parse_router_choice(content: Any, n_candidates: int) -> tuple[int, str]:
    index: Any = None
    justification = ""
    if isinstance(content, Mapping):
        index = content.get("next_index", content.get("index"))
        justification = str(content.get("justification", ""))
    elif isinstance(content, bool):
        index = None
    elif isinstance(content, int):
        index = content
    elif isinstance(content, str):
        m = _INDEX_TEXT.search(content) or re.fullmatch(r"\s*(-?\d+)\s*", content)
        if m:
            index = m.group(1)
        justification = content.strip()
    try:
        value = int(index)
    except (TypeError, ValueError):
        raise ValueError(f"no next index in router output {content!r}") from None
    if not 0 <= value < n_candidates:
        raise ValueError(f"next index {value} outside [0, {n_candidates})")
    return value, justification


def fallback_index(current_index: int, local_budget_exhausted: bool, visited: Iterable[int],
                   node_count: int) -> int:
    """Self-loop, else the lowest unvisited node, else node 0."""
    if not local_budget_exhausted:
        return current_index
    seen = set(visited)
    for i in range(node_count):
        if i not in seen:
            return i
    return 0


def select_next(session: ModelSession, memory: RouterMemory, current: SubtaskNode,
                candidates: Sequence[tuple[int, str]], objective: str = "",
                local_budget_exhausted: bool = False, visited: Iterable[int] = ()) -> RouterDecision:
    """One router call presenting every outgoing criterion at once."""
    if not candidates:
        raise ValueError("router needs at least one candidate")
    text = prompts.render(
        prompts.ROUTER_SYSTEM,
        objective=objective,
        current=current.index,
        current_name=current.name,
        memory=memory.render(),
        candidates="\n".join(f"{j}: {c}" for j, c in candidates),
    )
    request = CompletionRequest(
        agent_role=ROUTER,
        model_tier=session.tier_for(ROUTER),
        messages=[Message("system", text)],
    )
    n = len(candidates)
    targets = [j for j, _ in candidates]
    try:
        pos, why = session.complete(request, validator=lambda c: _router_validator(c, targets)).parsed
        return RouterDecision(current.index, pos, why, n)
    except SchemaViolation as exc:
        nxt = fallback_index(current.index, local_budget_exhausted, visited, n)
        return RouterDecision(current.index, nxt, f"fallback routing: {exc}", n, fallback=True)


def _router_validator(content: Any, targets: Sequence[int]) -> tuple[int, str]:
    value, why = parse_router_choice(content, max(targets) + 1)
    if value not in targets:
        raise ValueError(f"next index {value} is not a candidate")
    return value, why


# -- ReAct ---------------------------------------------------------------------

def run_react_loop(session: ModelSession, objective: str, env: Environment, unified_budget: int,
                   metadata: Mapping[str, Any] | None = None, environment_text: str = "",
                   stall_limit: int = 2) -> EpisodeLog:
    """Single-agent think/act loop with all tools, bounded by ``unified_budget`` tool calls."""
    allowed = env.tool_names()
    system_text = prompts.render(prompts.REACT_SYSTEM, objective=objective, environment=environment_text)
    start = len(session.ledger.calls)
    events: list[str] = []
    try:
        calls, ended_by, stalled, _, summary = _tool_loop(
            session, REACT, env, unified_budget, allowed, system_text,
            lambda cs: prompts.render(prompts.REACT_USER, recent=_describe_calls(cs)),
            stall_limit=stall_limit,
        )
    except Exception as exc:  # gateway failures abort the episode
        calls, ended_by, stalled, summary = list(env.calls), EndedBy.EXECUTOR_DONE, False, ""
        events.append(f"aborted: {type(exc).__name__}: {exc}")
        outcome = Outcome.ABORTED
    else:
        if env.is_success():
            outcome = Outcome.SUCCESS
        elif len(calls) >= unified_budget:
            outcome = Outcome.BUDGET_EXHAUSTED
        else:
            outcome = Outcome.STALLED
    segment = SegmentRecord(
        node_index=0,
        tool_calls=calls,
        summary=summary or f"react: {len(calls)} tool calls",
        token_usage=_usage_since(session, start),
        ended_by=ended_by,
        stalled=stalled,
    )
    meta = dict(metadata or {})
    meta.setdefault("method", "react")
    meta["unified_budget"] = unified_budget
    return EpisodeLog(
        metadata=meta,
        plan=None,
        segments=[segment],
        decisions=[],
        outcome=outcome,
        ledger=session.ledger.snapshot(),
        events=events,
    )


# -- n-shot summaries ----------------------------------------------------------

def summarize_success(session: ModelSession, log: EpisodeLog, benchmark: str) -> DemoSummary:
    if log.outcome != Outcome.SUCCESS:
        raise ValueError("only successful episodes can be summarized")
    plan = log.plan or {}
    plan_text = "\n".join(f"- {n['name']}: {n['description']}"
                          for n in plan.get("nodes", plan.get("steps", [])))
    trace = "\n".join(
        f"[{s.node_index}] " + "; ".join(f"{c.tool_name} {json.dumps(c.arguments, sort_keys=True)} -> "
                                         f"{c.observation}" for c in s.tool_calls)
        for s in log.segments
    )
    text = prompts.render(prompts.SUMMARIZER_SYSTEM, benchmark=benchmark,
                          objective=str(log.metadata.get("objective", "")), plan=plan_text, trace=trace)
    request = CompletionRequest(agent_role=SUMMARIZER, model_tier=session.tier_for(SUMMARIZER),
                                messages=[Message("system", text)])

    def validate(content: Any) -> str:
        if isinstance(content, Mapping):
            content = content.get("summary", "")
        if not isinstance(content, str) or not content.strip():
            raise ValueError("summary must be non-empty text")
        return content.strip()

    summary = session.complete(request, validator=validate).parsed
    return DemoSummary(log.task_id, benchmark, summary)


def build_nshot_set(benchmark: str, train_ids: Sequence[int],
                    run_episode: Callable[[int], tuple[EpisodeLog, ModelSession]],
                    test_ids: Iterable[int] = (), limit: int | None = None) -> DemoSet:
    """Run Spec-Cyc over ``train_ids`` and summarize every success into a frozen set.

    ``run_episode`` returns the log and the session to use for the summary call.
    An empty set is returned with ``zero_shot`` set when nothing succeeded.
    """
    forbidden = set(test_ids)
    leaked = forbidden.intersection(train_ids)
    if leaked:
        raise ValueError(f"train ids overlap the test split: {sorted(leaked)[:5]}")
    entries: list[DemoSummary] = []
    for task_id in train_ids:
        log, session = run_episode(task_id)
        if not log.success:
            continue
        entries.append(summarize_success(session, log, benchmark))
        if limit is not None and len(entries) >= limit:
            break
    return DemoSet(benchmark, entries, zero_shot=not entries)
