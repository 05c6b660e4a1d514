"""Builders shared by the test modules: synthetic logs and scripted episodes."""

from __future__ import annotations

import random
from typing import Sequence

from cycflow import agents, orchestrator
from cycflow.environment import ToolCallRecord
from cycflow.gateway import ModelSession, TokenUsage
from cycflow.graph import TaskGraph
from cycflow.orchestrator import AgentConfig, BudgetConfig, FaultInjectionConfig
from cycflow.records import EndedBy, EpisodeLog, Outcome, SegmentRecord
from cycflow.scripted import TextCraftPolicy, textcraft_backend
from cycflow.textcraft import TextCraftEnv, generate_task


def synthetic_log(task_id: int, seed: int, nodes: Sequence[int], success: bool, tokens: int = 0,
                  method: str = "speccyc", calls: Sequence[int] | None = None,
                  faults: Sequence[bool] | None = None) -> EpisodeLog:
    """Log whose segments visit ``nodes``; ``faults[i]`` marks segment i as fault-ended."""
    calls = list(calls) if calls is not None else [1] * len(nodes)
    faults = list(faults) if faults is not None else [False] * len(nodes)
    segments = []
    seq = 0
    for i, node in enumerate(nodes):
        records = []
        for _ in range(calls[i]):
            seq += 1
            records.append(ToolCallRecord(seq, "textcraft_inventory", {}, "empty", False))
        ended = EndedBy.FAULT_REDIRECT if faults[i] else EndedBy.EXECUTOR_DONE
        redirect = nodes[i + 1] if faults[i] and i + 1 < len(nodes) else None
        segments.append(SegmentRecord(node, records, "s", TokenUsage(), ended, redirect_to=redirect))
    ledger = {"per_role": {}, "calls": 0, "total": {"prompt_tokens": tokens, "completion_tokens": 0,
                                                    "total_tokens": tokens}}
    meta = {"method": method, "task_id": task_id, "seed": seed, "benchmark": "textcraft-2"}
    return EpisodeLog(meta, None, segments, [], Outcome.SUCCESS if success else Outcome.BUDGET_EXHAUSTED, ledger)


def random_log(rng: random.Random, task_id: int, seed: int, max_nodes: int = 6, max_len: int = 9) -> EpisodeLog:
    n = rng.randint(1, max_nodes)
    length = rng.randint(0, max_len)
    nodes = [rng.randrange(n) for _ in range(length)]
    faults = [rng.random() < 0.2 for _ in nodes]
    return synthetic_log(task_id, seed, nodes, rng.random() < 0.5, rng.randint(100, 10_000), faults=faults,
                         calls=[rng.randint(0, 5) for _ in nodes])


def scripted_cyclic_episode(task_id: int, seed: int, policy: TextCraftPolicy, depth: int = 2,
                            budgets: BudgetConfig | None = None,
                            fault: FaultInjectionConfig | None = None,
                            record_states: bool = False) -> tuple[EpisodeLog, TaskGraph]:
    """Plan a Spec-Cyc graph and run one cyclic episode with the scripted TextCraft team."""
    task = generate_task(task_id, depth)
    env = TextCraftEnv(depth, tasks={task_id: task}, record_states=record_states)
    env.reset(task_id)
    session = ModelSession(textcraft_backend(policy, task, seed, "speccyc", f"textcraft-{depth}"))
    graph = agents.plan_spec_cyc(session, task.objective(), f"textcraft-{depth}", (), env.tool_names())
    budgets = budgets or BudgetConfig(30, 5)
    log = orchestrator.run_cyclic_episode(graph, env, budgets, fault or FaultInjectionConfig(), session,
                                          task_id, seed, AgentConfig(), {"method": "speccyc"})
    return log, graph


def scripted_react_episode(task_id: int, seed: int, policy: TextCraftPolicy, depth: int = 2,
                           budgets: BudgetConfig | None = None, record_states: bool = False) -> EpisodeLog:
    task = generate_task(task_id, depth)
    env = TextCraftEnv(depth, tasks={task_id: task}, record_states=record_states)
    session = ModelSession(textcraft_backend(policy, task, seed, "react", f"textcraft-{depth}"))
    return orchestrator.run_react_episode(env, budgets or BudgetConfig(30, 5), session, task_id, seed)
