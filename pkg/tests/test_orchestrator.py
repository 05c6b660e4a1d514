from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycflow import orchestrator
from cycflow.gateway import ModelSession, ScriptedBackend
from cycflow.graph import DepDagPlan, SubtaskNode, build_complete_graph
from cycflow.orchestrator import (AgentConfig, BudgetConfig, ConfigError, FaultInjectionConfig, maybe_inject_fault,
                                  run_cyclic_episode, run_depdag_episode)
from cycflow.records import EndedBy, EpisodeLog, Outcome
from cycflow.scripted import TextCraftPolicy
from cycflow.textcraft import TOOL_CRAFT, TOOL_GET, TOOL_INVENTORY, CraftingTask, Recipe, TextCraftEnv

from helpers import scripted_cyclic_episode, scripted_react_episode

TINY = CraftingTask(1, "bolt", 2, (Recipe("rod", 1, (("ore", 1),)), Recipe("bolt", 1, (("rod", 1), ("wax", 1)))),
                    frozenset({"ore", "wax"}))
MEM = {"content": {"progress_summary": "p", "verified_facts": [], "detected_loops": [], "guidance_for_next": "g"}}


def tool(name, **args):
    return {"tool_invocations": [{"name": name, "arguments": args}]}


def graph(n):
    return build_complete_graph([SubtaskNode(i, f"N{i}", "d") for i in range(n)],
                                {(f, t): f"c{f}{t}" for f in range(n) for t in range(n)})


def tiny_env():
    return TextCraftEnv(tasks={1: TINY})


SOLVE_3_2 = [
    tool(TOOL_GET, item_name="ore", num_total_items_needed=1),
    tool(TOOL_GET, item_name="wax", num_total_items_needed=1),
    tool(TOOL_CRAFT, crafting_command="craft 1 rod using 1 ore"),
    {"content": {"done": True, "summary": "materials ready"}},
    tool(TOOL_INVENTORY),
    tool(TOOL_CRAFT, crafting_command="craft 1 bolt using 1 rod, 1 wax"),
]


def test_budget_config_invariant():
    with pytest.raises(ConfigError):
        BudgetConfig(5, 6)
    with pytest.raises(ConfigError):
        BudgetConfig(5, 0)
    with pytest.raises(ConfigError):
        FaultInjectionConfig(True, 1.5)


def test_happy_path_two_segments():
    s = ModelSession(ScriptedBackend({"executor": SOLVE_3_2, "analyzer": [MEM], "router": ["index: 1"]}))
    log = run_cyclic_episode(graph(3), tiny_env(), BudgetConfig(30, 5), FaultInjectionConfig(), s, 1, 0)
    assert log.outcome == Outcome.SUCCESS
    assert [seg.delta_k for seg in log.segments] == [3, 2]
    assert log.k_final == 5 and len(log.decisions) == 1
    assert log.node_sequence() == [0, 1]
    assert log.segments[-1].tool_calls[-1].success_flag
    assert log.metadata["flags"]["start_node"] == 0


def test_budget_exhaustion_stops_without_routing():
    inv = [tool(TOOL_INVENTORY)] * 40
    s = ModelSession(ScriptedBackend({"executor": inv, "analyzer": [MEM] * 10, "router": ["index: 0"] * 10}))
    log = run_cyclic_episode(graph(2), tiny_env(), BudgetConfig(12, 5), FaultInjectionConfig(), s, 1, 0)
    assert log.outcome == Outcome.BUDGET_EXHAUSTED
    assert [seg.delta_k for seg in log.segments] == [5, 5, 2]
    assert len(log.decisions) == 2


def test_gateway_failure_aborts():
    s = ModelSession(ScriptedBackend({"executor": [tool(TOOL_INVENTORY)] * 5}))  # no analyzer responses
    log = run_cyclic_episode(graph(2), tiny_env(), BudgetConfig(30, 5), FaultInjectionConfig(), s, 1, 0)
    assert log.outcome == Outcome.ABORTED and log.events[-1].startswith("aborted: ScriptExhausted")
    assert log.k_final == 5


def test_segment_cap_stops_a_stalling_team():
    s = ModelSession(ScriptedBackend({"executor": ["..."], "analyzer": [MEM], "router": ["index: 0"]}, cycle=True))
    log = run_cyclic_episode(graph(2), tiny_env(), BudgetConfig(30, 5), FaultInjectionConfig(), s, 1, 0,
                             AgentConfig(max_segments=4))
    assert log.outcome == Outcome.STALLED and len(log.segments) == 4 and log.k_final == 0


def test_replay_is_byte_identical():
    policy = TextCraftPolicy(waste=0.3, stall=0.1, router_invalid=0.1, analyzer_invalid=0.1)
    a, _ = scripted_cyclic_episode(5, 1, policy, depth=3, fault=FaultInjectionConfig(True, 0.3, 9))
    b, _ = scripted_cyclic_episode(5, 1, policy, depth=3, fault=FaultInjectionConfig(True, 0.3, 9))
    assert a.dumps() == b.dumps()
    assert EpisodeLog.loads(a.dumps()).dumps() == a.dumps()


def test_textcraft2_budgets_never_exceeded():
    policy = TextCraftPolicy(waste=0.6, early_done=0.1, stall=0.05)
    for task_id in range(15):
        log, _ = scripted_cyclic_episode(task_id, 0, policy)
        assert all(seg.delta_k <= 5 for seg in log.segments)
        assert log.k_final <= 30


def test_fault_accounting():
    policy = TextCraftPolicy(waste=0.3)
    for task_id in range(10):
        log, g = scripted_cyclic_episode(task_id, 0, policy, depth=3, fault=FaultInjectionConfig(True, 0.5, 3))
        fault_segments = [s for s in log.segments if s.ended_by == EndedBy.FAULT_REDIRECT]
        assert len(log.fault_events) == len(fault_segments)
        for ev, seg in zip(log.fault_events, fault_segments):
            assert ev.redirected_to != ev.from_index and seg.redirect_to == ev.redirected_to
        # routed transitions plus fault transitions cover every consecutive pair
        assert len(log.decisions) + len(log.fault_events) >= len(log.segments) - 1
        for prev, nxt in zip(log.segments, log.segments[1:]):
            if prev.ended_by == EndedBy.FAULT_REDIRECT:
                assert nxt.node_index == prev.redirect_to
        assert all(d.considered_candidates == g.size for d in log.decisions)


def test_fault_segment_updates_memory_but_skips_router():
    backend = ScriptedBackend({"executor": [tool(TOOL_INVENTORY)], "analyzer": [MEM], "router": ["index: 0"]},
                              cycle=True)
    s = ModelSession(backend)
    log = run_cyclic_episode(graph(3), tiny_env(), BudgetConfig(6, 5), FaultInjectionConfig(True, 1.0, 0), s, 1, 0)
    # probability 1: every call redirects, so no router decision is ever made
    assert log.outcome == Outcome.BUDGET_EXHAUSTED
    assert log.decisions == [] and len(log.fault_events) == 6
    assert [seg.delta_k for seg in log.segments] == [1] * 6
    # memory is updated after every non-terminal segment, router is never consulted
    assert sum(1 for c in s.ledger.calls if c.role == "analyzer") == 5
    assert not any(c.role == "router" for c in s.ledger.calls)


def test_maybe_inject_fault_edge_cases():
    rng = random.Random(0)
    assert all(maybe_inject_fault(FaultInjectionConfig(True, 0.0), rng, 0, 5) is None for _ in range(500))
    assert all(maybe_inject_fault(FaultInjectionConfig(True, 1.0), rng, 0, 1) is None for _ in range(500))
    assert maybe_inject_fault(FaultInjectionConfig(False, 1.0), rng, 0, 5) is None
    with pytest.raises(ValueError):
        maybe_inject_fault(FaultInjectionConfig(True, 1.0), rng, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.integers(0, 11), st.integers(0, 10_000))
def test_fault_target_uniform_over_other_nodes(n, current, seed):
    current %= n
    rng = random.Random(seed)
    t = maybe_inject_fault(FaultInjectionConfig(True, 1.0), rng, current, n)
    assert t is not None and t != current and 0 <= t < n


def test_fault_targets_cover_all_other_nodes():
    rng = random.Random(1)
    seen = {maybe_inject_fault(FaultInjectionConfig(True, 1.0), rng, 2, 5) for _ in range(400)}
    assert seen == {0, 1, 3, 4}


# DepDAG

def plan(n):
    return DepDagPlan.from_steps([SubtaskNode(i, f"S{i}", "d") for i in range(n)])


def test_depdag_success_at_step_two():
    s = ModelSession(ScriptedBackend({"executor": SOLVE_3_2, "analyzer": [MEM] * 3}))
    log = run_depdag_episode(plan(3), tiny_env(), BudgetConfig(30, 5), s, 1, 0)
    assert log.outcome == Outcome.SUCCESS and log.node_sequence() == [0, 1] and log.decisions == []


def test_depdag_plan_exhausted():
    ex = [tool(TOOL_INVENTORY), {"content": {"done": True}}] * 3
    s = ModelSession(ScriptedBackend({"executor": ex, "analyzer": [MEM] * 3}))
    log = run_depdag_episode(plan(3), tiny_env(), BudgetConfig(30, 5), s, 1, 0)
    assert log.outcome == Outcome.PLAN_EXHAUSTED and not log.success
    assert log.node_sequence() == [0, 1, 2]
    assert sum(1 for c in s.ledger.calls if c.role == "analyzer") == 2


def test_depdag_order_under_noise():
    policy = TextCraftPolicy(waste=0.4, early_done=0.3)
    from cycflow import agents
    from cycflow.scripted import textcraft_backend
    from cycflow.textcraft import generate_task
    for task_id in range(10):
        task = generate_task(task_id, 3)
        s = ModelSession(textcraft_backend(policy, task, 0, "depdag", "textcraft-3"))
        p = agents.plan_dep_dag(s, task.objective(), "textcraft-3")
        log = run_depdag_episode(p, TextCraftEnv(3, tasks={task_id: task}), BudgetConfig(50, 5), s, task_id, 0)
        assert log.node_sequence() == list(range(len(log.segments)))


# ReAct

def test_react_episode_metadata_and_ledger():
    log = scripted_react_episode(4, 0, TextCraftPolicy())
    assert log.method == "react" and log.success
    assert log.total_tokens > 0
    assert log.metadata["unified_budget"] == 30


# files

def test_log_layout_and_read_back(tmp_path):
    log = scripted_react_episode(4, 2, TextCraftPolicy())
    path = orchestrator.write_log(tmp_path, "react", log)
    assert path == tmp_path / "react" / "4_2.log"
    assert [lg.dumps() for lg in orchestrator.read_logs(tmp_path)] == [log.dumps()]
    assert not list(tmp_path.rglob("*.tmp"))
