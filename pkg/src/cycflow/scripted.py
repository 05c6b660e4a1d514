"""Deterministic scripted agents for offline runs.

A script document is JSON in one of two shapes:

* static: ``{"roles": {"router": [...], ...}, "cycle": false}``; every episode
  gets a fresh backend replaying the same per-role lists;
* generated: ``{"generator": "textcraft", "params": {...}}``; a policy that
  solves TextCraft tasks with configurable noise, seeded per episode.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Mapping

from . import agents
from .gateway import (ANALYZER, EXECUTOR, PLANNER, REACT, ROUTER, SUMMARIZER, CompletionRequest,
                      ScriptedBackend)
from .graph import GENERALIST
from .textcraft import CraftingTask, command_to_call, solution_commands

BackendFactory = Callable[[CraftingTask | None, int, str], ScriptedBackend]

_CURRENT = re.compile(r"Current subtask: \[(\d+)\]")
_CANDIDATE = re.compile(r"^(\d+): ", re.MULTILINE)


@dataclass(frozen=True)
class TextCraftPolicy:
    """Knobs of the scripted TextCraft team; all probabilities are per model call."""

    waste: float = 0.0          # issue a useless tool call instead of progress
    early_done: float = 0.0     # declare the subtask done without acting
    stall: float = 0.0          # reply with neither a tool call nor done
    self_loop: float = 0.3      # router repeats the current node
    random_route: float = 0.0   # router picks a uniformly random node
    router_invalid: float = 0.0
    analyzer_invalid: float = 0.0
    planner_invalid: float = 0.0
    nodes: int = 0              # 0: use the default four-node graph; else a synthetic n-node graph
    scope_aware: bool = True    # hand control back when the next command's tool is out of scope

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TextCraftPolicy":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown policy parameters: {sorted(unknown)}")
        return cls(**dict(data))


def synthetic_plan(n: int, rng: random.Random) -> dict[str, Any]:
    """Planner output with ``n`` generalist nodes and criteria of varying length."""
    words = ["inventory", "shows", "missing", "items", "recipe", "requires", "more", "materials",
             "target", "crafted", "ready", "progress", "stalled", "repeat", "gather"]
    nodes = [{"index": i, "name": f"Step_{i}", "description": f"Make progress on part {i} of the objective",
              "tool_scope": GENERALIST} for i in range(n)]
    criteria = [{"from": f, "to": t, "text": "if " + " ".join(rng.choice(words) for _ in range(rng.randint(2, 12)))}
                for f in range(n) for t in range(n)]
    return {"nodes": nodes, "criteria": criteria,
            "steps": [{"name": x["name"], "description": x["description"]} for x in nodes]}


def default_plan(benchmark: str, tool_exposure: str) -> dict[str, Any]:
    graph = agents.default_graph(benchmark, tool_exposure=tool_exposure)
    assert graph is not None
    data = graph.to_dict()
    data["steps"] = [{"name": n.name, "description": n.description} for n in graph.nodes]
    return data


def textcraft_backend(policy: TextCraftPolicy, task: CraftingTask | None, seed: int, method: str,
                      benchmark: str = "textcraft", tool_exposure: str = "generalist") -> ScriptedBackend:
    """Scripted planner/executor/analyzer/router/summarizer for one episode."""
    task_key = task.task_id if task is not None else "none"
    rng = random.Random(f"script:{seed}:{task_key}:{method}")
    plan_rng = random.Random(f"plan:{seed}:{task_key}:{policy.nodes}")
    commands = [command_to_call(c) for c in solution_commands(task)] if task is not None else []
    cursor = {"next": 0}

    def planner(ordinal: int, request: CompletionRequest) -> Any:
        if rng.random() < policy.planner_invalid:
            return {"content": "I cannot produce a plan."}
        plan = synthetic_plan(policy.nodes, plan_rng) if policy.nodes else default_plan(benchmark, tool_exposure)
        return {"content": plan}

    def actor(ordinal: int, request: CompletionRequest) -> Any:
        allowed = {t["name"] for t in request.tool_schemas or []}
        u = rng.random()
        if u < policy.stall:
            return {"content": "Let me think about this."}
        u -= policy.stall
        if u < policy.early_done:
            return {"content": {"done": True, "summary": "nothing more to do here"}}
        u -= policy.early_done
        if u < policy.waste:
            tool = "textcraft_inventory" if "textcraft_inventory" in allowed or not allowed else sorted(allowed)[0]
            args: dict[str, Any] = {} if tool == "textcraft_inventory" else {"command": "inventory"}
            return {"content": {"done": False, "summary": "checking"},
                    "tool_invocations": [{"name": tool, "arguments": args}]}
        if cursor["next"] >= len(commands):
            return {"content": {"done": True, "summary": "all planned commands issued"}}
        tool, args = commands[cursor["next"]]
        if policy.scope_aware and allowed and tool not in allowed:
            return {"content": {"done": True, "summary": f"next step needs {tool}"}}
        cursor["next"] += 1
        return {"content": {"done": False, "summary": f"issued {tool}"},
                "tool_invocations": [{"name": tool, "arguments": args}]}

    def analyzer(ordinal: int, request: CompletionRequest) -> Any:
        if rng.random() < policy.analyzer_invalid:
            return {"content": {"progress_summary": 7}}
        done = cursor["next"]
        return {"content": {
            "progress_summary": f"{done} of {len(commands)} solution steps issued",
            "verified_facts": [f"after segment {ordinal + 1}: {done} steps issued"],
            "detected_loops": [],
            "guidance_for_next": "continue with the next missing ingredient",
        }}

    def router(ordinal: int, request: CompletionRequest) -> Any:
        text = request.messages[0].content
        m = _CURRENT.search(text)
        current = int(m.group(1)) if m else 0
        n = len(_CANDIDATE.findall(text.split("Candidate transitions", 1)[-1])) or 1
        u = rng.random()
        if u < policy.router_invalid:
            return {"content": "index: none"}
        u -= policy.router_invalid
        if u < policy.random_route:
            nxt = rng.randrange(n)
        elif u - policy.random_route < policy.self_loop:
            nxt = current
        else:
            nxt = (current + 1) % n
        return {"content": {"next_index": nxt, "justification": f"scripted choice from {current}"}}

    def summarizer(ordinal: int, request: CompletionRequest) -> Any:
        return {"content": {"summary": f"Task {task_key}: list recipes, get raw materials in the exact "
                                       "quantities, craft intermediates bottom-up, then craft the target."}}

    return ScriptedBackend({PLANNER: planner, EXECUTOR: actor, REACT: actor, ANALYZER: analyzer,
                            ROUTER: router, SUMMARIZER: summarizer})


def backend_factory(document: Mapping[str, Any], benchmark: str = "textcraft",
                    tool_exposure: str = "generalist") -> BackendFactory:
    """Per-episode backend builder from a parsed script document."""
    if "generator" in document:
        if document["generator"] != "textcraft":
            raise ValueError(f"unknown script generator {document['generator']!r}")
        policy = TextCraftPolicy.from_mapping(document.get("params", {}))
        return lambda task, seed, method: textcraft_backend(policy, task, seed, method, benchmark, tool_exposure)
    frozen = json.loads(json.dumps(document))
    return lambda task, seed, method: ScriptedBackend.from_document(json.loads(json.dumps(frozen)))


def load_script(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def policy_document(policy: TextCraftPolicy) -> dict[str, Any]:
    return {"generator": "textcraft", "params": asdict(policy)}
