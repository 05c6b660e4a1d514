"""Subtask graphs: complete cyclic graphs with per-edge criteria, and forward-only DepDAG plans."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

GENERALIST = "generalist"


class GraphError(ValueError):
    """Base class for graph construction and validation failures."""


class EmptyNodeSet(GraphError):
    pass


class MissingCriterion(GraphError):
    def __init__(self, from_index: int, to_index: int):
        super().__init__(f"no criterion for edge {from_index}->{to_index}")
        self.from_index = from_index
        self.to_index = to_index


class DanglingIndex(GraphError):
    def __init__(self, index: Any):
        super().__init__(f"index {index!r} does not reference a node")
        self.index = index


class Regime(str, Enum):
    SPEC_CYC = "SpecCyc"
    GEN_CYC = "GenCyc"


@dataclass(frozen=True)
class SubtaskNode:
    """One executable subtask.

    ``tool_scope`` is ``None`` for a generalist executor (every environment tool)
    or a tuple of tool names for a specialist.
    """

    index: int
    name: str
    description: str
    tool_scope: tuple[str, ...] | None = None

    @property
    def is_generalist(self) -> bool:
        return self.tool_scope is None

    def allowed_tools(self, all_tools: Iterable[str]) -> list[str]:
        all_tools = list(all_tools)
        if self.tool_scope is None:
            return all_tools
        return [t for t in all_tools if t in self.tool_scope]

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "name": self.name,
            "description": self.description,
            "tool_scope": GENERALIST if self.tool_scope is None else list(self.tool_scope),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], index: int | None = None) -> "SubtaskNode":
        scope = data.get("tool_scope", GENERALIST)
        if scope is None or scope == GENERALIST:
            tool_scope = None
        elif isinstance(scope, str):
            tool_scope = (scope,)
        else:
            tool_scope = tuple(str(s) for s in scope)
        return cls(
            index=int(data["index"]) if index is None else index,
            name=str(data.get("name", "")),
            description=str(data.get("description", "")),
            tool_scope=tool_scope,
        )


@dataclass(frozen=True)
class TransitionCriterion:
    from_index: int
    to_index: int
    text: str

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class TaskGraph:
    """Complete directed graph over subtasks, self-loops included.

    Immutable after construction; build instances with :func:`build_complete_graph`.
    """

    nodes: tuple[SubtaskNode, ...]
    criteria: Mapping[tuple[int, int], TransitionCriterion] = field(repr=False)
    regime: Regime

    def __post_init__(self) -> None:
        validate_graph(self)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def criterion(self, from_index: int, to_index: int) -> str:
        try:
            return self.criteria[(from_index, to_index)].text
        except KeyError:
            raise DanglingIndex((from_index, to_index)) from None

    def validate_tool_scopes(self, tool_names: Iterable[str]) -> None:
        known = set(tool_names)
        for node in self.nodes:
            if node.tool_scope is None:
                continue
            if not node.tool_scope:
                raise GraphError(f"node {node.index} has an empty specialist tool scope")
            unknown = sorted(set(node.tool_scope) - known)
            if unknown:
                raise GraphError(f"node {node.index} references unknown tools {unknown}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime.value,
            "nodes": [n.to_dict() for n in self.nodes],
            "criteria": [
                {"from": f, "to": t, "text": self.criteria[(f, t)].text}
                for f, t in sorted(self.criteria)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskGraph":
        nodes = [SubtaskNode.from_dict(n) for n in data["nodes"]]
        criteria = {(int(c["from"]), int(c["to"])): str(c["text"]) for c in data["criteria"]}
        return build_complete_graph(nodes, criteria, Regime(data["regime"]))

    @classmethod
    def loads(cls, text: str) -> "TaskGraph":
        return cls.from_dict(json.loads(text))


def validate_graph(graph: TaskGraph) -> None:
    n = len(graph.nodes)
    if n == 0:
        raise EmptyNodeSet("a task graph needs at least one node")
    for pos, node in enumerate(graph.nodes):
        if node.index != pos:
            raise GraphError(f"node at position {pos} has index {node.index}")
        if not node.name.strip():
            raise GraphError(f"node {pos} has an empty name")
    for key, crit in graph.criteria.items():
        f, t = key
        if not (0 <= f < n and 0 <= t < n):
            raise DanglingIndex(key)
        if (crit.from_index, crit.to_index) != key:
            raise GraphError(f"criterion keyed {key} describes {crit.from_index}->{crit.to_index}")
        if not crit.text.split():
            raise GraphError(f"criterion {key} is empty")
    for f in range(n):
        for t in range(n):
            if (f, t) not in graph.criteria:
                raise MissingCriterion(f, t)
    if len(graph.criteria) != n * n:
        raise GraphError(f"expected {n * n} criteria, found {len(graph.criteria)}")


def build_complete_graph(
    nodes: Sequence[SubtaskNode],
    criteria: Mapping[tuple[int, int], str],
    regime: Regime | str = Regime.SPEC_CYC,
    default_criterion: str | None = None,
) -> TaskGraph:
    """Validate nodes and criteria into a complete graph with ``len(nodes) ** 2`` edges.

    Node indices are renumbered to list order; criteria keys are interpreted
    against the indices the nodes arrived with. Missing pairs take
    ``default_criterion`` when given, otherwise raise :class:`MissingCriterion`.
    """
    if not nodes:
        raise EmptyNodeSet("a task graph needs at least one node")
    position: dict[int, int] = {}
    for pos, node in enumerate(nodes):
        if node.index in position:
            raise GraphError(f"duplicate node index {node.index}")
        position[node.index] = pos
    renumbered = tuple(
        SubtaskNode(pos, node.name, node.description, node.tool_scope) for pos, node in enumerate(nodes)
    )

    table: dict[tuple[int, int], TransitionCriterion] = {}
    for (f, t), text in criteria.items():
        if f not in position:
            raise DanglingIndex(f)
        if t not in position:
            raise DanglingIndex(t)
        key = (position[f], position[t])
        table[key] = TransitionCriterion(key[0], key[1], str(text))

    n = len(renumbered)
    for f in range(n):
        for t in range(n):
            if (f, t) in table:
                continue
            if default_criterion is None:
                raise MissingCriterion(nodes[f].index, nodes[t].index)
            table[(f, t)] = TransitionCriterion(f, t, default_criterion)

    return TaskGraph(nodes=renumbered, criteria=table, regime=Regime(regime))


def outgoing_criteria(graph: TaskGraph, from_index: int) -> list[tuple[int, str]]:
    """All routing candidates from ``from_index``, ordered by target index."""
    if not 0 <= from_index < graph.size:
        raise DanglingIndex(from_index)
    return [(t, graph.criteria[(from_index, t)].text) for t in range(graph.size)]


def graph_statistics(graph: TaskGraph) -> tuple[int, float]:
    """(node count, mean whitespace word count over all n² criteria)."""
    words = sum(c.word_count for c in graph.criteria.values())
    return graph.size, words / len(graph.criteria)


@dataclass(frozen=True)
class DepDagPlan:
    """Ordered, forward-only list of subtasks."""

    steps: tuple[SubtaskNode, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise EmptyNodeSet("a DepDAG plan needs at least one step")
        for pos, step in enumerate(self.steps):
            if step.index != pos:
                raise GraphError(f"step at position {pos} has index {step.index}")
            if not step.name.strip():
                raise GraphError(f"step {pos} has an empty name")

    @classmethod
    def from_steps(cls, steps: Sequence[SubtaskNode]) -> "DepDagPlan":
        return cls(tuple(SubtaskNode(i, s.name, s.description, s.tool_scope) for i, s in enumerate(steps)))

    def to_dict(self) -> dict[str, Any]:
        return {"steps": [s.to_dict() for s in self.steps]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DepDagPlan":
        return cls.from_steps([SubtaskNode.from_dict(s, index=i) for i, s in enumerate(data["steps"])])
