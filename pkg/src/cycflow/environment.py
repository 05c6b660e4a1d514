"""Tool/environment contract shared by every benchmark, plus state fingerprints."""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

UNKNOWN_TOOL = "unknown tool"


class InvalidArguments(Exception):
    """Raised by a tool handler; surfaced to the agent as an observation."""


@dataclass(frozen=True)
class ToolParam:
    name: str
    kind: str  # "string" | "integer" | "array"
    description: str = ""
    allowed: tuple[str, ...] | None = None
    minimum: int | None = None
    required: bool = True

    def json_schema(self) -> dict[str, Any]:
        schema: dict[str, Any] = {"type": self.kind, "description": self.description}
        if self.kind == "array":
            schema["items"] = {"type": "string"}
        if self.allowed is not None:
            schema["enum"] = list(self.allowed)
        if self.minimum is not None:
            schema["minimum"] = self.minimum
        return schema


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()
    returns_description: str = ""

    def json_schema(self) -> dict[str, Any]:
        return {
            "type": "object",
            "properties": {p.name: p.json_schema() for p in self.parameters},
            "required": [p.name for p in self.parameters if p.required],
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.json_schema(),
            "returns": self.returns_description,
        }


@dataclass(frozen=True)
class StateComponents:
    inventory: str
    admissible: str
    last_action: str
    observation: str

    def as_tuple(self) -> tuple[str, str, str, str]:
        return (self.inventory, self.admissible, self.last_action, self.observation)


@dataclass
class ToolCallRecord:
    sequence_number: int
    tool_name: str
    arguments: Any
    observation: str
    success_flag: bool
    malformed: bool = False
    state: StateComponents | None = None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "seq": self.sequence_number,
            "tool": self.tool_name,
            "arguments": self.arguments,
            "observation": self.observation,
            "success": self.success_flag,
            "malformed": self.malformed,
        }
        if self.state is not None:
            data["state"] = list(self.state.as_tuple())
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolCallRecord":
        state = data.get("state")
        return cls(
            sequence_number=int(data["seq"]),
            tool_name=str(data["tool"]),
            arguments=data.get("arguments"),
            observation=str(data["observation"]),
            success_flag=bool(data["success"]),
            malformed=bool(data.get("malformed", False)),
            state=StateComponents(*state) if state is not None else None,
        )


@dataclass(frozen=True)
class EnvStateFingerprint:
    digest: str


def fingerprint(inventory: str, admissible: str, last_action: str, observation: str) -> EnvStateFingerprint:
    """SHA-256 over length-prefixed fields so no two distinct tuples share an encoding."""
    h = hashlib.sha256()
    for part in (inventory, admissible, last_action, observation):
        raw = part.encode("utf-8")
        h.update(len(raw).to_bytes(8, "big"))
        h.update(raw)
    return EnvStateFingerprint(h.hexdigest())


def unique_state_count(states: Iterable[StateComponents | Sequence[str]]) -> int:
    digests = set()
    for s in states:
        parts = s.as_tuple() if isinstance(s, StateComponents) else tuple(s)
        digests.add(fingerprint(*parts).digest)
    return len(digests)


class Environment(ABC):
    """Episodic tool interface.

    Subclasses implement :meth:`_reset`, :meth:`_dispatch`, :meth:`is_success`,
    :meth:`tool_specs` and :meth:`state_components`. Every :meth:`invoke` is
    counted, including unknown tools and invalid arguments. One instance serves
    one episode at a time.
    """

    def __init__(self, record_states: bool = False) -> None:
        self.record_states = record_states
        self.calls: list[ToolCallRecord] = []
        self._task_id: Any = None

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def reset(self, task_id: Any) -> str:
        self.calls = []
        self._task_id = task_id
        return self._reset(task_id)

    def invoke(self, tool_name: str, arguments: Any = None, allowed_tools: Iterable[str] | None = None) -> ToolCallRecord:
        if self._task_id is None:
            raise RuntimeError("reset() must be called before invoke()")
        names = {spec.name for spec in self.tool_specs()}
        allowed = names if allowed_tools is None else names & set(allowed_tools)
        malformed = False
        if tool_name not in allowed:
            observation = f"{UNKNOWN_TOOL}: {tool_name}"
            malformed = True
        else:
            try:
                observation = self._dispatch(tool_name, arguments if arguments is not None else {})
            except InvalidArguments as exc:
                observation = f"invalid arguments: {exc}"
                malformed = True
        self._after_call(tool_name, arguments, observation)
        record = ToolCallRecord(
            sequence_number=len(self.calls) + 1,
            tool_name=tool_name,
            arguments=arguments,
            observation=observation,
            success_flag=self.is_success(),
            malformed=malformed,
            state=self.state_components() if self.record_states else None,
        )
        self.calls.append(record)
        return record

    def _after_call(self, tool_name: str, arguments: Any, observation: str) -> None:
        """Hook for subclasses that track the last action/observation."""

    @abstractmethod
    def _reset(self, task_id: Any) -> str: ...

    @abstractmethod
    def _dispatch(self, tool_name: str, arguments: Mapping[str, Any]) -> str: ...

    @abstractmethod
    def is_success(self) -> bool: ...

    @abstractmethod
    def tool_specs(self) -> list[ToolSpec]: ...

    @abstractmethod
    def state_components(self) -> StateComponents: ...

    def objective(self) -> str:
        return ""

    def tool_names(self) -> list[str]:
        return [s.name for s in self.tool_specs()]


def replay_calls(env: Environment, task_id: Any, records: Sequence[ToolCallRecord]) -> list[str]:
    """Re-issue a logged call sequence on a fresh reset; returns the new observations."""
    env.reset(task_id)
    out = []
    for r in records:
        # calls rejected by a specialist scope never reached the handler
        allowed: list[str] | None = [] if r.observation.startswith(UNKNOWN_TOOL) else None
        out.append(env.invoke(r.tool_name, r.arguments, allowed_tools=allowed).observation)
    return out
