"""Episode record types: router memory, segments, routing decisions and episode logs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .environment import StateComponents, ToolCallRecord
from .gateway import TokenUsage


class EndedBy:
    LOCAL_BUDGET = "LocalBudget"
    EXECUTOR_DONE = "ExecutorDone"
    ENV_SUCCESS = "EnvSuccess"
    FAULT_REDIRECT = "FaultRedirect"


class Outcome:
    SUCCESS = "Success"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    PLAN_EXHAUSTED = "PlanExhausted"
    STALLED = "Stalled"
    ABORTED = "Aborted"


MEMORY_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "progress_summary": {"type": "string"},
        "verified_facts": {"type": "array", "items": {"type": "string"}},
        "detected_loops": {"type": "array", "items": {"type": "string"}},
        "guidance_for_next": {"type": "string"},
    },
    "required": ["progress_summary", "verified_facts", "detected_loops", "guidance_for_next"],
}


@dataclass
class RouterMemory:
    progress_summary: str = ""
    verified_facts: list[str] = field(default_factory=list)
    detected_loops: list[str] = field(default_factory=list)
    guidance_for_next: str = ""
    segment_count: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "progress_summary": self.progress_summary,
            "verified_facts": list(self.verified_facts),
            "detected_loops": list(self.detected_loops),
            "guidance_for_next": self.guidance_for_next,
            "segment_count": self.segment_count,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RouterMemory":
        return cls(
            progress_summary=str(data.get("progress_summary", "")),
            verified_facts=[str(x) for x in data.get("verified_facts", [])],
            detected_loops=[str(x) for x in data.get("detected_loops", [])],
            guidance_for_next=str(data.get("guidance_for_next", "")),
            segment_count=int(data.get("segment_count", 0)),
            notes=[str(x) for x in data.get("notes", [])],
        )

    def serialized_size(self) -> int:
        return len(json.dumps(self.to_dict(), sort_keys=True))

    def enforce_budget(self, max_chars: int) -> "RouterMemory":
        """Drop oldest notes, facts, then loops; finally clip free text until within budget."""
        for name in ("notes", "verified_facts", "detected_loops"):
            items = getattr(self, name)
            while items and self.serialized_size() > max_chars:
                items.pop(0)
        for name in ("progress_summary", "guidance_for_next"):
            overflow = self.serialized_size() - max_chars
            if overflow > 0:
                text = getattr(self, name)
                setattr(self, name, text[: max(0, len(text) - overflow)])
        return self

    def render(self) -> str:
        return json.dumps({k: v for k, v in self.to_dict().items() if k != "notes" or v}, indent=1, sort_keys=True)


@dataclass
class SegmentRecord:
    node_index: int
    tool_calls: list[ToolCallRecord]
    summary: str
    token_usage: TokenUsage
    ended_by: str
    stalled: bool = False
    redirect_to: int | None = None

    @property
    def delta_k(self) -> int:
        return len(self.tool_calls)

    def to_dict(self) -> dict[str, Any]:
        data = {
            "node_index": self.node_index,
            "delta_k": self.delta_k,
            "ended_by": self.ended_by,
            "summary": self.summary,
            "token_usage": self.token_usage.to_dict(),
            "stalled": self.stalled,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
        }
        if self.redirect_to is not None:
            data["redirect_to"] = self.redirect_to
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SegmentRecord":
        return cls(
            node_index=int(data["node_index"]),
            tool_calls=[ToolCallRecord.from_dict(c) for c in data["tool_calls"]],
            summary=str(data.get("summary", "")),
            token_usage=TokenUsage.from_dict(data.get("token_usage", {})),
            ended_by=str(data["ended_by"]),
            stalled=bool(data.get("stalled", False)),
            redirect_to=data.get("redirect_to"),
        )


@dataclass
class RouterDecision:
    from_index: int
    next_index: int
    justification: str
    considered_candidates: int
    fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "from": self.from_index,
            "next_index": self.next_index,
            "justification": self.justification,
            "considered_candidates": self.considered_candidates,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RouterDecision":
        return cls(int(data["from"]), int(data["next_index"]), str(data.get("justification", "")),
                   int(data["considered_candidates"]), bool(data.get("fallback", False)))


@dataclass(frozen=True)
class FaultEvent:
    sequence_number: int
    from_index: int
    redirected_to: int

    def to_dict(self) -> dict[str, int]:
        return {"seq": self.sequence_number, "from": self.from_index, "redirected_to": self.redirected_to}


@dataclass(frozen=True)
class DemoSummary:
    source_task_id: int
    benchmark: str
    summary_text: str


@dataclass
class DemoSet:
    benchmark: str
    entries: list[DemoSummary]
    zero_shot: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "benchmark": self.benchmark,
            "zero_shot": self.zero_shot,
            "entries": [{"source_task_id": d.source_task_id, "summary_text": d.summary_text}
                        for d in self.entries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "DemoSet":
        data = json.loads(text)
        entries = [DemoSummary(int(e["source_task_id"]), data["benchmark"], str(e["summary_text"]))
                   for e in data["entries"]]
        return cls(data["benchmark"], entries, bool(data.get("zero_shot", False)))


@dataclass
class EpisodeLog:
    """Everything needed to audit or recompute metrics for one episode."""

    metadata: dict[str, Any]
    plan: dict[str, Any] | None
    segments: list[SegmentRecord]
    decisions: list[RouterDecision]
    outcome: str
    ledger: dict[str, Any]
    fault_events: list[FaultEvent] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    @property
    def method(self) -> str:
        return str(self.metadata.get("method", ""))

    @property
    def task_id(self) -> int:
        return int(self.metadata["task_id"])

    @property
    def seed(self) -> int:
        return int(self.metadata.get("seed", 0))

    @property
    def success(self) -> bool:
        return self.outcome == Outcome.SUCCESS

    @property
    def k_final(self) -> int:
        return sum(s.delta_k for s in self.segments)

    @property
    def total_tokens(self) -> int:
        return int(self.ledger["total"]["total_tokens"])

    def node_sequence(self) -> list[int]:
        return [s.node_index for s in self.segments]

    def transitions(self, include_faults: bool = True) -> list[tuple[int, int]]:
        pairs = []
        for prev, nxt in zip(self.segments, self.segments[1:]):
            if prev.ended_by == EndedBy.FAULT_REDIRECT and not include_faults:
                continue
            pairs.append((prev.node_index, nxt.node_index))
        return pairs

    def states(self) -> list[StateComponents]:
        out = []
        for s in self.segments:
            for c in s.tool_calls:
                if c.state is None:
                    raise ValueError(f"episode {self.task_id} was logged without state snapshots")
                out.append(c.state)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": self.metadata,
            "plan": self.plan,
            "segments": [s.to_dict() for s in self.segments],
            "decisions": [d.to_dict() for d in self.decisions],
            "outcome": self.outcome,
            "k_final": self.k_final,
            "ledger": self.ledger,
            "fault_events": [f.to_dict() for f in self.fault_events],
            "events": list(self.events),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EpisodeLog":
        return cls(
            metadata=dict(data["metadata"]),
            plan=data.get("plan"),
            segments=[SegmentRecord.from_dict(s) for s in data["segments"]],
            decisions=[RouterDecision.from_dict(d) for d in data["decisions"]],
            outcome=str(data["outcome"]),
            ledger=dict(data["ledger"]),
            fault_events=[FaultEvent(int(f["seq"]), int(f["from"]), int(f["redirected_to"]))
                          for f in data.get("fault_events", [])],
            events=[str(e) for e in data.get("events", [])],
        )

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        return cls.from_dict(json.loads(text))
