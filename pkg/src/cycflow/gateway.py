"""Chat-completion access for every agent role, live over HTTP or from a script.

A :class:`ModelSession` belongs to one episode: it numbers calls per role (the
scripted lookup key), validates responses, re-prompts once on a schema
violation, and accumulates a token ledger.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx
import jsonschema
import jsonschema.exceptions
import jsonschema.validators

log = logging.getLogger(__name__)

PLANNER = "planner"
EXECUTOR = "executor"
ANALYZER = "analyzer"
ROUTER = "router"
REACT = "react"
SUMMARIZER = "summarizer"
CORE_ROLES = (PLANNER, EXECUTOR, ROUTER)


class GatewayError(RuntimeError):
    pass


class EndpointUnreachable(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    def __init__(self, role: str, ordinal: int):
        super().__init__(f"script has no response for ({role}, {ordinal})")
        self.role = role
        self.ordinal = ordinal


class SchemaViolation(GatewayError):
    def __init__(self, message: str, response: "CompletionResponse | None" = None):
        super().__init__(message)
        self.response = response


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt_tokens + other.prompt_tokens,
                          self.completion_tokens + other.completion_tokens)

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens,
                "total_tokens": self.total_tokens}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TokenUsage":
        return cls(int(data.get("prompt_tokens", 0)), int(data.get("completion_tokens", 0)))


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant | tool
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass
class CompletionRequest:
    agent_role: str
    model_tier: str
    messages: list[Message]
    tool_schemas: list[dict[str, Any]] | None = None
    response_schema: dict[str, Any] | None = None
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("the first message must be a system or user message")


@dataclass(frozen=True)
class ToolInvocation:
    name: str
    arguments: Any

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "arguments": self.arguments}


@dataclass
class CompletionResponse:
    content: Any
    tool_invocations: list[ToolInvocation] = field(default_factory=list)
    usage: TokenUsage = field(default_factory=TokenUsage)
    parsed: Any = None

    @classmethod
    def from_entry(cls, entry: Any) -> "CompletionResponse":
        if isinstance(entry, CompletionResponse):
            return entry
        if isinstance(entry, str) or entry is None:
            return cls(content=entry)
        invocations = [
            ToolInvocation(str(t["name"]), t.get("arguments", {}))
            for t in entry.get("tool_invocations", [])
        ]
        usage = entry.get("usage")
        return cls(
            content=entry.get("content"),
            tool_invocations=invocations,
            usage=TokenUsage.from_dict(usage) if usage is not None else TokenUsage(),
        )


@dataclass(frozen=True)
class CallRecord:
    role: str
    ordinal: int
    usage: TokenUsage


class TokenLedger:
    """Per-episode usage log; thread-safe so sessions may be inspected mid-run."""

    def __init__(self) -> None:
        self._calls: list[CallRecord] = []
        self._lock = threading.Lock()

    def add(self, role: str, ordinal: int, usage: TokenUsage) -> None:
        with self._lock:
            self._calls.append(CallRecord(role, ordinal, usage))

    @property
    def calls(self) -> list[CallRecord]:
        with self._lock:
            return list(self._calls)

    def snapshot(self) -> dict[str, Any]:
        per_role: dict[str, TokenUsage] = {r: TokenUsage() for r in CORE_ROLES}
        for c in self.calls:
            per_role[c.role] = per_role.get(c.role, TokenUsage()) + c.usage
        grand = TokenUsage()
        for u in per_role.values():
            grand = grand + u
        return {
            "per_role": {r: u.to_dict() for r, u in sorted(per_role.items())},
            "calls": len(self._calls),
            "total": grand.to_dict(),
        }


def ledger_total(snapshot: Mapping[str, Any]) -> int:
    return int(snapshot["total"]["total_tokens"])


def synthetic_usage(request: CompletionRequest, response: CompletionResponse) -> TokenUsage:
    """Deterministic ~4-chars-per-token estimate used when a script omits usage."""
    prompt_chars = sum(len(m.content) for m in request.messages)
    body = json.dumps(
        {"content": response.content, "tools": [t.to_dict() for t in response.tool_invocations]},
        sort_keys=True,
    )
    return TokenUsage(math.ceil(prompt_chars / 4), math.ceil(len(body) / 4))


ScriptSource = Sequence[Any] | Callable[[int, CompletionRequest], Any]


class ScriptedBackend:
    """Pre-authored responses keyed by (agent role, per-role ordinal).

    ``script`` maps a role to a list of response entries or to a callable
    ``(ordinal, request) -> entry``; a callable returning ``None`` means the
    script is exhausted. With ``cycle`` a list wraps around instead.
    """

    def __init__(self, script: Mapping[str, ScriptSource], cycle: bool = False) -> None:
        self.script = dict(script)
        self.cycle = cycle

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "ScriptedBackend":
        roles = doc.get("roles", {k: v for k, v in doc.items() if k != "cycle"})
        return cls(roles, cycle=bool(doc.get("cycle", False)))

    def respond(self, request: CompletionRequest, ordinal: int) -> CompletionResponse:
        source = self.script.get(request.agent_role)
        entry: Any = None
        if callable(source):
            entry = source(ordinal, request)
            if entry is None:
                raise ScriptExhausted(request.agent_role, ordinal)
        elif source:
            if ordinal < len(source):
                entry = source[ordinal]
            elif self.cycle:
                entry = source[ordinal % len(source)]
            else:
                raise ScriptExhausted(request.agent_role, ordinal)
        else:
            raise ScriptExhausted(request.agent_role, ordinal)
        response = CompletionResponse.from_entry(entry)
        has_usage = isinstance(entry, Mapping) and "usage" in entry
        if not has_usage and not isinstance(entry, CompletionResponse):
            response.usage = synthetic_usage(request, response)
        return response


@dataclass
class GatewayConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key: str | None = None
    model_map: dict[str, str] = field(default_factory=dict)
    timeout: float = 60.0
    max_retries: int = 3
    backoff_seconds: float = 0.5
    concurrency: int = 4

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], environ: Mapping[str, str] | None = None) -> "GatewayConfig":
        env = os.environ if environ is None else environ
        cfg = cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
        if env.get("CYCFLOW_BASE_URL"):
            cfg.base_url = env["CYCFLOW_BASE_URL"]
        if env.get("CYCFLOW_API_KEY"):
            cfg.api_key = env["CYCFLOW_API_KEY"]
        if env.get("CYCFLOW_CONCURRENCY"):
            cfg.concurrency = int(env["CYCFLOW_CONCURRENCY"])
        return cfg


class HttpBackend:
    """OpenAI-style ``/chat/completions`` client with bounded retries."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, config: GatewayConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, config.concurrency))

    def payload(self, request: CompletionRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.config.model_map.get(request.model_tier, request.model_tier),
            "messages": [m.to_dict() for m in request.messages],
            "max_tokens": request.max_tokens,
        }
        if request.tool_schemas:
            body["tools"] = [
                {"type": "function", "function": {"name": t["name"], "description": t.get("description", ""),
                                                  "parameters": t.get("parameters", {})}}
                for t in request.tool_schemas
            ]
        if request.response_schema is not None:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": f"{request.agent_role}_response", "schema": request.response_schema},
            }
        return body

    def respond(self, request: CompletionRequest, ordinal: int) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = self.payload(request)
        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    self._sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
                try:
                    resp = self.client.post(url, json=body, headers=headers)
                except httpx.TransportError as exc:
                    last_error = exc
                    log.warning("transport error on attempt %d: %s", attempt + 1, exc)
                    continue
                if resp.status_code in self.RETRY_STATUS:
                    last_error = GatewayError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return self.parse(resp.json())
        raise EndpointUnreachable(f"{url} failed after {self.config.max_retries} retries: {last_error}")

    @staticmethod
    def parse(data: Mapping[str, Any]) -> CompletionResponse:
        message = data["choices"][0]["message"]
        invocations = []
        for call in message.get("tool_calls") or []:
            fn = call["function"]
            args = fn.get("arguments") or "{}"
            try:
                parsed_args = json.loads(args) if isinstance(args, str) else args
            except json.JSONDecodeError:
                parsed_args = {"_raw": args}
            invocations.append(ToolInvocation(fn["name"], parsed_args))
        usage = data.get("usage") or {}
        return CompletionResponse(
            content=message.get("content"),
            tool_invocations=invocations,
            usage=TokenUsage.from_dict(usage),
        )


def decode_content(content: Any) -> Any:
    """Structured content arrives either as an object or as JSON text."""
    if isinstance(content, str):
        text = content.strip()
        if text.startswith("```"):
            text = text.strip("`")
            text = text[text.find("\n") + 1:] if "\n" in text else text
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return content
    return content


class ModelSession:
    """One episode's view of the model backend.

    ``validator`` passed to :meth:`complete` receives the decoded content and
    returns the parsed value or raises ``ValueError``; a response schema is
    checked first. One re-prompt carries the violation text; a second failure
    raises :class:`SchemaViolation`.
    """

    def __init__(self, backend: Any, tiers: Mapping[str, str] | None = None) -> None:
        self.backend = backend
        self.tiers = dict(tiers or {})
        self.ledger = TokenLedger()
        self._ordinals: dict[str, int] = {}
        self._lock = threading.Lock()

    def tier_for(self, role: str) -> str:
        return self.tiers.get(role, self.tiers.get("default", "default"))

    def _next_ordinal(self, role: str) -> int:
        with self._lock:
            n = self._ordinals.get(role, 0)
            self._ordinals[role] = n + 1
            return n

    def _send(self, request: CompletionRequest) -> CompletionResponse:
        ordinal = self._next_ordinal(request.agent_role)
        response = self.backend.respond(request, ordinal)
        self.ledger.add(request.agent_role, ordinal, response.usage)
        return response

    def complete(self, request: CompletionRequest,
                 validator: Callable[[Any], Any] | None = None) -> CompletionResponse:
        response = self._send(request)
        try:
            response.parsed = self._check(request, response, validator)
            return response
        except ValueError as exc:
            problem = str(exc)
        retry = CompletionRequest(
            agent_role=request.agent_role,
            model_tier=request.model_tier,
            messages=list(request.messages) + [
                Message("assistant", _as_text(response.content)),
                Message("user", f"Your previous response was invalid: {problem}. Respond again, "
                                "following the required format exactly."),
            ],
            tool_schemas=request.tool_schemas,
            response_schema=request.response_schema,
            max_tokens=request.max_tokens,
        )
        second = self._send(retry)
        try:
            second.parsed = self._check(retry, second, validator)
            return second
        except ValueError as exc:
            raise SchemaViolation(str(exc), second) from None

    @staticmethod
    def _check(request: CompletionRequest, response: CompletionResponse,
               validator: Callable[[Any], Any] | None) -> Any:
        content = decode_content(response.content)
        if request.response_schema is not None and not response.tool_invocations:
            error = jsonschema.exceptions.best_match(_schema_validator(request.response_schema).iter_errors(content))
            if error is not None:
                raise ValueError(error.message)
        if validator is not None:
            return validator(content)
        return content


@functools.lru_cache(maxsize=64)
def _compiled_validator(schema_text: str) -> Any:
    schema = json.loads(schema_text)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def _schema_validator(schema: Mapping[str, Any]) -> Any:
    # checking the schema itself dominates jsonschema.validate, so compile each schema once
    return _compiled_validator(json.dumps(schema, sort_keys=True))


def _as_text(content: Any) -> str:
    if content is None:
        return ""
    if isinstance(content, str):
        return content
    return json.dumps(content, sort_keys=True)
