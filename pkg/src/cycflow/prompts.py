"""Prompt templates for every agent role.

Templates use ``string.Template`` placeholders. Bump ``PROMPT_VERSION`` whenever
any text changes; the version is written into every episode log.
"""

from __future__ import annotations

from string import Template

PROMPT_VERSION = "2026.10-1"

PLANNER_CYCLIC = Template("""\
You design a complete cyclic workflow for a tool-using agent team.

Benchmark: $benchmark
$scope_line
Produce between 2 and 9 subtask nodes. List them in the order execution should start.
Every node needs: name (short label), description (what the executor must accomplish),
tool_scope ("generalist" or a list of tool names from: $tools).
Then give one natural-language transition criterion for EVERY ordered pair of nodes
(from, to), including from == to (repeat the current subtask). Indices are 0-based.
A criterion states when control should move from the first node to the second.
$demos
Respond with JSON: {"nodes": [...], "criteria": [{"from": i, "to": j, "text": "..."}]}""")

PLANNER_SCOPE_SPEC = Template("Objective for this specific instance: $objective")
PLANNER_SCOPE_GEN = Template(
    "The graph will be reused for every instance of this benchmark; do not mention instance-specific items.")

PLANNER_DEPDAG = Template("""\
You plan a forward-only workflow for a tool-using agent.

Benchmark: $benchmark
Objective: $objective
Produce an ordered list of subtasks; each is executed once, in order, and never revisited.
$demos
Respond with JSON: {"steps": [{"name": "...", "description": "..."}]}""")

DEMOS_HEADER = "Summaries of earlier successful trajectories on this benchmark:"

EXECUTOR_SYSTEM = Template("""\
You are the executor for one subtask of a larger objective.

Objective: $objective
Current subtask: $name
Subtask description: $description
Guidance from the analyzer:
$guidance

Use the available tools ($tools) one call at a time. When this subtask is complete, or you
cannot make further progress on it, reply with JSON {"done": true, "summary": "..."} and no
tool call. Otherwise call a tool; you may add {"done": false, "summary": "..."} as content.""")

EXECUTOR_USER = Template("""\
Environment description:
$environment

Recent tool calls in this segment:
$recent""")

ANALYZER_SYSTEM = Template("""\
You analyze a multi-step agent run and maintain its structured memory.

Objective: $objective
Subtask just executed: $name ($description)

Previous memory (JSON):
$memory

Segment trace:
$trace

Executor summary: $summary

Return the updated memory as JSON with keys progress_summary (string), verified_facts
(list of strings), detected_loops (list of strings) and guidance_for_next (string).""")

ROUTER_SYSTEM = Template("""\
You route control between subtasks of a cyclic workflow.

Objective: $objective
Current subtask: [$current] $current_name

Memory (JSON):
$memory

Candidate transitions (target index: criterion):
$candidates

Evaluate every criterion against the memory and pick the single best next subtask.
Choosing the current index repeats the current subtask.
Respond with JSON {"next_index": <int>, "justification": "..."}""")

REACT_SYSTEM = Template("""\
You solve the task below by alternating brief reasoning with tool calls.

Task: $objective
Environment description:
$environment

Call one tool per turn. When the task is solved reply with JSON {"done": true}.""")

REACT_USER = Template("""\
Previous tool calls:
$recent""")

SUMMARIZER_SYSTEM = Template("""\
Compress the successful trajectory below into a short reusable routine (at most 120 words)
that would help a planner solve similar $benchmark tasks.

Objective: $objective
Plan:
$plan

Trajectory:
$trace""")


def render(template: Template, **values: object) -> str:
    return template.substitute({k: str(v) for k, v in values.items()})
