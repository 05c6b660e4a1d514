"""Deterministic TextCraft-style crafting environment.

Items are lower-case with underscores (``polished_granite``); multi-word names in
commands are joined with underscores before lookup.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .environment import Environment, InvalidArguments, StateComponents, ToolParam, ToolSpec

NO_SUCH_RECIPE = "no such recipe"
UNKNOWN_COMMAND = "unknown command"
EMPTY_INVENTORY = "empty"

TOOL_INVENTORY = "textcraft_inventory"
TOOL_GET = "textcraft_get_item"
TOOL_CRAFT = "textcraft_craft"
TOOL_SELECT = "textcraft_select_command"


@dataclass(frozen=True)
class BenchmarkInfo:
    name: str
    depth: int
    total_seeds: int
    train_fraction: float
    global_limit: int
    local_limit: int = 5


BENCHMARKS: dict[str, BenchmarkInfo] = {
    "textcraft-2": BenchmarkInfo("textcraft-2", 2, 291, 0.30, 30),
    "textcraft-3": BenchmarkInfo("textcraft-3", 3, 117, 0.30, 50),
    "textcraft-4": BenchmarkInfo("textcraft-4", 4, 11, 0.0, 100),
}

# Published train-set sizes. 291 * 0.30 = 87.3 yet 88 seeds were used for training,
# while 117 * 0.30 = 35.1 gave 35, so no single rounding rule recovers both.
PUBLISHED_TRAIN_SIZES: dict[tuple[int, float], int] = {
    (291, 0.30): 88,
    (117, 0.30): 35,
    (11, 0.0): 0,
    (50, 0.30): 15,
}


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at token {position}")
        self.position = position


class Unreachable(ValueError):
    def __init__(self, target: str):
        super().__init__(f"{target} cannot be produced from the gatherable items")
        self.target = target


def normalize_item(name: str) -> str:
    return "_".join(name.strip().lower().split())


@dataclass(frozen=True)
class Recipe:
    output_item: str
    output_count: int
    ingredients: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if self.output_count < 1:
            raise ValueError("output_count must be >= 1")
        if not self.ingredients:
            raise ValueError(f"recipe for {self.output_item} has no ingredients")
        for item, count in self.ingredients:
            if count < 1:
                raise ValueError(f"ingredient {item} has count {count}")
            if item == self.output_item:
                raise ValueError(f"{self.output_item} cannot be its own ingredient")

    def command(self, batches: int = 1) -> str:
        parts = ", ".join(f"{c * batches} {i}" for i, c in self.ingredients)
        return f"craft {self.output_count * batches} {self.output_item} using {parts}"

    def batch_factor(self, request: "Recipe") -> int | None:
        """Integer ``b`` such that ``request`` is this recipe scaled by ``b``, else None."""
        if request.output_item != self.output_item:
            return None
        mine = dict(self.ingredients)
        theirs: dict[str, int] = {}
        for item, count in request.ingredients:
            theirs[item] = theirs.get(item, 0) + count
        if set(mine) != set(theirs) or request.output_count % self.output_count:
            return None
        b = request.output_count // self.output_count
        if any(theirs[i] != c * b for i, c in mine.items()):
            return None
        return b

    def to_dict(self) -> dict[str, Any]:
        return {
            "output": self.output_item,
            "count": self.output_count,
            "ingredients": [[i, c] for i, c in self.ingredients],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Recipe":
        return cls(
            str(data["output"]),
            int(data["count"]),
            tuple((str(i), int(c)) for i, c in data["ingredients"]),
        )


def parse_crafting_command(text: str) -> Recipe:
    """Parse ``craft N item using M1 ing1, M2 ing2, ...``; every count is required."""
    tokens = text.replace(",", " , ").split()
    if not tokens or tokens[0].lower() != "craft":
        raise ParseError("expected 'craft'", 0)

    def count_at(pos: int) -> int:
        if pos >= len(tokens):
            raise ParseError("expected a count", pos)
        try:
            value = int(tokens[pos])
        except ValueError:
            raise ParseError(f"expected a count, got {tokens[pos]!r}", pos) from None
        if value < 1:
            raise ParseError("count must be >= 1", pos)
        return value

    def words_until(pos: int, stops: set[str]) -> tuple[str, int]:
        start = pos
        while pos < len(tokens) and tokens[pos].lower() not in stops:
            pos += 1
        if pos == start:
            raise ParseError("expected an item name", start)
        return normalize_item(" ".join(tokens[start:pos])), pos

    out_count = count_at(1)
    out_item, pos = words_until(2, {"using"})
    if pos >= len(tokens):
        raise ParseError("expected 'using'", pos)
    pos += 1
    ingredients: list[tuple[str, int]] = []
    while True:
        count = count_at(pos)
        item, pos = words_until(pos + 1, {","})
        ingredients.append((item, count))
        if pos >= len(tokens):
            break
        pos += 1  # comma
    try:
        return Recipe(out_item, out_count, tuple(ingredients))
    except ValueError as exc:
        raise ParseError(str(exc), 0) from None


def inventory_listing(counts: Mapping[str, int]) -> str:
    entries = [f"[{item}] ({n})" for item, n in sorted(counts.items()) if n > 0]
    return " ".join(entries) if entries else EMPTY_INVENTORY


def recipe_depth(recipe_book: Sequence[Recipe], gatherable_items: Iterable[str], target: str) -> int:
    """Longest chain of crafts from gatherable items to ``target``; gathering is depth 0."""
    gatherable = set(gatherable_items)
    by_output: dict[str, list[Recipe]] = {}
    for r in recipe_book:
        by_output.setdefault(r.output_item, []).append(r)
    memo: dict[str, int | None] = {}
    visiting: set[str] = set()

    def depth(item: str) -> int | None:
        if item in gatherable:
            return 0
        if item in memo:
            return memo[item]
        if item in visiting:
            raise ValueError(f"recipe cycle through {item}")
        visiting.add(item)
        best: int | None = None
        for r in by_output.get(item, []):
            sub = [depth(i) for i, _ in r.ingredients]
            if any(d is None for d in sub):
                continue
            cand = 1 + max(sub)  # type: ignore[type-var]
            best = cand if best is None else max(best, cand)
        visiting.discard(item)
        memo[item] = best
        return best

    result = depth(target)
    if result is None:
        raise Unreachable(target)
    return result


@dataclass
class CraftingTask:
    task_id: int
    target_item: str
    depth: int
    recipe_book: list[Recipe]
    gatherable_items: frozenset[str]

    def recipe_for(self, item: str) -> Recipe | None:
        for r in self.recipe_book:
            if r.output_item == item:
                return r
        return None

    def objective(self) -> str:
        return f"craft {self.target_item.replace('_', ' ')}"

    def validate(self) -> None:
        produced = {r.output_item for r in self.recipe_book}
        for r in self.recipe_book:
            for item, _ in r.ingredients:
                if item not in self.gatherable_items and item not in produced:
                    raise ValueError(f"{r.output_item} needs {item}, which nothing provides")
        actual = recipe_depth(self.recipe_book, self.gatherable_items, self.target_item)
        if actual != self.depth:
            raise ValueError(f"target depth is {actual}, declared {self.depth}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "target": self.target_item,
            "depth": self.depth,
            "gatherables": sorted(self.gatherable_items),
            "recipes": [r.to_dict() for r in self.recipe_book],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CraftingTask":
        return cls(
            task_id=int(data["task_id"]),
            target_item=str(data["target"]),
            depth=int(data["depth"]),
            recipe_book=[Recipe.from_dict(r) for r in data["recipes"]],
            gatherable_items=frozenset(data["gatherables"]),
        )


def polished_granite_task(task_id: int = 85) -> CraftingTask:
    """Hand-written depth-3 task: quartz + cobblestone -> diorite -> granite -> polished_granite."""
    return CraftingTask(
        task_id=task_id,
        target_item="polished_granite",
        depth=3,
        recipe_book=[
            Recipe("diorite", 2, (("quartz", 2), ("cobblestone", 2))),
            Recipe("granite", 1, (("diorite", 1), ("quartz", 1))),
            Recipe("polished_granite", 4, (("granite", 4),)),
            Recipe("dark_oak_planks", 4, (("dark_oak_log", 1),)),
        ],
        gatherable_items=frozenset({"quartz", "cobblestone", "dark_oak_log"}),
    )


_RAW_PREFIX = ("amber", "birch", "cinder", "dusk", "ember", "frost", "gilded", "hazel", "ivory",
               "jade", "kelp", "lunar", "moss", "nether", "onyx", "pale", "quill", "rust",
               "slate", "tidal", "umber", "violet", "willow", "zinc")
_RAW_BASE = ("ore", "log", "sand", "clay", "stone", "shard", "fiber", "resin", "seed", "bone")
_CRAFT_PREFIX = ("polished", "refined", "woven", "cut", "tempered", "carved", "smooth",
                 "chiseled", "reinforced", "glazed", "bound", "forged")
_CRAFT_BASE = ("plank", "block", "ingot", "panel", "rod", "gear", "brick", "slab", "pane",
               "lantern", "frame", "tile", "bowl", "lever", "hinge", "strut")


def generate_task(task_id: int, depth: int, distractors: int = 2) -> CraftingTask:
    """Synthetic recipe book whose target sits exactly ``depth`` crafts above gatherables.

    Fully determined by ``(task_id, depth)``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = random.Random(f"textcraft:{depth}:{task_id}")
    used: set[str] = set()
    by_level: dict[int, list[str]] = {}
    recipes: list[Recipe] = []
    gatherables: set[str] = set()

    def fresh(prefixes: Sequence[str], bases: Sequence[str]) -> str:
        while True:
            name = f"{rng.choice(prefixes)}_{rng.choice(bases)}"
            if name not in used:
                used.add(name)
                return name

    def make(level: int) -> str:
        if level == 0:
            pool = by_level.get(0, [])
            if pool and rng.random() < 0.3:
                return rng.choice(pool)
            name = fresh(_RAW_PREFIX, _RAW_BASE)
            gatherables.add(name)
            by_level.setdefault(0, []).append(name)
            return name
        main = make(level - 1)
        ingredients = {main: rng.randint(1, 4)}
        for _ in range(rng.randint(0, 2)):
            other = make(rng.randint(0, level - 1))
            if other not in ingredients:
                ingredients[other] = rng.randint(1, 4)
        name = fresh(_CRAFT_PREFIX, _CRAFT_BASE)
        recipes.append(Recipe(name, rng.randint(1, 4), tuple(ingredients.items())))
        by_level.setdefault(level, []).append(name)
        return name

    target = make(depth)
    for _ in range(distractors):
        make(rng.randint(1, depth))
    rng.shuffle(recipes)
    task = CraftingTask(task_id, target, depth, recipes, frozenset(gatherables))
    task.validate()
    return task


def solution_commands(task: CraftingTask) -> list[str]:
    """A command sequence (``get``/``craft``) that produces one batch of the target."""
    gatherable = task.gatherable_items
    depths = {item: recipe_depth(task.recipe_book, gatherable, item)
              for item in {r.output_item for r in task.recipe_book} | set(gatherable)}
    demand: Counter[str] = Counter()
    target_recipe = task.recipe_for(task.target_item)
    if target_recipe is None:
        return [f"get 1 {task.target_item}"]
    demand[task.target_item] = target_recipe.output_count
    batches: dict[str, int] = {}
    for item in sorted(depths, key=lambda i: (-depths[i], i)):
        if item in gatherable or demand[item] == 0:
            continue
        recipe = task.recipe_for(item)
        assert recipe is not None
        b = math.ceil(demand[item] / recipe.output_count)
        batches[item] = b
        for ing, c in recipe.ingredients:
            demand[ing] += c * b
    commands = [f"get {demand[i]} {i}" for i in sorted(gatherable) if demand[i] > 0]
    for item in sorted(batches, key=lambda i: (depths[i], i)):
        recipe = task.recipe_for(item)
        assert recipe is not None
        commands.append(recipe.command(batches[item]))
    return commands


def resolve_train_size(total_seeds: int, train_fraction: float) -> int:
    published = PUBLISHED_TRAIN_SIZES.get((total_seeds, round(train_fraction, 6)))
    if published is not None:
        return published
    return math.floor(total_seeds * train_fraction + 1e-9)


def make_split(
    total_seeds: int,
    train_fraction: float,
    shuffle_seed: int = 42,
    train_size: int | None = None,
) -> tuple[list[int], list[int]]:
    """Shuffle ``0..total-1`` with ``random.Random(shuffle_seed).shuffle`` and cut.

    The cut defaults to the published train size for known benchmark totals and
    to ``floor(total * fraction)`` otherwise; pass ``train_size`` to override.
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in [0, 1]")
    if train_size is None:
        train_size = resolve_train_size(total_seeds, train_fraction)
    if not 0 <= train_size <= total_seeds:
        raise ValueError("train_size out of range")
    seeds = list(range(total_seeds))
    random.Random(shuffle_seed).shuffle(seeds)
    return seeds[:train_size], seeds[train_size:]


def benchmark_split(benchmark: str, shuffle_seed: int = 42) -> tuple[list[int], list[int]]:
    info = BENCHMARKS[benchmark]
    return make_split(info.total_seeds, info.train_fraction, shuffle_seed)


def _tool_specs() -> list[ToolSpec]:
    reasoning = ToolParam("reasoning", "array", "step-by-step reasoning", required=False)
    return [
        ToolSpec(TOOL_INVENTORY, "Check the current contents of the inventory.", (),
                 "listing of every item held with its quantity"),
        ToolSpec(
            TOOL_GET,
            "Acquire items from the environment. Some items must be crafted instead.",
            (reasoning,
             ToolParam("item_name", "string", "item to acquire"),
             ToolParam("num_total_items_needed", "integer", "quantity to acquire", minimum=1)),
            "result of the acquisition attempt",
        ),
        ToolSpec(
            TOOL_CRAFT,
            "Craft items from inventory materials according to a recipe.",
            (reasoning,
             ToolParam("crafting_command", "string", "craft N item using M ingredient1, ...")),
            "result of the crafting action",
        ),
        ToolSpec(
            TOOL_SELECT,
            "Unified command interface: 'get <number> <item>', 'craft <crafting command>', or 'inventory'.",
            (reasoning, ToolParam("command", "string", "the command to execute")),
            "observation after executing the command",
        ),
    ]


class TextCraftEnv(Environment):
    """One crafting episode over a :class:`CraftingTask`.

    ``reset`` accepts a task id (generated at ``depth``) or a ``CraftingTask``.
    """

    def __init__(self, depth: int = 2, tasks: Mapping[int, CraftingTask] | None = None,
                 record_states: bool = False) -> None:
        super().__init__(record_states=record_states)
        self.depth = depth
        self._fixtures = dict(tasks or {})
        self.task: CraftingTask | None = None
        self.inventory: Counter[str] = Counter()
        self.last_action = ""
        self.last_observation = ""

    def _reset(self, task_id: Any) -> str:
        if isinstance(task_id, CraftingTask):
            self.task = task_id
        elif task_id in self._fixtures:
            self.task = self._fixtures[task_id]
        else:
            self.task = generate_task(int(task_id), self.depth)
        self.inventory = Counter()
        self.last_action = ""
        self.last_observation = self.describe()
        return self.last_observation

    def describe(self) -> str:
        assert self.task is not None
        lines = ["Crafting commands:"]
        lines += [r.command() for r in sorted(self.task.recipe_book, key=lambda r: r.output_item)]
        lines.append(f"Goal: {self.task.objective()}.")
        return "\n".join(lines)

    def objective(self) -> str:
        assert self.task is not None
        return self.task.objective()

    def tool_specs(self) -> list[ToolSpec]:
        return _tool_specs()

    def is_success(self) -> bool:
        return self.task is not None and self.inventory[self.task.target_item] > 0

    def get_item(self, name: str, quantity: int) -> str:
        assert self.task is not None
        if quantity < 1:
            raise InvalidArguments("quantity must be >= 1")
        item = normalize_item(name)
        if item not in self.task.gatherable_items:
            return f"Could not find {item}"
        self.inventory[item] += quantity
        return f"Got {quantity} {item}"

    def craft(self, command_text: str) -> str:
        assert self.task is not None
        try:
            request = parse_crafting_command(command_text)
        except ParseError as exc:
            return f"invalid crafting command: {exc}"
        for recipe in self.task.recipe_book:
            b = recipe.batch_factor(request)
            if b is None:
                continue
            needed = {i: c * b for i, c in recipe.ingredients}
            if any(self.inventory[i] < n for i, n in needed.items()):
                return f"Could not find enough items to craft {request.output_count} {request.output_item}"
            for i, n in needed.items():
                self.inventory[i] -= n
                if self.inventory[i] == 0:
                    del self.inventory[i]
            self.inventory[request.output_item] += request.output_count
            return f"Crafted {request.output_count} {request.output_item}"
        return NO_SUCH_RECIPE

    def inventory_listing(self) -> str:
        return inventory_listing(self.inventory)

    def select_command(self, command_text: str) -> str:
        text = command_text.strip()
        keyword = text.split(maxsplit=1)[0].lower() if text else ""
        if keyword == "inventory" and len(text.split()) == 1:
            return self.inventory_listing()
        if keyword == "get":
            parts = text.split()
            if len(parts) < 3:
                raise InvalidArguments("expected 'get <number> <item>'")
            try:
                quantity = int(parts[1])
            except ValueError:
                raise InvalidArguments(f"expected a number, got {parts[1]!r}") from None
            return self.get_item(" ".join(parts[2:]), quantity)
        if keyword == "craft":
            return self.craft(text)
        return UNKNOWN_COMMAND

    def _dispatch(self, tool_name: str, arguments: Mapping[str, Any]) -> str:
        if not isinstance(arguments, Mapping):
            raise InvalidArguments("arguments must be an object")
        if tool_name == TOOL_INVENTORY:
            return self.inventory_listing()
        if tool_name == TOOL_GET:
            name = arguments.get("item_name")
            quantity = arguments.get("num_total_items_needed")
            if not isinstance(name, str) or not name.strip():
                raise InvalidArguments("item_name is required")
            if isinstance(quantity, bool) or not isinstance(quantity, int):
                raise InvalidArguments("num_total_items_needed must be an integer")
            return self.get_item(name, quantity)
        if tool_name == TOOL_CRAFT:
            command = arguments.get("crafting_command")
            if not isinstance(command, str):
                raise InvalidArguments("crafting_command is required")
            return self.craft(command)
        if tool_name == TOOL_SELECT:
            command = arguments.get("command")
            if not isinstance(command, str):
                raise InvalidArguments("command is required")
            return self.select_command(command)
        raise InvalidArguments(f"no handler for {tool_name}")

    def _after_call(self, tool_name: str, arguments: Any, observation: str) -> None:
        self.last_action = json.dumps({"tool": tool_name, "arguments": arguments}, sort_keys=True)
        self.last_observation = observation

    def admissible_commands(self) -> list[str]:
        assert self.task is not None
        cmds = ["inventory"] + [f"get {i}" for i in sorted(self.task.gatherable_items)]
        for r in sorted(self.task.recipe_book, key=lambda r: r.output_item):
            if all(self.inventory[i] >= c for i, c in r.ingredients):
                cmds.append(r.command())
        return cmds

    def state_components(self) -> StateComponents:
        return StateComponents(
            inventory=self.inventory_listing(),
            admissible="; ".join(self.admissible_commands()),
            last_action=self.last_action,
            observation=self.last_observation,
        )


def select_call(command: str) -> tuple[str, dict[str, Any]]:
    """Tool invocation routing ``command`` through the unified select tool."""
    return TOOL_SELECT, {"command": command}


def command_to_call(command: str) -> tuple[str, dict[str, Any]]:
    """Map a text command onto the dedicated get/craft/inventory tool."""
    parts = command.split()
    if parts and parts[0] == "get":
        return TOOL_GET, {"item_name": " ".join(parts[2:]), "num_total_items_needed": int(parts[1])}
    if parts and parts[0] == "craft":
        return TOOL_CRAFT, {"crafting_command": command}
    return TOOL_INVENTORY, {}
