"""Metrics computed from episode logs alone.

Success rate is a per-seed fraction, aggregated as mean and population std over
seeds. Tool calls and node visitation are computed over successful episodes
only. STR divides SR in percent by raw TC. Absent values render as ``D/A``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .environment import unique_state_count
from .records import EpisodeLog

ABSENT = "D/A"
SHARED_WINS = "SharedWins"
ALL_WINS = "AllWins"


class EmptyGroup(ValueError):
    pass


class UndefinedRatio(ValueError):
    pass


class MissingStateSnapshots(ValueError):
    pass


def round_half_up(value: float, digits: int) -> float:
    """Table-style rounding (0.05 -> 0.1), unlike ``round``'s half-to-even."""
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def mean_std(values: Sequence[float | Fraction]) -> tuple[float, float]:
    """Mean and population std, accumulated exactly and rounded once at the end."""
    if not values:
        raise EmptyGroup("no values to aggregate")
    xs = [Fraction(v) for v in values]
    mean = sum(xs, Fraction(0)) / len(xs)
    var = sum(((x - mean) ** 2 for x in xs), Fraction(0)) / len(xs)
    return float(mean), math.sqrt(float(var))


def by_seed(logs: Iterable[EpisodeLog]) -> dict[int, list[EpisodeLog]]:
    groups: dict[int, list[EpisodeLog]] = defaultdict(list)
    for log in logs:
        groups[log.seed].append(log)
    return dict(sorted(groups.items()))


def success_rate(groups: Mapping[Any, Sequence[EpisodeLog]] | Iterable[EpisodeLog]) -> tuple[float, float]:
    """Mean and population std over seed groups of successes/episodes (fractions)."""
    if not isinstance(groups, Mapping):
        groups = by_seed(groups)
    rates: list[Fraction] = []
    for seed, logs in groups.items():
        if not logs:
            raise EmptyGroup(f"seed group {seed} has no episodes")
        rates.append(Fraction(sum(1 for lg in logs if lg.success), len(logs)))
    if not rates:
        raise EmptyGroup("no seed groups")
    return mean_std(rates)


def tool_calls_on_success(logs: Iterable[EpisodeLog]) -> tuple[float, float] | None:
    """Mean/std of final k over successes; ``None`` (rendered D/A) when there are none."""
    ks = [lg.k_final for lg in logs if lg.success]
    return mean_std(ks) if ks else None


def str_ratio(sr_percent: float, tc_mean: float | None) -> float:
    if sr_percent == 0:
        return 0.0
    if tc_mean is None or tc_mean <= 0:
        raise UndefinedRatio("STR needs a positive tool-call mean")
    return sr_percent / tc_mean


@dataclass(frozen=True)
class Visitation:
    ats: float
    ats_std: float
    aus: float
    aus_std: float
    asr: float
    asr_std: float


def episode_visits(log: EpisodeLog) -> tuple[int, int, int]:
    """(total, unique, revisits) node visits for one episode."""
    seq = log.node_sequence()
    total, unique = len(seq), len(set(seq))
    return total, unique, total - unique


def visitation(logs: Iterable[EpisodeLog]) -> Visitation | None:
    rows = [episode_visits(lg) for lg in logs if lg.success]
    if not rows:
        return None
    ats, ats_std = mean_std([r[0] for r in rows])
    aus, aus_std = mean_std([r[1] for r in rows])
    _, asr_std = mean_std([r[2] for r in rows])
    return Visitation(ats, ats_std, aus, aus_std, ats - aus, asr_std)


def transition_set(logs: Iterable[EpisodeLog], include_faults: bool = True) -> set[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    for lg in logs:
        pairs.update(lg.transitions(include_faults))
    return pairs


def unique_transitions(logs: Sequence[EpisodeLog], include_faults: bool = True) -> tuple[int, int, int]:
    """(UT over all episodes, UT over successes, UT never seen in a success)."""
    every = transition_set(logs, include_faults)
    won = transition_set([lg for lg in logs if lg.success], include_faults)
    return len(every), len(won), len(every - won)


def transition_breakdown(logs: Sequence[EpisodeLog], include_faults: bool = True) -> tuple[float, float]:
    """Average self-loop and inter-node transitions per episode, failures included."""
    if not logs:
        raise EmptyGroup("no episodes")
    loops, inter = [], []
    for lg in logs:
        pairs = lg.transitions(include_faults)
        s = sum(1 for a, b in pairs if a == b)
        loops.append(s)
        inter.append(len(pairs) - s)
    return statistics.fmean(loops), statistics.fmean(inter)


@dataclass(frozen=True)
class TokenComparison:
    label: str
    scope: str
    baseline_avg_total: float
    cyclic_avg_total: float
    task_count: int = 0

    @property
    def excess(self) -> float:
        return self.cyclic_avg_total - self.baseline_avg_total

    @property
    def relative_diff_percent(self) -> float:
        if self.baseline_avg_total == 0:
            raise UndefinedRatio("baseline average is zero")
        return 100.0 * self.excess / self.baseline_avg_total

    def to_row(self) -> dict[str, Any]:
        return {
            "pair": self.label,
            "scope": self.scope,
            "tasks": self.task_count,
            "baseline_avg_total": f"{self.baseline_avg_total:.2f}",
            "cyclic_avg_total": f"{self.cyclic_avg_total:.2f}",
            "excess": f"{self.excess:.2f}",
            "relative_diff_percent": f"{self.relative_diff_percent:.2f}",
        }


def won_token_averages(logs: Iterable[EpisodeLog]) -> dict[Any, float]:
    """Per task won at least once: mean total tokens over its winning episodes."""
    per_task: dict[Any, list[int]] = defaultdict(list)
    for lg in logs:
        if lg.success:
            per_task[lg.task_id].append(lg.total_tokens)
    return {t: statistics.fmean(v) for t, v in sorted(per_task.items())}


@dataclass(frozen=True)
class TokenComparisonResult:
    shared: TokenComparison | None
    all_wins: TokenComparison | None
    shared_task_ids: tuple = ()

    @property
    def empty_intersection(self) -> bool:
        return self.shared is None

    def rows(self) -> list[TokenComparison]:
        return [r for r in (self.shared, self.all_wins) if r is not None]


def shared_win_token_comparison(baseline_logs: Iterable[EpisodeLog], cyclic_logs: Iterable[EpisodeLog],
                                label: str = "cyclic vs baseline") -> TokenComparisonResult:
    base = won_token_averages(baseline_logs)
    cyc = won_token_averages(cyclic_logs)
    shared_ids = tuple(sorted(set(base) & set(cyc)))
    shared = None
    if shared_ids:
        shared = TokenComparison(label, SHARED_WINS,
                                 statistics.fmean(base[t] for t in shared_ids),
                                 statistics.fmean(cyc[t] for t in shared_ids), len(shared_ids))
    all_wins = None
    if base and cyc:
        all_wins = TokenComparison(label, ALL_WINS, statistics.fmean(base.values()),
                                   statistics.fmean(cyc.values()), len(set(base) | set(cyc)))
    return TokenComparisonResult(shared, all_wins, shared_ids)


def unique_states(log: EpisodeLog) -> int:
    try:
        return unique_state_count(log.states())
    except ValueError as exc:
        raise MissingStateSnapshots(str(exc)) from None


def exploration_diff(cyclic_logs: Iterable[EpisodeLog], baseline_logs: Iterable[EpisodeLog]) -> dict[Any, float]:
    """Per task shared by both sides: mean unique states (cyclic) minus mean unique states (baseline)."""
    cyc: dict[Any, list[int]] = defaultdict(list)
    base: dict[Any, list[int]] = defaultdict(list)
    for lg in cyclic_logs:
        cyc[lg.task_id].append(unique_states(lg))
    for lg in baseline_logs:
        base[lg.task_id].append(unique_states(lg))
    return {t: statistics.fmean(cyc[t]) - statistics.fmean(base[t]) for t in sorted(set(cyc) & set(base))}


# -- reports -----------------------------------------------------------------

@dataclass(frozen=True, order=True)
class ConfigKey:
    method: str
    benchmark: str
    tiers: str
    tool_exposure: str
    n_shot: bool
    fault: bool

    @classmethod
    def of(cls, log: EpisodeLog) -> "ConfigKey":
        m = log.metadata
        fault = m.get("fault") or {}
        return cls(
            method=str(m.get("method", "")),
            benchmark=str(m.get("benchmark", "")),
            tiers=str(m.get("tiers_label", "")),
            tool_exposure=str(m.get("tool_exposure", "")),
            n_shot=bool(m.get("n_shot", False)),
            fault=bool(fault.get("enabled", False)),
        )


@dataclass
class ConfigMetrics:
    key: ConfigKey
    episodes: int
    successes: int
    sr: tuple[float, float]
    tc: tuple[float, float] | None
    str_value: float | None
    visits: Visitation | None
    ut: tuple[int, int, int]
    ut_without_faults: tuple[int, int, int]
    self_loops_per_case: float
    inter_node_per_case: float
    avg_total_tokens: float

    def to_dict(self) -> dict[str, Any]:
        v = self.visits
        return {
            "key": {"method": self.key.method, "benchmark": self.key.benchmark, "tiers": self.key.tiers,
                    "tool_exposure": self.key.tool_exposure, "n_shot": self.key.n_shot,
                    "fault": self.key.fault},
            "episodes": self.episodes,
            "successes": self.successes,
            "sr_mean": self.sr[0],
            "sr_std": self.sr[1],
            "tc_mean": None if self.tc is None else self.tc[0],
            "tc_std": None if self.tc is None else self.tc[1],
            "str": self.str_value,
            "ats": None if v is None else v.ats,
            "ats_std": None if v is None else v.ats_std,
            "aus": None if v is None else v.aus,
            "aus_std": None if v is None else v.aus_std,
            "asr": None if v is None else v.asr,
            "asr_std": None if v is None else v.asr_std,
            "ut_all": self.ut[0],
            "ut_won": self.ut[1],
            "ut_never_won": self.ut[2],
            "ut_all_no_faults": self.ut_without_faults[0],
            "ut_won_no_faults": self.ut_without_faults[1],
            "ut_never_won_no_faults": self.ut_without_faults[2],
            "self_loops_per_case": self.self_loops_per_case,
            "inter_node_per_case": self.inter_node_per_case,
            "avg_total_tokens": self.avg_total_tokens,
        }


def config_metrics(key: ConfigKey, logs: Sequence[EpisodeLog]) -> ConfigMetrics:
    sr = success_rate(logs)
    tc = tool_calls_on_success(logs)
    str_value = None
    if tc is not None or sr[0] == 0:
        str_value = str_ratio(100.0 * sr[0], None if tc is None else tc[0])
    loops, inter = transition_breakdown(logs)
    return ConfigMetrics(
        key=key,
        episodes=len(logs),
        successes=sum(1 for lg in logs if lg.success),
        sr=sr,
        tc=tc,
        str_value=str_value,
        visits=visitation(logs),
        ut=unique_transitions(logs),
        ut_without_faults=unique_transitions(logs, include_faults=False),
        self_loops_per_case=loops,
        inter_node_per_case=inter,
        avg_total_tokens=statistics.fmean(lg.total_tokens for lg in logs),
    )


@dataclass
class MetricsReport:
    rows: list[ConfigMetrics]
    token_comparisons: list[TokenComparison] = field(default_factory=list)
    exploration: dict[str, dict[Any, float]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "configs": [r.to_dict() for r in self.rows],
            "token_comparisons": [
                {**t.to_row(), "excess": t.excess, "relative_diff_percent": t.relative_diff_percent,
                 "baseline_avg_total": t.baseline_avg_total, "cyclic_avg_total": t.cyclic_avg_total}
                for t in self.token_comparisons
            ],
            "exploration_diff": {label: {str(k): v for k, v in d.items()} for label, d in self.exploration.items()},
            "notes": list(self.notes),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def main_table_csv(self) -> str:
        """SR/TC/STR, visitation and transition columns, formatted like the published tables."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "benchmark", "tiers", "tool_exposure", "n_shot", "fault", "episodes",
                    "SR", "TC", "STR", "ATS", "AUS", "ASR", "UT_all", "UT_won", "UT_never_won",
                    "self_loops_per_case", "inter_node_per_case", "avg_total_tokens"])
        for r in self.rows:
            k = r.key
            w.writerow([
                k.method, k.benchmark, k.tiers, k.tool_exposure, int(k.n_shot), int(k.fault), r.episodes,
                _pm(100 * r.sr[0], 100 * r.sr[1], 1, "%"),
                ABSENT if r.tc is None else _pm(*r.tc, 1),
                ABSENT if r.str_value is None else f"{round_half_up(r.str_value, 1):.1f}",
                *(_visit_cells(r.visits)),
                r.ut[0], r.ut[1], r.ut[2],
                f"{r.self_loops_per_case:.2f}", f"{r.inter_node_per_case:.2f}",
                f"{r.avg_total_tokens:.2f}",
            ])
        return out.getvalue()

    def token_table_csv(self) -> str:
        out = io.StringIO()
        fields = ["pair", "scope", "tasks", "baseline_avg_total", "cyclic_avg_total", "excess",
                  "relative_diff_percent"]
        w = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for t in self.token_comparisons:
            w.writerow(t.to_row())
        return out.getvalue()


def _pm(mean: float, std: float, digits: int, unit: str = "") -> str:
    return f"{round_half_up(mean, digits):.{digits}f}{unit} ± {round_half_up(std, digits):.{digits}f}{unit}"


def _visit_cells(v: Visitation | None) -> list[str]:
    if v is None:
        return [ABSENT, ABSENT, ABSENT]
    return [_pm(v.ats, v.ats_std, 1), _pm(v.aus, v.aus_std, 1), _pm(v.asr, v.asr_std, 1)]


CYCLIC_METHODS = ("speccyc", "gencyc")
BASELINE_METHODS = ("react", "depdag")


def compute_report(logs: Iterable[EpisodeLog]) -> MetricsReport:
    """Group logs by configuration and compute every table, including baseline-vs-cyclic comparisons."""
    groups: dict[ConfigKey, list[EpisodeLog]] = defaultdict(list)
    for lg in logs:
        groups[ConfigKey.of(lg)].append(lg)
    keys = sorted(groups)
    report = MetricsReport(rows=[config_metrics(k, groups[k]) for k in keys])
    for ck in keys:
        if ck.method not in CYCLIC_METHODS:
            continue
        for bk in keys:
            if bk.method not in BASELINE_METHODS or (bk.benchmark, bk.fault) != (ck.benchmark, ck.fault):
                continue
            if bk.method == "depdag" and (bk.tiers, bk.tool_exposure, bk.n_shot) != (ck.tiers, ck.tool_exposure,
                                                                                     ck.n_shot):
                continue
            label = f"{ck.benchmark}: {ck.method}[{ck.tiers}] vs {bk.method}[{bk.tiers}]"
            result = shared_win_token_comparison(groups[bk], groups[ck], label)
            if result.empty_intersection:
                report.notes.append(f"{label}: no shared wins")
            report.token_comparisons.extend(result.rows())
            cyc_states = [lg for lg in groups[ck] if lg.segments and lg.segments[0].tool_calls
                          and lg.segments[0].tool_calls[0].state is not None]
            base_states = [lg for lg in groups[bk] if lg.segments and lg.segments[0].tool_calls
                           and lg.segments[0].tool_calls[0].state is not None]
            if cyc_states and base_states and bk.method == "react":
                try:
                    report.exploration[label] = exploration_diff(cyc_states, base_states)
                except MissingStateSnapshots as exc:
                    report.notes.append(f"{label}: {exc}")
    return report
