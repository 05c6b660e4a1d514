from __future__ import annotations

import csv
import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycflow import metrics
from cycflow.metrics import (ABSENT, ALL_WINS, SHARED_WINS, EmptyGroup, MissingStateSnapshots, TokenComparison,
                             UndefinedRatio, compute_report, round_half_up, shared_win_token_comparison,
                             str_ratio, success_rate)
from cycflow.scripted import TextCraftPolicy

import oracles
from helpers import random_log, scripted_cyclic_episode, scripted_react_episode, synthetic_log

# published rows: (SR %, TC mean) -> STR as printed
STR_ROWS = [(94.3, 7.4, 12.7), (58.2, 30.2, 1.9), (85.2, 11.3, 7.5), (93.9, 9.4, 10.0), (58.6, 13.2, 4.4)]
# published rows: (baseline, cyclic) -> (excess, relative %)
TOKEN_ROWS = [
    (81084.08, 93208.69, 12124.61, 14.95),
    (83360.6, 93835.68, 10475.08, 12.57),
    (81820.76, 77694.46, -4126.3, -5.04),
    (22341.6, 97919.85, 75578.25, 338.28),
    (109047.05, 245365.14, 136318.09, 125.01),
    (22490.85, 97919.85, 75429.0, 335.38),
]


@pytest.mark.parametrize("sr_pct,tc,expected", STR_ROWS)
def test_str_matches_published_rows(sr_pct, tc, expected):
    assert abs(round_half_up(str_ratio(sr_pct, tc), 1) - expected) <= 0.05


@pytest.mark.parametrize("base,cyc,excess,rel", TOKEN_ROWS)
def test_token_excess_matches_published_rows(base, cyc, excess, rel):
    row = TokenComparison("x", SHARED_WINS, base, cyc)
    assert abs(row.excess - excess) <= 0.01
    assert abs(round_half_up(row.relative_diff_percent, 2) - rel) <= 0.01


def test_str_zero_success_is_zero_and_undefined_otherwise():
    assert str_ratio(0, None) == 0.0
    with pytest.raises(UndefinedRatio):
        str_ratio(50, None)


def test_round_half_up_differs_from_bankers():
    assert round_half_up(0.25, 1) == 0.3 and round(0.25, 1) == 0.2
    assert round_half_up(2.5, 0) == 3.0


def test_sr_two_seeds_zero_and_one():
    logs = [synthetic_log(1, 0, [0], False), synthetic_log(1, 1, [0], True)]
    assert success_rate(logs) == (0.5, 0.5)


def test_sr_empty_group_raises():
    with pytest.raises(EmptyGroup):
        success_rate({0: []})
    with pytest.raises(EmptyGroup):
        success_rate([])


def test_tc_absent_without_successes_renders_da():
    logs = [synthetic_log(t, 0, [0, 1], False, tokens=10) for t in range(3)]
    report = compute_report(logs)
    row = next(csv.DictReader(io.StringIO(report.main_table_csv())))
    assert row["TC"] == ABSENT and row["ATS"] == ABSENT
    assert row["STR"] == "0.0" and row["SR"] == "0.0% ± 0.0%"


def test_visitation_example():
    # success visiting 0,1,0,2: 4 total, 3 unique, 1 revisit
    v = metrics.visitation([synthetic_log(1, 0, [0, 1, 0, 2], True)])
    assert (v.ats, v.aus, v.asr) == (4, 3, 1)


def test_unique_transitions_with_and_without_faults():
    won = synthetic_log(1, 0, [0, 1, 1], True)
    lost = synthetic_log(2, 0, [0, 2, 0], False, faults=[True, False, False])
    assert metrics.unique_transitions([won, lost]) == (4, 2, 2)
    assert metrics.unique_transitions([won, lost], include_faults=False) == (3, 2, 1)


def test_self_loops_average_over_all_episodes():
    logs = [synthetic_log(1, 0, [0, 0, 1], True), synthetic_log(2, 0, [1, 1, 1], False)]
    assert metrics.transition_breakdown(logs) == (1.5, 0.5)


def test_shared_wins_any_seed_rule():
    base = [synthetic_log(1, 0, [0], True, 100), synthetic_log(1, 1, [0], False, 999),
            synthetic_log(2, 0, [0], True, 300)]
    cyc = [synthetic_log(1, 0, [0], False, 5), synthetic_log(1, 1, [0], True, 200),
           synthetic_log(1, 2, [0], True, 400), synthetic_log(3, 0, [0], True, 50)]
    result = shared_win_token_comparison(base, cyc)
    assert result.shared_task_ids == (1,)
    assert (result.shared.baseline_avg_total, result.shared.cyclic_avg_total) == (100, 300)
    assert result.all_wins.scope == ALL_WINS
    assert (result.all_wins.baseline_avg_total, result.all_wins.cyclic_avg_total) == (200, 175)


def test_empty_intersection_is_reported():
    base = [synthetic_log(1, 0, [0], True, 100)]
    cyc = [synthetic_log(2, 0, [0], True, 100)]
    assert shared_win_token_comparison(base, cyc).empty_intersection


def test_exploration_requires_snapshots():
    log = synthetic_log(1, 0, [0], True)
    with pytest.raises(MissingStateSnapshots):
        metrics.unique_states(log)


def test_exploration_diff_on_recorded_episodes():
    policy = TextCraftPolicy(waste=0.4)
    cyc = [scripted_cyclic_episode(t, 0, policy, record_states=True)[0] for t in range(3)]
    base = [scripted_react_episode(t, 0, policy, record_states=True) for t in range(3)]
    diff = metrics.exploration_diff(cyc, base)
    assert set(diff) == {0, 1, 2}
    for t in diff:
        assert diff[t] == metrics.unique_states(cyc[t]) - metrics.unique_states(base[t])


def check_against_oracles(logs):
    """Every aggregate must equal the naive recomputation exactly (no tolerance)."""
    assert success_rate(logs) == oracles.sr(logs)
    assert metrics.tool_calls_on_success(logs) == oracles.tc(logs)
    v, rv = metrics.visitation(logs), oracles.visits(logs)
    assert (v is None) == (rv is None)
    if v is not None:
        assert ((v.ats, v.ats_std), (v.aus, v.aus_std), (v.asr, v.asr_std)) == rv
    assert metrics.unique_transitions(logs) == oracles.ut(logs)
    assert metrics.unique_transitions(logs, False) == oracles.ut(logs, False)
    assert metrics.transition_breakdown(logs) == oracles.loops_and_inter(logs)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 6))
def test_metrics_agree_with_naive_reference(seed, seeds, tasks):
    rng = random.Random(seed)
    logs = [random_log(rng, t, s) for t in range(tasks) for s in range(seeds)]
    check_against_oracles(logs)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_token_comparison_agrees_with_naive_reference(seed):
    rng = random.Random(seed)
    base = [random_log(rng, rng.randrange(6), s) for s in range(3) for _ in range(3)]
    cyc = [random_log(rng, rng.randrange(6), s) for s in range(3) for _ in range(3)]
    result = shared_win_token_comparison(base, cyc)
    shared, all_row = oracles.token_rows(base, cyc)
    if shared is None:
        assert result.shared is None
    else:
        assert (result.shared.baseline_avg_total, result.shared.cyclic_avg_total) == pytest.approx(shared)
    if all_row is None:
        assert result.all_wins is None
    else:
        assert (result.all_wins.baseline_avg_total, result.all_wins.cyclic_avg_total) == pytest.approx(all_row)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=20))
def test_sr_bounds(outcomes):
    logs = [synthetic_log(i, i % 3, [0], ok) for i, ok in enumerate(outcomes)]
    mean, std = success_rate(logs)
    assert 0 <= mean <= 1 and 0 <= std <= 0.5


def test_report_outputs_are_deterministic():
    rng = random.Random(3)
    logs = [random_log(rng, t, s) for t in range(5) for s in range(3)]
    for lg in logs[:7]:
        lg.metadata["method"] = "react"
    a, b = compute_report(logs), compute_report(list(reversed(logs)))
    assert a.dumps() == b.dumps()
    assert a.main_table_csv() == b.main_table_csv()
    data = json.loads(a.dumps())
    assert {r["key"]["method"] for r in data["configs"]} == {"react", "speccyc"}
    assert data["token_comparisons"] or data["notes"]
