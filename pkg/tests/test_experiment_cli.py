from __future__ import annotations

import dataclasses
import json

import pytest

from cycflow import cli, orchestrator
from cycflow.experiment import (EmptyTrainSplit, RunConfig, apply_preset, build_training_artifacts,
                                evaluation_task_ids, load_config, run_ablation)
from cycflow.graph import TaskGraph
from cycflow.orchestrator import ConfigError
from cycflow.scripted import TextCraftPolicy, policy_document
from cycflow.textcraft import benchmark_split

SCRIPT = policy_document(TextCraftPolicy(waste=0.3, early_done=0.1))


def cfg(**kw):
    base = dict(script=SCRIPT, seeds=[0, 1], task_limit=2, concurrency=2)
    base.update(kw)
    return RunConfig(**base)


# configuration

def test_defaults_follow_benchmark_budgets():
    assert (cfg().budgets().global_limit, cfg().budgets().local_limit) == (30, 5)
    assert cfg(benchmark="textcraft-4").budgets().global_limit == 100


@pytest.mark.parametrize("bad", [dict(benchmark="nope"), dict(methods=["x"]), dict(seeds=[]),
                                 dict(global_limit=3, local_limit=5), dict(partition="3/2"),
                                 dict(script=None), dict(tool_exposure="both")])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        cfg(**bad).validate()


def test_precedence_file_then_env_then_flags(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"benchmark": "textcraft-3", "seeds": [4], "concurrency": 1, "script": "s.json"}))
    c = load_config(path, environ={})
    assert (c.benchmark, c.seeds, c.concurrency) == ("textcraft-3", [4], 1)
    c = load_config(path, environ={"CYCFLOW_SEEDS": "7,8", "CYCFLOW_CONCURRENCY": "3"})
    assert (c.seeds, c.concurrency) == ([7, 8], 3)
    c = load_config(path, environ={"CYCFLOW_SEEDS": "7,8"}, overrides={"seeds": [9], "benchmark": None})
    assert (c.seeds, c.benchmark) == ([9], "textcraft-3")


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_default_tasks_are_the_test_split_and_partitions_cover_it():
    c = cfg(task_limit=None)
    ids = evaluation_task_ids(c)
    assert ids == benchmark_split("textcraft-2")[1] and len(ids) == 203
    parts = [evaluation_task_ids(dataclasses.replace(c, partition=f"{i}/3")) for i in (1, 2, 3)]
    assert sum(parts, []) == ids


def test_preset_a1_forces_no_nshot_and_no_fault():
    c, cells = apply_preset(cfg(n_shot=5, fault_enabled=True), "A1")
    assert c.n_shot == 0 and not c.fault_enabled
    assert {x.method for x in cells} == {"react", "depdag", "speccyc", "gencyc"}
    assert all(x.n_shot == 0 and not x.fault.enabled for x in cells)


def test_preset_a5_forces_half_probability_on_cyclic_only():
    c, cells = apply_preset(cfg(fault_probability=0.1), "A5")
    assert c.fault_enabled and c.fault_probability == 0.5
    assert {x.method for x in cells} == {"speccyc", "gencyc"}
    assert all(x.fault.enabled and x.fault.probability == 0.5 for x in cells)


def test_preset_a2_a4_a6_expansions():
    _, cells = apply_preset(cfg(), "A2")
    assert len(cells) == 8 and len({x.label for x in cells}) == 8
    _, cells = apply_preset(cfg(), "A4")
    assert {x.tool_exposure for x in cells} == {"generalist", "specialist"}
    _, cells = apply_preset(cfg(methods=["speccyc"]), "A6")
    assert [x.method for x in cells] == ["react", "speccyc"] and all(x.record_states for x in cells)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        apply_preset(cfg(), "A9")


# running

def test_scripted_smoke_run_and_report(tmp_path):
    c = cfg(methods=["react", "speccyc"])
    result = run_ablation(c, "A1", tmp_path)
    assert result.logs_written == 8 and result.logs_skipped == 0
    logs = orchestrator.read_logs(result.run_dir)
    assert len(logs) == 8
    assert {lg.method for lg in logs} == {"react", "speccyc"}
    data = json.loads((result.run_dir / "report.json").read_text())
    assert len(data["configs"]) == 2
    for row in data["configs"]:
        assert row["episodes"] == 4
    assert (result.run_dir / "report_main.csv").read_text().count("\n") == 3
    manifest = json.loads((result.run_dir / "manifest.json").read_text())
    assert manifest["train_overlap"] == [] and len(manifest["test_task_ids"]) == 2


def test_resume_skips_completed_episodes(tmp_path):
    c = cfg(methods=["speccyc"])
    first = run_ablation(c, "A1", tmp_path)
    victim = sorted((first.run_dir / "speccyc").glob("*.log"))[0]
    victim.unlink()
    second = run_ablation(c, "A1", tmp_path)
    assert (second.logs_written, second.logs_skipped) == (1, 3)
    assert second.report.dumps() == first.report.dumps()


def test_changed_config_in_same_run_dir_rejected(tmp_path):
    run_ablation(cfg(methods=["speccyc"], run_id="r"), "A1", tmp_path)
    with pytest.raises(ConfigError):
        run_ablation(cfg(methods=["speccyc"], run_id="r", seeds=[5]), "A1", tmp_path)


def test_gencyc_graph_is_planned_once_and_frozen(tmp_path):
    result = run_ablation(cfg(methods=["gencyc"]), "A1", tmp_path)
    manifest = json.loads((result.run_dir / "manifest.json").read_text())
    (h,) = manifest["graph_hashes"].values()
    hashes = {lg.metadata["graph_hash"] for lg in orchestrator.read_logs(result.run_dir)}
    assert len(hashes) == 1
    files = list((tmp_path / "artifacts").rglob("*.graph.json"))
    assert len(files) == 1
    assert TaskGraph.loads(files[0].read_text()).size == 4


def test_textcraft4_has_no_training_split(tmp_path):
    with pytest.raises(EmptyTrainSplit):
        build_training_artifacts(cfg(benchmark="textcraft-4"), tmp_path)


def test_training_artifacts_use_train_ids_and_rebuild_identically(tmp_path):
    c = cfg(train_limit=6)
    a = build_training_artifacts(c, tmp_path)
    first = a.demo_path.read_bytes()
    b = build_training_artifacts(c, tmp_path)
    assert a.demo_hash == b.demo_hash and a.graph_hash == b.graph_hash
    assert b.demo_path.read_bytes() == first
    assert set(a.train_ids) <= set(benchmark_split("textcraft-2")[0])


def test_full_textcraft2_train_split_attempts_88_tasks(tmp_path):
    art = build_training_artifacts(cfg(), tmp_path, with_gen_graph=False)
    assert len(art.train_ids) == 88
    assert 0 < art.successes <= 88


def test_nshot_without_artifacts_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        run_ablation(cfg(methods=["speccyc"]), "A3", tmp_path)


# CLI

def test_cli_dump_task(tmp_path, capsys):
    assert cli.main(["dump-task", "--benchmark", "textcraft-3", "5"]) == cli.EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["task_id"] == 5 and data["depth"] == 3
    out = tmp_path / "t.json"
    assert cli.main(["dump-task", "5", "-o", str(out)]) == cli.EXIT_OK
    assert json.loads(out.read_text())["depth"] == 2


def test_cli_validate_graph(tmp_path, capsys):
    result = run_ablation(cfg(methods=["gencyc"], seeds=[0], task_limit=1), "A1", tmp_path)
    graph_file = next((tmp_path / "artifacts").rglob("*.graph.json"))
    assert cli.main(["validate-graph", str(graph_file)]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["criteria"] == 16
    bad = tmp_path / "bad.json"
    data = json.loads(graph_file.read_text())
    data["criteria"] = data["criteria"][:-1]
    bad.write_text(json.dumps(data))
    assert cli.main(["validate-graph", str(bad)]) == cli.EXIT_INVALID_GRAPH
    bad.write_text("not json")
    assert cli.main(["validate-graph", str(bad)]) == cli.EXIT_INVALID_GRAPH
    assert cli.main(["validate-graph", str(tmp_path / "missing.json")]) == cli.EXIT_ERROR
    assert result.logs_written == 1


def test_cli_run_report_and_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "s.json").write_text(json.dumps(SCRIPT))
    argv = ["run", "--preset", "A1", "--scripted", "s.json", "--methods", "react,depdag", "--task-limit", "2",
            "--seeds", "0", "--run-id", "r1"]
    assert cli.main(argv) == cli.EXIT_OK
    assert "episodes run: 4" in capsys.readouterr().out
    assert cli.main(["report", str(tmp_path / "runs" / "r1")]) == cli.EXIT_OK
    assert capsys.readouterr().out.startswith("method,benchmark")
    assert cli.main(["run", "--scripted", "s.json", "--methods", "nope"]) == cli.EXIT_CONFIG
    assert cli.main(["build-artifacts", "--scripted", "s.json", "--benchmark", "textcraft-4"]) == \
        cli.EXIT_EMPTY_TRAIN
