import json
from pathlib import Path

import pytest

import tableplan
from tableplan.cli import main
from tableplan.config import SceneConfig

PLANS = Path(tableplan.__file__).parent / "plans"


def test_run_basic(capsys):
    assert main(["run", "--task", "pnp_twice", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "task=pnp_twice" in out
    assert "success=True" in out
    assert "chunks=4" in out
    assert "milestones=PnP Once" in out


def test_run_writes_log(tmp_path, capsys):
    log = tmp_path / "ep.jsonl"
    assert main(["run", "--task", "swap_cups", "--log", str(log)]) == 0
    assert "log written to" in capsys.readouterr().out
    lines = log.read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "header"
    assert json.loads(lines[-1])["kind"] == "footer"


def test_run_plan_override(capsys):
    # black-first oracle scored against a blue-first policy: completes, fails
    plan = str(PLANS / "swap_cups_blue.plan")
    assert main(["run", "--task", "swap_cups", "--plan", plan]) == 0
    assert "success=False" in capsys.readouterr().out


def test_run_noise_flags(capsys):
    assert main(["run", "--task", "pnp_twice", "--noise", "default",
                 "--seed", "3"]) == 0
    assert main(["run", "--task", "pnp_twice", "--noise", "none",
                 "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("task=pnp_twice") == 2


def test_run_needs_task_or_config(capsys):
    assert main(["run"]) == 2
    assert "need --config FILE or --task NAME" in capsys.readouterr().err


def test_run_from_config_file(tmp_path, capsys):
    cfg_path = tmp_path / "scene.json"
    cfg_path.write_text(json.dumps(SceneConfig(task="pnp_twice").to_dict()))
    assert main(["run", "--config", str(cfg_path), "--task", "swap_cups"]) == 0
    # an explicit config file wins over --task
    assert "task=pnp_twice" in capsys.readouterr().out


def test_run_rejects_bad_planner_choice():
    with pytest.raises(SystemExit) as exc_info:
        main(["run", "--task", "pnp_twice", "--planner", "oracle"])
    assert exc_info.value.code == 2


def test_validate_plan_ok(capsys):
    assert main(["validate-plan", str(PLANS / "swap_cups.plan")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK: policy 'swap-cups'")
    assert "3 steps (stage, cross, settle), 5 bindings" in out


def test_validate_plan_error_position(tmp_path, capsys):
    bad = tmp_path / "bad.plan"
    bad.write_text("(policy p\n  (plan")
    assert main(["validate-plan", str(bad)]) == 2
    assert capsys.readouterr().out.strip() == \
        f"{bad}:2:3: unclosed '('; expected ')'"


def test_replay_round_trip(tmp_path, capsys):
    log = tmp_path / "ep.jsonl"
    assert main(["run", "--task", "place_and_stack", "--seed", "5",
                 "--log", str(log)]) == 0
    capsys.readouterr()
    assert main(["replay", str(log)]) == 0
    assert capsys.readouterr().out.startswith("identical:")


def test_replay_divergence_exit_code(tmp_path, capsys):
    log = tmp_path / "ep.jsonl"
    main(["run", "--task", "pnp_twice", "--log", str(log)])
    lines = log.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["step"] = 999
    lines[1] = json.dumps(rec)
    log.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", str(log)]) == 3
    assert capsys.readouterr().out.startswith("DIVERGED:")


def test_replay_missing_file(capsys):
    assert main(["replay", "/nonexistent/ep.jsonl"]) == 2
    assert "error:" in capsys.readouterr().err


def test_suite_table_and_report(tmp_path, capsys):
    out_dir = tmp_path / "report"
    code = main(["suite", "--task", "pnp_twice", "--seeds", "2",
                 "--grid", "planner", "--planners", "code",
                 "--out", str(out_dir)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("planner")
    assert "100.0%" in out
    report = json.loads((out_dir / "suite.json").read_text())
    assert report["seeds"] == 2
    assert len(report["cells"]) == 1
    assert report["cells"][0]["success_rate"] == 1.0
    assert (out_dir / "suite.txt").read_text().startswith("planner")


def test_suite_rejects_unknown_axis(capsys):
    assert main(["suite", "--task", "pnp_twice", "--seeds", "1",
                 "--grid", "sauce"]) == 2
    assert "unknown grid axes" in capsys.readouterr().err


def test_suite_rejects_unknown_planner_value(capsys):
    assert main(["suite", "--task", "pnp_twice", "--seeds", "1",
                 "--grid", "planner", "--planners", "code,psychic"]) == 2
    assert "unknown planner mode" in capsys.readouterr().err


def test_assoc_bench(capsys):
    assert main(["assoc-bench", "--scenes", "5"]) == 0
    out = capsys.readouterr().out
    assert "exact scenes: 5/5" in out
    assert "pair accuracy:" in out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["--version"])
    assert exc_info.value.code == 0
    assert capsys.readouterr().out.strip() == tableplan.__version__
