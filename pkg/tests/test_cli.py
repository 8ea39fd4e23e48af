"""Command-line surface: subcommands, overrides, exit codes."""

import json

import pytest

from promptsearch.cli import main


def write_config(tmp_path, **overrides):
    doc = {
        "dataset": {"task": "add_two", "seed": 0},
        "backend": {"kind": "planted"},
        "algorithm": "iprompt",
        "search": {"patience_steps": 8, "max_steps": 25},
        "seed": 1,
        **overrides,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_gen_data_and_unknown_task(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["gen-data", "add_two", "--seed", "0", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 100
    assert main(["gen-data", "mod_two", "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "valid tasks" in capsys.readouterr().err


def test_search_then_resume_then_eval(tmp_path, capsys):
    config = write_config(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["search", "--config", str(config), "--out", str(run_dir)]) == 0
    assert (run_dir / "result.json").exists()
    assert main(["resume", str(run_dir)]) == 0
    assert main(["eval", str(run_dir), "--no-prompt"]) == 0
    out = capsys.readouterr().out
    assert "mrr:" in out
    report = json.loads((run_dir / "eval_report.json").read_text())
    assert "no_prompt" in report["generalization"]["methods"]


def test_search_seed_and_algorithm_overrides(tmp_path):
    config = write_config(tmp_path)
    run_dir = tmp_path / "avg"
    code = main(
        [
            "search",
            "--config",
            str(config),
            "--out",
            str(run_dir),
            "--seed",
            "9",
            "--algorithm",
            "avg_suffix",
            "--parallelism",
            "2",
        ]
    )
    assert code == 0
    saved = json.loads((run_dir / "config.json").read_text())
    assert saved["seed"] == 9
    assert saved["algorithm"] == "avg_suffix"
    assert saved["search"]["parallelism"] == 2


def test_search_requires_out_somewhere(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["search", "--config", str(config)]) == 2
    assert "output directory" in capsys.readouterr().err


def test_missing_and_invalid_configs_exit_2(tmp_path):
    assert main(["search", "--config", str(tmp_path / "absent.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["search", "--config", str(broken)]) == 2


def test_unreachable_backend_exits_3(tmp_path):
    config = write_config(
        tmp_path,
        backend={
            "kind": "http",
            "base_url": "http://127.0.0.1:9",
            "model": "m",
            "backoff_s": 0.01,
            "max_attempts": 2,
        },
    )
    assert main(["search", "--config", str(config), "--out", str(tmp_path / "run")]) == 3


def test_eval_on_non_run_directory_exits_4(tmp_path):
    assert main(["eval", str(tmp_path / "nope")]) == 4


def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])
