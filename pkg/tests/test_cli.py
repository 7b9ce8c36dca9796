import json
import re

import click
import pandas as pd
import pytest
from click.testing import CliRunner

from src.app.config import parse_config
from src.app.core import dispatch
from src.app.cli import scout
from src.app.records import EPISODE_SCHEMA, METRICS_SCHEMA, load_alphas


def _write_config(tmp_path, **sections):
    doc = {
        "world": {"rows": 2, "cols": 2},
        "object": {"preset": "cell"},
        "observation": {"preset": "perfect"},
        "zoom_levels": 1,
        "bench": {"episodes": 4, "policies": ["greedy", "sweep"]},
        **sections,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def runner():
    return CliRunner()


def test_export_writes_a_pomdp_file(runner, tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "m.pomdp"
    result = runner.invoke(scout, ["export", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text(encoding="utf-8").splitlines()
    assert "discount: 0.95" in lines
    assert "states: B1 B2 B3 B4" in lines
    assert "wrote" in result.stdout


def test_export_of_variant_b(runner, tmp_path):
    cfg = _write_config(tmp_path, variant="B", variant_b={"start_center": 4, "start_zoom": 1})
    out = tmp_path / "b.pomdp"
    assert runner.invoke(scout, ["export", "--config", str(cfg), "--out", str(out)]).exit_code == 0
    text = out.read_text(encoding="utf-8")
    assert "B4_C4_Z1" in text
    assert "variant B: 16 states, 4 actions, 2 observations" in text


def test_solve_writes_an_alpha_set(runner, tmp_path):
    cfg = _write_config(tmp_path, planner={"name": "pbvi", "iterations": 2, "belief_depth": 2})
    out = tmp_path / "alphas.json"
    result = runner.invoke(scout, ["solve", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    alphas = load_alphas(out)
    assert alphas.n_states == 4
    assert "V(b0)=" in result.stdout


def test_simulate_renders_and_reports(runner, tmp_path):
    cfg = _write_config(tmp_path, world={"rows": 4, "cols": 4}, zoom_levels=2, truth={"anchor": 11})
    log = tmp_path / "episode.jsonl"
    result = runner.invoke(scout, ["simulate", "--config", str(cfg), "--render", "--seed", "3", "--out", str(log)])
    assert result.exit_code == 0, result.output
    lines = result.stdout.strip().splitlines()
    assert re.fullmatch(r"success=true steps=\d+", lines[-1])
    assert lines[0].startswith("step 1: snap_C")
    assert "+----+" in result.stdout

    records = [json.loads(line) for line in log.read_text(encoding="utf-8").splitlines()]
    assert all(r["schema"] == EPISODE_SCHEMA for r in records)
    assert records[-1]["type"] == "summary"
    assert records[-1]["seed"] == 3
    assert records[-1]["steps_taken"] == len(records) - 1


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_bench_writes_one_row_per_policy(runner, tmp_path, fmt):
    cfg = _write_config(tmp_path)
    out = tmp_path / f"metrics.{fmt}"
    result = runner.invoke(scout, ["bench", "--config", str(cfg), "--format", fmt, "--out", str(out)])
    assert result.exit_code == 0, result.output
    if fmt == "csv":
        rows = pd.read_csv(out).to_dict(orient="records")
    else:
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert doc["schema"] == METRICS_SCHEMA
        rows = doc["rows"]
    assert [r["policy"] for r in rows] == ["greedy", "sweep"]
    assert all(r["episodes"] == 4 for r in rows)


def test_simulate_and_bench_are_reproducible_byte_for_byte(runner, tmp_path):
    cfg = _write_config(
        tmp_path,
        world={"rows": 3, "cols": 3},
        observation={"preset": "noisy-default"},
        bench={"episodes": 6, "policies": ["greedy", "sweep", "random"]},
    )
    for command, extra, name in (
        ("simulate", ["--render"], "episode{}.jsonl"),
        ("bench", ["--format", "csv"], "metrics{}.csv"),
    ):
        outputs = []
        for run in (1, 2):
            out = tmp_path / name.format(run)
            result = runner.invoke(scout, [command, "--config", str(cfg), "--seed", "11", "--out", str(out), *extra])
            assert result.exit_code == 0, result.output
            outputs.append((result.stdout, out.read_bytes()))
        assert outputs[0] == outputs[1], command
        assert outputs[0][1]


def test_bad_config_exits_with_one(runner, tmp_path):
    cfg = _write_config(tmp_path, discount=2)
    result = runner.invoke(scout, ["simulate", "--config", str(cfg)])
    assert result.exit_code == 1
    assert "discount" in result.output


def test_missing_config_exits_with_one(runner, tmp_path):
    result = runner.invoke(scout, ["export", "--config", str(tmp_path / "nope.json")])
    assert result.exit_code == 1


def test_negative_seed_is_a_usage_error(runner, tmp_path):
    cfg = _write_config(tmp_path)
    assert runner.invoke(scout, ["simulate", "--config", str(cfg), "--seed", "-1"]).exit_code == 2


def test_unknown_subcommand_code():
    cfg = parse_config(json.dumps({"world": {"rows": 2, "cols": 2}}))
    assert dispatch("plot", cfg, echo=lambda _: None) == 2


def test_help_lists_every_subcommand(runner):
    result = runner.invoke(scout, ["-h"])
    assert result.exit_code == 0
    for name in ("export", "solve", "simulate", "bench"):
        assert name in result.output


@pytest.mark.parametrize("name", ["export", "solve", "simulate", "bench"])
def test_every_option_is_documented(runner, name):
    command = scout.commands[name]
    for param in command.params:
        if isinstance(param, click.Option):
            assert param.help, f"{name} {param.opts} has no help text"
    text = runner.invoke(scout, [name, "--help"]).output
    for flag in ("--config", "--seed", "--out"):
        assert flag in text
    if name == "simulate":
        assert "--render" in text
    if name == "bench":
        assert "--format" in text
