import json
import logging

import numpy as np
import pandas as pd
import pytest

from src.app.belief import Belief, block_hypotheses, uniform_prior
from src.app.errors import ModelError
from src.app.logging_setup import setup_logging
from src.app.observation import perfect
from src.app.planner import expand_beliefs, pbvi_solve
from src.app.pomdp import build_variant_a
from src.app.records import (
    ALPHAS_SCHEMA,
    EPISODE_SCHEMA,
    METRICS_SCHEMA,
    episode_lines,
    load_alphas,
    save_alphas,
    write_episode_log,
    write_metrics,
)
from src.app.render import RAMP, quantile_levels, render_belief, shade
from src.app.sim import EpisodeConfig, run_episode
from src.app.world import OBJECT_PRESETS, GridWorld, ObjectPose

W4 = GridWorld(4, 4)


def _episode():
    cfg = EpisodeConfig(world=W4, spec=OBJECT_PRESETS["cell"], observation=perfect(3), truth=ObjectPose.placed(7))
    return run_episode(cfg)


def test_episode_lines(tmp_path):
    result = _episode()
    lines = [json.loads(line) for line in episode_lines(result)]
    assert [r["type"] for r in lines] == ["step"] * result.steps_taken + ["summary"]
    assert {r["schema"] for r in lines} == {EPISODE_SCHEMA}
    assert lines[-1]["truth"] == {"anchor": 7, "orientation": 0}
    assert lines[-1]["success"] is True

    path = write_episode_log(tmp_path / "logs" / "e.jsonl", result)
    assert path.read_text(encoding="utf-8").splitlines() == episode_lines(result)


def test_metrics_files(tmp_path):
    frame = pd.DataFrame([{"policy": "greedy", "episodes": 2, "mean_steps": 3.5}])
    doc = json.loads(write_metrics(tmp_path / "m.json", frame).read_text(encoding="utf-8"))
    assert doc == {"schema": METRICS_SCHEMA, "rows": [{"policy": "greedy", "episodes": 2, "mean_steps": 3.5}]}
    assert pd.read_csv(write_metrics(tmp_path / "m.csv", frame, "csv")).equals(frame)
    with pytest.raises(ValueError):
        write_metrics(tmp_path / "m.txt", frame, "xml")


def test_alpha_file_round_trip(tmp_path):
    model = build_variant_a(GridWorld(2, 2), [1, 2, 3, 4], 1, perfect(1))
    alphas = pbvi_solve(model, expand_beliefs(model, model.initial, 2), 2)
    path = save_alphas(tmp_path / "a.json", alphas, model)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["schema"] == ALPHAS_SCHEMA
    assert doc["action_names"] == list(model.actions)
    back = load_alphas(path)
    assert np.array_equal(back.vectors, alphas.vectors)
    assert back.actions == alphas.actions


def test_alpha_file_errors(tmp_path):
    with pytest.raises(ModelError):
        load_alphas(tmp_path / "missing.json")
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"schema": "scout.metrics/1"}), encoding="utf-8")
    with pytest.raises(ModelError, match=ALPHAS_SCHEMA):
        load_alphas(path)


def test_shade():
    assert shade(0.0) == " "
    assert shade(1.0) == "@"
    assert shade(1e-9) == RAMP[1]
    assert shade(0.5) == RAMP[5]
    assert shade(2 / 3) == RAMP[6]


def test_quantile_levels_rank_the_positive_mass():
    levels = quantile_levels(np.array([0.0, 0.1, 0.1, 0.8]))
    np.testing.assert_allclose(levels, [0.0, 2 / 3, 2 / 3, 1.0])
    assert quantile_levels(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]


def test_render_depends_only_on_the_ordering():
    world = GridWorld(1, 4)
    hyps = block_hypotheses(4)
    a = render_belief(world, Belief(hyps, np.array([0.0, 0.1, 0.1, 0.8])))
    b = render_belief(world, Belief(hyps, np.array([0.0, 0.3, 0.3, 0.4])))
    assert a.splitlines()[1] == "| **@|"
    assert a == b


def test_render_belief():
    b = uniform_prior(block_hypotheses(16))
    text = render_belief(W4, b)
    assert text.splitlines() == ["+----+"] + ["|@@@@|"] * 4 + ["+----+"]

    probs = np.zeros(17)
    probs[0], probs[16] = 0.75, 0.25
    text = render_belief(W4, Belief(block_hypotheses(16, allow_absent=True), probs))
    lines = text.splitlines()
    assert lines[1] == "|@   |"
    assert lines[-1] == "absent: 0.2500"


def test_logging_setup_is_idempotent(tmp_path):
    cfg = {"level": "debug", "to_file": True, "file_path": str(tmp_path / "scout.log")}
    setup_logging(cfg)
    logger = setup_logging(cfg)
    assert logger.level == logging.DEBUG
    assert len(logger.handlers) == 2
    logger.info("hello")
    for h in logger.handlers:
        h.flush()
    assert "hello" in (tmp_path / "scout.log").read_text(encoding="utf-8")
