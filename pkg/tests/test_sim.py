import json
import math
from dataclasses import replace
from pathlib import Path

import pytest

from src.app.errors import ConfigError
from src.app.observation import noisy_default, perfect
from src.app.sim import (
    EpisodeConfig,
    EpisodeResult,
    PolicyConfig,
    compare_policies,
    episode_seeds,
    initial_belief,
    run_batch,
    run_episode,
    summarize,
)
from src.app.world import ABSENT, OBJECT_PRESETS, GridWorld, ObjectPose

CELL = OBJECT_PRESETS["cell"]
W8 = GridWorld(8, 8)


def _config(**kw):
    base = dict(world=W8, spec=CELL, observation=perfect(3), seed=3)
    base.update(kw)
    return EpisodeConfig(**base)


def test_zero_step_budget_ends_before_the_first_snapshot():
    result = run_episode(_config(max_steps=0))
    assert result.steps_taken == 0
    assert result.reason == "budget"
    assert not result.success
    assert result.records == ()


PINNED_STEPS = Path(__file__).parent / "fixtures" / "perfect_greedy_steps.json"


def test_greedy_with_a_perfect_sensor_finds_every_cell():
    pinned = {int(k): v for k, v in json.loads(PINNED_STEPS.read_text(encoding="utf-8")).items()}
    assert sorted(pinned) == list(W8.blocks())
    for block in W8.blocks():
        cfg = _config(truth=ObjectPose.placed(block))
        result = run_episode(cfg)
        assert result.success, block
        assert result.steps_taken <= pinned[block], block
        assert result.steps_taken <= W8.n_blocks - 1
        assert result.declared == block
        assert run_episode(cfg).to_json() == result.to_json()


def test_greedy_narrows_the_corner_cell_with_wide_views():
    result = run_episode(_config(truth=ObjectPose.placed(1)))
    assert [(r.center, r.zoom) for r in result.records] == [(1, 3), (4, 3), (25, 3)]
    assert [r.observation for r in result.records] == ["O1", "O2", "O2"]
    assert result.reason == "confident"


def test_same_seed_same_episode():
    cfg = _config(observation=noisy_default(), seed=41)
    assert run_episode(cfg).to_json() == run_episode(cfg).to_json()
    assert run_episode(cfg).truth == run_episode(replace(cfg, policy=PolicyConfig("sweep"))).truth


def test_step_callback_sees_every_snapshot():
    seen = []
    result = run_episode(_config(observation=noisy_default()), on_step=lambda rec, b: seen.append((rec.step, b)))
    assert [s for s, _ in seen] == list(range(1, result.steps_taken + 1))
    assert [r.step for r in result.records] == [s for s, _ in seen]
    assert all(abs(b.probs.sum() - 1.0) <= 1e-9 for _, b in seen)


def test_records_describe_the_snapshots():
    result = run_episode(_config(seed=5))
    for rec in result.records:
        assert rec.action == f"snap_C{rec.center}_Z{rec.zoom}"
        assert rec.observation in ("O1", "O2")
        assert 0.0 <= rec.mode_probability <= 1.0
    assert result.initial_entropy == pytest.approx(math.log(64))


def test_absent_truth_is_declared_absent():
    cfg = _config(truth=ABSENT, allow_absent=True, absent_mass=0.2, max_steps=200, policy=PolicyConfig("sweep"))
    result = run_episode(cfg)
    assert result.occupied == ()
    assert result.declared is None
    assert result.success


def test_absent_truth_needs_allow_absent():
    with pytest.raises(ConfigError):
        _config(truth=ABSENT)
    with pytest.raises(ConfigError):
        _config(max_steps=-1)
    with pytest.raises(ConfigError):
        PolicyConfig("astar")


@pytest.mark.parametrize(
    "policy",
    [
        PolicyConfig("sweep"),
        PolicyConfig("pbvi", iterations=2, belief_depth=8, max_beliefs=1000),
        PolicyConfig("expectimax", depth=1),
    ],
)
def test_planning_policies_find_the_object_on_a_small_grid(policy):
    world = GridWorld(3, 3)
    cfg = EpisodeConfig(world=world, spec=CELL, observation=perfect(3), policy=policy, seed=9)
    for block in world.blocks():
        result = run_episode(replace(cfg, truth=ObjectPose.placed(block)))
        assert result.success
        assert result.declared == block


def test_random_policy_episode_terminates():
    result = run_episode(_config(policy=PolicyConfig("random"), seed=17))
    assert result.reason in ("confirmed", "confident", "budget")
    assert result.steps_taken <= 100


def test_metrics_of_a_single_episode():
    metrics, results = run_batch(_config(observation=noisy_default()), 1)
    assert metrics.episodes == 1
    assert metrics.mean_steps == metrics.median_steps == results[0].steps_taken
    assert metrics.ci95_low == metrics.ci95_high == metrics.mean_steps


def _result(seed, steps, success):
    return EpisodeResult(
        seed=seed, steps_taken=steps, success=success, declared=1, reason="confirmed",
        initial_entropy=2.0, final_entropy=0.5,
    )


def test_summary_of_a_hand_made_batch():
    metrics = summarize("greedy", [_result(3, 6, True), _result(1, 2, True), _result(2, 4, False)])
    half = 1.959963984540054 * 2.0 / math.sqrt(3)
    assert metrics.success_rate == pytest.approx(2 / 3)
    assert metrics.mean_steps == 4.0
    assert metrics.median_steps == 4.0
    assert metrics.ci95_low == pytest.approx(4.0 - half)
    assert metrics.ci95_high == pytest.approx(4.0 + half)
    assert metrics.mean_initial_entropy == 2.0
    assert metrics.mean_final_entropy == 0.5
    with pytest.raises(ValueError):
        summarize("greedy", [])


def test_summary_does_not_depend_on_order():
    rs = [_result(s, s * 2 + 1, s % 2 == 0) for s in range(7)]
    assert summarize("x", rs) == summarize("x", rs[::-1])


def test_sub_seeds_are_stable():
    assert episode_seeds(0, 5) == episode_seeds(0, 5)
    assert len(set(episode_seeds(0, 100))) == 100
    assert episode_seeds(0, 3) == episode_seeds(0, 5)[:3]
    assert all(0 <= s < 2**63 for s in episode_seeds(7, 20))


def test_batch_results_do_not_depend_on_workers():
    cfg = _config(observation=noisy_default(), seed=11)
    m1, r1 = run_batch(cfg, 6)
    m2, r2 = run_batch(cfg, 6, workers=2, backend="threading")
    assert m1 == m2
    assert [r.to_json() for r in r1] == [r.to_json() for r in r2]


def test_batch_needs_an_episode():
    with pytest.raises(ConfigError):
        run_batch(_config(), 0)


def test_compare_policies_frame():
    frame = compare_policies(_config(seed=2), ["greedy", "sweep"], 3)
    assert frame["policy"].tolist() == ["greedy", "sweep"]
    assert frame.loc[0, "margin_vs_greedy"] == 0.0
    assert frame.loc[1, "margin_vs_greedy"] == frame.loc[1, "mean_steps"] - frame.loc[0, "mean_steps"]


@pytest.mark.slow
def test_greedy_beats_the_baselines_with_a_noisy_sensor():
    cfg = _config(observation=noisy_default(), seed=2024)
    frame = compare_policies(cfg, ["greedy", "sweep", "random"], 1000).set_index("policy")
    assert frame.loc["greedy", "mean_steps"] < frame.loc["sweep", "mean_steps"]
    assert frame.loc["greedy", "mean_steps"] < frame.loc["random", "mean_steps"]


@pytest.mark.slow
def test_greedy_episodes_reduce_entropy():
    metrics, _ = run_batch(_config(observation=noisy_default(), seed=77), 500)
    assert metrics.mean_final_entropy < metrics.mean_initial_entropy


@pytest.mark.parametrize("name", ["greedy", "sweep"])
def test_perfect_sensor_never_rechecks_a_cleared_block(name):
    for seed in range(20):
        beliefs = [initial_belief(_config())]
        result = run_episode(_config(policy=PolicyConfig(name), seed=seed), on_step=lambda rec, b: beliefs.append(b))
        for rec, before in zip(result.records, beliefs):
            if rec.zoom == 1:
                assert before.probability(rec.center) > 0.0
