from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from .belief import Belief, bayes_update, block_hypotheses, entropy, mode, uniform_prior
from .errors import ConfigError, ImpossibleObservationError
from .observation import ObservationModel, perfect, sample_observation
from .planner import (
    BASELINES,
    AlphaVectorSet,
    ExpectimaxPolicy,
    GreedyPolicy,
    PbviPolicy,
    Policy,
    baseline_policy,
    expand_beliefs,
    is_terminal,
    pbvi_solve,
)
from .pomdp import PomdpModel, build_variant_a
from .utils import derive_seed
from .world import (
    OBJECT_PRESETS,
    GridWorld,
    ObjectPose,
    ObjectSpec,
    enumerate_poses,
    occupied_blocks,
    reduced_centers,
)

logger = logging.getLogger("scout")

POLICY_NAMES = ("greedy", "random", "sweep", "pbvi", "expectimax")


@dataclass(frozen=True)
class PolicyConfig:
    name: str = "greedy"
    depth: int = 2
    iterations: int = 3
    belief_depth: int = 2
    max_beliefs: int = 500
    node_budget: int = 1_000_000
    objective: str = "per_step"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy '{self.name}', expected one of {list(POLICY_NAMES)}")


@dataclass(frozen=True)
class EpisodeConfig:
    """
    Everything one episode depends on.

    `truth=None` draws the true pose from the episode seed; otherwise the
    given pose is used for every episode.
    """

    world: GridWorld
    spec: ObjectSpec = OBJECT_PRESETS["domino"]
    observation: ObservationModel = field(default_factory=perfect)
    policy: PolicyConfig = PolicyConfig()
    zoom_levels: int = 3
    truth: Optional[ObjectPose] = None
    allow_absent: bool = False
    absent_mass: float = 0.0
    seed: int = 0
    max_steps: int = 100
    threshold: float = 0.99
    discount: float = 0.95

    def __post_init__(self) -> None:
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.truth is not None and self.truth.is_absent and not self.allow_absent:
            raise ConfigError("an absent ground truth needs allow_absent")


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: str
    center: int
    zoom: int
    observation: str
    mode: Optional[int]
    mode_probability: float
    entropy: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "action": self.action,
            "center": self.center,
            "zoom": self.zoom,
            "observation": self.observation,
            "mode": self.mode,
            "mode_probability": self.mode_probability,
            "entropy": self.entropy,
        }


@dataclass(frozen=True)
class EpisodeResult:
    seed: int
    steps_taken: int
    success: bool
    declared: Optional[int]
    reason: str
    initial_entropy: float
    final_entropy: float
    policy: str = "greedy"
    truth: ObjectPose = ObjectPose()
    occupied: Tuple[int, ...] = ()
    records: Tuple[StepRecord, ...] = ()

    def summary(self) -> Dict[str, Any]:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "truth": self.truth.to_dict(),
            "occupied": list(self.occupied),
            "steps_taken": self.steps_taken,
            "success": self.success,
            "declared": self.declared,
            "reason": self.reason,
            "initial_entropy": self.initial_entropy,
            "final_entropy": self.final_entropy,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {**self.summary(), "records": [r.to_dict() for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


# ---------------------------------------------------------------------------
# model and policy construction
# ---------------------------------------------------------------------------


def episode_model(config: EpisodeConfig) -> PomdpModel:
    """Variant A model of an episode; shared by every episode with the same setup."""
    return _block_model(
        config.world,
        config.spec,
        config.observation,
        config.zoom_levels,
        config.allow_absent,
        config.absent_mass,
        config.discount,
    )


@lru_cache(maxsize=16)
def _block_model(world, spec, observation, zoom_levels, allow_absent, absent_mass, discount) -> PomdpModel:
    return build_variant_a(
        world,
        reduced_centers(world, spec),
        zoom_levels,
        observation,
        discount=discount,
        allow_absent=allow_absent,
        absent_mass=absent_mass,
    )


@lru_cache(maxsize=8)
def _solved_alphas(model: PomdpModel, policy: PolicyConfig) -> AlphaVectorSet:
    beliefs = expand_beliefs(model, model.initial, policy.belief_depth, policy.max_beliefs)
    return pbvi_solve(model, beliefs, policy.iterations, policy.objective, policy.workers)


def make_policy(config: EpisodeConfig, model: PomdpModel, rng: np.random.Generator) -> Policy:
    """
    Instantiate the configured policy for one episode.

    Args:
        config: Episode settings; `config.policy` names the policy and its parameters.
        model: Block-level model the policy plans on.
        rng: Policy stream; only the random baseline draws from it.

    Returns:
        Policy: A fresh policy. PBVI alpha sets are solved once per model and cached.
    """
    p = config.policy
    if p.name == "greedy":
        return GreedyPolicy(model, config.threshold)
    if p.name in BASELINES:
        return baseline_policy(p.name, model, rng)
    if p.name == "pbvi":
        return PbviPolicy(model, _solved_alphas(model, p), config.threshold)
    return ExpectimaxPolicy(model, p.depth, p.objective, p.node_budget)


def initial_belief(config: EpisodeConfig) -> Belief:
    """Uniform block prior, with `absent_mass` on the absent hypothesis when allowed."""
    return uniform_prior(block_hypotheses(config.world.n_blocks, config.allow_absent), config.absent_mass)


def draw_truth(config: EpisodeConfig, rng: np.random.Generator) -> ObjectPose:
    """Uniform draw over every valid pose (and ABSENT when allowed)."""
    poses = enumerate_poses(config.world, config.spec, config.allow_absent)
    return poses[int(rng.integers(len(poses)))]


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

StepCallback = Callable[[StepRecord, Belief], None]


def run_episode(config: EpisodeConfig, on_step: Optional[StepCallback] = None) -> EpisodeResult:
    """
    Simulate one search.

    The generator streams for observations, the policy and the true pose are
    spawned from the seed, so the result depends on the config alone. The
    episode stops as soon as the termination rule fires, also before the
    first snapshot; the declared hypothesis is the mode of the final belief.
    """
    obs_ss, policy_ss, pose_ss = np.random.SeedSequence(config.seed).spawn(3)
    obs_rng = np.random.default_rng(obs_ss)
    truth = config.truth if config.truth is not None else draw_truth(config, np.random.default_rng(pose_ss))
    occupied = tuple(sorted(occupied_blocks(config.world, config.spec, truth)))

    model = episode_model(config)
    policy = make_policy(config, model, np.random.default_rng(policy_ss))
    policy.reset()

    b = initial_belief(config)
    h0 = entropy(b)
    records: List[StepRecord] = []
    steps = 0
    term = is_terminal(None, None, b, config.threshold, steps, config.max_steps)
    while not term:
        a = policy.next_action(b)
        view = model.action_views[a]
        o = sample_observation(config.observation, obs_rng, truth, view, config.world, config.spec)
        try:
            b = bayes_update(b, view, o, config.observation, config.world)
        except ImpossibleObservationError as e:
            raise ImpossibleObservationError(
                f"episode seed={config.seed} step={steps + 1} action={model.actions[a]}: {e}"
            ) from e
        steps += 1
        m, p = mode(b)
        rec = StepRecord(steps, model.actions[a], view.center, view.zoom, o.name, m, p, entropy(b))
        records.append(rec)
        if on_step is not None:
            on_step(rec, b)
        term = is_terminal(view, o, b, config.threshold, steps, config.max_steps)

    declared = mode(b)[0]
    hit = declared is None if truth.is_absent else declared in occupied
    success = term.reason in ("confirmed", "confident") and hit
    logger.debug(
        "Episode seed=%d policy=%s truth=%s: %s after %d steps (declared=%s, success=%s)",
        config.seed, config.policy.name, truth.to_dict(), term.reason, steps, declared, success,
    )
    return EpisodeResult(
        seed=config.seed,
        steps_taken=steps,
        success=success,
        declared=declared,
        reason=term.reason,
        initial_entropy=h0,
        final_entropy=entropy(b),
        policy=config.policy.name,
        truth=truth,
        occupied=occupied,
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchMetrics:
    policy: str
    episodes: int
    success_rate: float
    mean_steps: float
    median_steps: float
    ci95_low: float
    ci95_high: float
    mean_initial_entropy: float
    mean_final_entropy: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "policy": self.policy,
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_steps": self.mean_steps,
            "median_steps": self.median_steps,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
            "mean_initial_entropy": self.mean_initial_entropy,
            "mean_final_entropy": self.mean_final_entropy,
        }


def summarize(policy: str, results: Sequence[EpisodeResult]) -> BatchMetrics:
    """
    Aggregate episodes. Results are ordered by seed first, so the numbers do
    not depend on the order the episodes finished in.
    """
    if not results:
        raise ValueError("cannot summarize an empty batch")
    ordered = sorted(results, key=lambda r: r.seed)
    steps = np.array([r.steps_taken for r in ordered], dtype=float)
    n = len(steps)
    mean = float(steps.mean())
    half = float(norm.ppf(0.975) * steps.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return BatchMetrics(
        policy=policy,
        episodes=n,
        success_rate=float(np.mean([r.success for r in ordered])),
        mean_steps=mean,
        median_steps=float(np.median(steps)),
        ci95_low=mean - half,
        ci95_high=mean + half,
        mean_initial_entropy=float(np.mean([r.initial_entropy for r in ordered])),
        mean_final_entropy=float(np.mean([r.final_entropy for r in ordered])),
    )


def episode_seeds(seed: int, n: int) -> List[int]:
    """Sub-seeds of a batch; episode i gets the same seed under every policy."""
    return [derive_seed(seed, i) for i in range(n)]


def _run_seeded(config: EpisodeConfig, seed: int) -> EpisodeResult:
    return run_episode(replace(config, seed=seed))


def run_batch(
    config: EpisodeConfig,
    n: int,
    workers: int = 1,
    backend: str = "loky",
) -> Tuple[BatchMetrics, List[EpisodeResult]]:
    """
    Run `n` episodes with sub-seeds derived from (config.seed, index).

    Two batches with the same seed see the same true poses and the same
    observation noise, whatever the policy and however many workers.
    """
    if n < 1:
        raise ConfigError(f"episode count must be >= 1, got {n}")
    seeds = episode_seeds(config.seed, n)
    if workers == 1:
        results = [_run_seeded(config, s) for s in seeds]
    else:
        results = Parallel(n_jobs=workers, backend=backend)(delayed(_run_seeded)(config, s) for s in seeds)
    metrics = summarize(config.policy.name, results)
    logger.info(
        "Batch %s: n=%d success=%.3f mean_steps=%.2f [%.2f, %.2f] entropy %.3f -> %.3f",
        metrics.policy, n, metrics.success_rate, metrics.mean_steps,
        metrics.ci95_low, metrics.ci95_high, metrics.mean_initial_entropy, metrics.mean_final_entropy,
    )
    return metrics, results


def compare_policies(
    config: EpisodeConfig,
    policies: Sequence[str],
    n: int,
    workers: int = 1,
    backend: str = "loky",
) -> pd.DataFrame:
    """
    One metrics row per policy on shared sub-seeds, plus the gap in mean
    steps to greedy (`margin_vs_greedy`, positive means greedy is faster).
    """
    rows = []
    for name in policies:
        cfg = replace(config, policy=replace(config.policy, name=name))
        metrics, _ = run_batch(cfg, n, workers, backend)
        rows.append(metrics.to_dict())
    frame = pd.DataFrame(rows)
    greedy = frame.loc[frame["policy"] == "greedy", "mean_steps"]
    frame["margin_vs_greedy"] = frame["mean_steps"] - greedy.iloc[0] if not greedy.empty else np.nan
    return frame
