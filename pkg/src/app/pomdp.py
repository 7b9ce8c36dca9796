from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .belief import Belief, block_hypotheses, uniform_prior
from .errors import ConfigError, ImpossibleObservationError, ModelError
from .observation import Observation, ObservationModel, detection_vector
from .world import CameraView, GridWorld

logger = logging.getLogger("scout")

ROW_TOL = 1e-12
OBSERVATION_NAMES: Tuple[str, ...] = tuple(o.name for o in Observation)


class ModelVariant(str, Enum):
    """A: camera pose lives in the action. B: camera pose is part of the state."""

    A = "A"
    B = "B"


@dataclass(frozen=True)
class SurrogateReward:
    """
    Linear stand-in for the mode reward, used where a state-action reward is
    required (file export). Every snapshot costs `snapshot_cost`; a Zoom-1
    snapshot on the object's block adds `hit_reward`.
    """

    hit_reward: float = 1.0
    snapshot_cost: float = 0.01


DEFAULT_SURROGATE = SurrogateReward()


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """
    Finite POMDP (states, actions, T, observations, O, R, discount).

    `transitions[a]` is a sparse (S, S) matrix T(s, a, s'); `observation_probs`
    has shape (A, S', O) and `rewards` shape (A, S). `action_views` and
    `state_blocks` tie indices back to the search problem and are empty for
    models that do not encode it.
    """

    states: Tuple[str, ...]
    actions: Tuple[str, ...]
    observations: Tuple[str, ...]
    transitions: Tuple[sparse.csr_matrix, ...]
    observation_probs: np.ndarray
    rewards: np.ndarray
    discount: float
    initial: np.ndarray
    variant: Optional[ModelVariant] = None
    action_views: Tuple[CameraView, ...] = ()
    state_blocks: Tuple[Optional[int], ...] = ()

    def __post_init__(self) -> None:
        for arr in (self.observation_probs, self.rewards, self.initial):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @cached_property
    def identity_transitions(self) -> bool:
        eye = sparse.identity(self.n_states, format="csr")
        return all((t != eye).nnz == 0 for t in self.transitions)

    def view(self, a: int) -> Optional[CameraView]:
        return self.action_views[a] if self.action_views else None

    def predict(self, b: np.ndarray, a: int) -> np.ndarray:
        """State distribution after action `a`, before observing."""
        if self.identity_transitions:
            return np.asarray(b, dtype=float)
        return self.transitions[a].T.dot(b)

    def predict_all(self, b: np.ndarray) -> np.ndarray:
        """(A, S) array of predicted distributions, one row per action."""
        b = np.asarray(b, dtype=float)
        if self.identity_transitions:
            return np.broadcast_to(b, (self.n_actions, self.n_states))
        return np.vstack([t.T.dot(b) for t in self.transitions])

    def back_project(self, a: int, vec: np.ndarray) -> np.ndarray:
        """T_a @ vec: pulls a function of next states back onto current states."""
        if self.identity_transitions:
            return np.asarray(vec, dtype=float)
        return self.transitions[a].dot(vec)

    def update(self, b: np.ndarray, a: int, o: int) -> np.ndarray:
        joint = self.predict(b, a) * self.observation_probs[a, :, o]
        z = joint.sum()
        if not z > 0:
            raise ImpossibleObservationError(
                f"observation {self.observations[o]} after {self.actions[a]} has zero probability"
            )
        return joint / z

    def block_marginal(self, b: np.ndarray, hypotheses: Sequence[Optional[int]]) -> np.ndarray:
        """Sum a state distribution onto block hypotheses (B component only)."""
        index = {h: i for i, h in enumerate(hypotheses)}
        out = np.zeros(len(hypotheses))
        np.add.at(out, [index[blk] for blk in self.state_blocks], np.asarray(b, dtype=float))
        return out

    def check(self) -> None:
        """Raise ModelError unless every T and O row is a finite distribution."""
        for a, t in enumerate(self.transitions):
            if t.shape != (self.n_states, self.n_states):
                raise ModelError(f"T for action {self.actions[a]} has shape {t.shape}")
            if not np.all(np.isfinite(t.data)) or np.any(t.data < 0):
                raise ModelError(f"T for action {self.actions[a]} has invalid entries")
            sums = np.asarray(t.sum(axis=1)).ravel()
            if np.any(np.abs(sums - 1.0) > ROW_TOL):
                raise ModelError(f"T rows for action {self.actions[a]} do not sum to 1")
        o = self.observation_probs
        if o.shape != (self.n_actions, self.n_states, self.n_observations):
            raise ModelError(f"O has shape {o.shape}")
        if not np.all(np.isfinite(o)) or np.any(o < 0):
            raise ModelError("O has invalid entries")
        if np.any(np.abs(o.sum(axis=2) - 1.0) > ROW_TOL):
            raise ModelError("O rows do not sum to 1")
        if self.rewards.shape != (self.n_actions, self.n_states) or not np.all(np.isfinite(self.rewards)):
            raise ModelError("R is not a finite (A, S) table")
        if not 0.0 < self.discount < 1.0:
            raise ModelError(f"discount must be in (0, 1), got {self.discount}")
        if abs(self.initial.sum() - 1.0) > 1e-9:
            raise ModelError("initial belief does not sum to 1")


def belief_reward(b: Belief | np.ndarray) -> float:
    """Mode reward: the largest probability in the belief."""
    probs = b.probs if isinstance(b, Belief) else np.asarray(b)
    return float(probs.max())


def unit_alphas(n_states: int) -> np.ndarray:
    """Unit vectors e_s; their upper envelope is exactly `belief_reward`."""
    return np.eye(n_states)


def state_label(block: Optional[int]) -> str:
    return "Babsent" if block is None else f"B{block}"


def action_label(view: CameraView) -> str:
    return f"snap_{view.label}"


def camera_poses(centers: Sequence[int], zoom_levels: int) -> Tuple[CameraView, ...]:
    """Action order: center ascending, then zoom ascending."""
    return tuple(CameraView(c, k) for c in sorted(centers) for k in range(1, zoom_levels + 1))


def surrogate_rewards(
    views: Sequence[CameraView],
    state_blocks: Sequence[Optional[int]],
    surrogate: SurrogateReward = DEFAULT_SURROGATE,
) -> np.ndarray:
    blocks = np.array([-1 if b is None else b for b in state_blocks])
    rewards = np.full((len(views), len(state_blocks)), -surrogate.snapshot_cost)
    for a, v in enumerate(views):
        if v.zoom == 1:
            rewards[a, blocks == v.center] += surrogate.hit_reward
    return rewards


def _check_build_args(
    world: GridWorld,
    centers: Sequence[int],
    zoom_levels: int,
    model: ObservationModel,
    discount: float,
) -> None:
    if not centers:
        raise ModelError("no observation centers")
    bad = [c for c in centers if not world.contains(c)]
    if bad:
        raise ModelError(f"centers outside the grid: {bad}")
    if zoom_levels < 1:
        raise ModelError(f"zoom_levels must be >= 1, got {zoom_levels}")
    if zoom_levels > model.zoom_levels:
        raise ConfigError(f"{zoom_levels} zoom levels requested but model '{model.name}' defines {model.zoom_levels}")
    if not 0.0 < discount < 1.0:
        raise ConfigError(f"discount must be in (0, 1), got {discount}")


def build_variant_a(
    world: GridWorld,
    centers: Sequence[int],
    zoom_levels: int,
    model: ObservationModel,
    discount: float = 0.95,
    allow_absent: bool = False,
    absent_mass: float = 0.0,
    surrogate: SurrogateReward = DEFAULT_SURROGATE,
) -> PomdpModel:
    """States are block hypotheses; actions are snapshots; T is the identity."""
    _check_build_args(world, centers, zoom_levels, model, discount)
    hyps = block_hypotheses(world.n_blocks, allow_absent)
    views = camera_poses(centers, zoom_levels)
    n = len(hyps)

    detect = np.vstack([detection_vector(model, v, world, hyps) for v in views])
    obs = np.stack([detect, 1.0 - detect], axis=2)
    eye = sparse.identity(n, format="csr")

    pomdp = PomdpModel(
        states=tuple(state_label(h) for h in hyps),
        actions=tuple(action_label(v) for v in views),
        observations=OBSERVATION_NAMES,
        transitions=tuple(eye for _ in views),
        observation_probs=obs,
        rewards=surrogate_rewards(views, hyps, surrogate),
        discount=float(discount),
        initial=uniform_prior(hyps, absent_mass).probs.copy(),
        variant=ModelVariant.A,
        action_views=views,
        state_blocks=hyps,
    )
    pomdp.check()
    logger.info("Built variant A model: |S|=%d |A|=%d", pomdp.n_states, pomdp.n_actions)
    return pomdp


def build_variant_b(
    world: GridWorld,
    centers: Sequence[int],
    zoom_levels: int,
    model: ObservationModel,
    discount: float = 0.95,
    allow_absent: bool = False,
    absent_mass: float = 0.0,
    start_view: Optional[CameraView] = None,
    surrogate: SurrogateReward = DEFAULT_SURROGATE,
) -> PomdpModel:
    """
    States are (block hypothesis, camera pose) pairs.

    A snapshot moves the camera pose component deterministically and leaves
    the block component unchanged. The observation depends on the pose the
    state lands in. Initial mass is spread over the states whose pose is the
    starting camera pose.
    """
    _check_build_args(world, centers, zoom_levels, model, discount)
    hyps = block_hypotheses(world.n_blocks, allow_absent)
    views = camera_poses(centers, zoom_levels)
    start = start_view or views[0]
    if start not in views:
        raise ConfigError(f"start view {start.label} is not one of the camera poses")
    n_h, n_p = len(hyps), len(views)
    n = n_h * n_p

    def index(h_idx: int, p_idx: int) -> int:
        return h_idx * n_p + p_idx

    states = tuple(f"{state_label(h)}_{v.label}" for h in hyps for v in views)
    state_blocks = tuple(h for h in hyps for _ in views)

    rows = np.arange(n)
    h_of_state = rows // n_p
    transitions = []
    for a in range(n_p):
        cols = index(h_of_state, a)
        transitions.append(sparse.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n)))

    # O(o | [B_i, C, Z]) depends only on the landing state, so it is shared by all actions.
    detect = np.empty(n)
    for p_idx, v in enumerate(views):
        detect[index(np.arange(n_h), p_idx)] = detection_vector(model, v, world, hyps)
    per_state = np.stack([detect, 1.0 - detect], axis=1)
    obs = np.broadcast_to(per_state, (n_p, n, 2)).copy()

    prior = uniform_prior(hyps, absent_mass).probs
    initial = np.zeros(n)
    initial[index(np.arange(n_h), views.index(start))] = prior

    pomdp = PomdpModel(
        states=states,
        actions=tuple(action_label(v) for v in views),
        observations=OBSERVATION_NAMES,
        transitions=tuple(transitions),
        observation_probs=obs,
        rewards=surrogate_rewards(views, state_blocks, surrogate),
        discount=float(discount),
        initial=initial,
        variant=ModelVariant.B,
        action_views=views,
        state_blocks=state_blocks,
    )
    pomdp.check()
    logger.info("Built variant B model: |S|=%d |A|=%d start=%s", pomdp.n_states, pomdp.n_actions, start.label)
    return pomdp


def build_model(
    variant: ModelVariant,
    world: GridWorld,
    centers: Sequence[int],
    zoom_levels: int,
    model: ObservationModel,
    discount: float = 0.95,
    allow_absent: bool = False,
    absent_mass: float = 0.0,
    start_view: Optional[CameraView] = None,
    surrogate: SurrogateReward = DEFAULT_SURROGATE,
) -> PomdpModel:
    if ModelVariant(variant) == ModelVariant.A:
        return build_variant_a(world, centers, zoom_levels, model, discount, allow_absent, absent_mass, surrogate)
    return build_variant_b(
        world, centers, zoom_levels, model, discount, allow_absent, absent_mass, start_view, surrogate
    )
