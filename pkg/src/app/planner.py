from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from .belief import Belief, mode
from .errors import ModelError, SearchBudgetError
from .observation import Observation
from .pomdp import PomdpModel, belief_reward, unit_alphas
from .world import CameraView

logger = logging.getLogger("scout")

TIE_TOL = 1e-12
OBJECTIVES = ("per_step", "terminal")
NO_ACTION = -1


def _vec(b: Belief | np.ndarray) -> np.ndarray:
    return b.probs if isinstance(b, Belief) else np.asarray(b, dtype=float)


def _tie_key(model: PomdpModel, a: int) -> Tuple[int, int, int]:
    """Higher zoom first, then lower center, then action index."""
    view = model.view(a)
    if view is None:
        return (0, 0, a)
    return (-view.zoom, view.center, a)


def select_action(model: PomdpModel, values: np.ndarray, actions: Optional[Sequence[int]] = None) -> int:
    """Argmax over `values` with the deterministic tie-break."""
    idx = np.arange(len(values)) if actions is None else np.asarray(actions)
    best = values.max()
    candidates = [int(idx[i]) for i in np.flatnonzero(values >= best - TIE_TOL)]
    return min(candidates, key=lambda a: _tie_key(model, a))


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise ModelError(f"unknown objective '{objective}', expected one of {list(OBJECTIVES)}")


def successors(model: PomdpModel, b: np.ndarray, a: int) -> List[Tuple[int, float, np.ndarray]]:
    """(observation, probability, posterior) for every observation with nonzero probability."""
    pred = model.predict(b, a)
    out = []
    for o in range(model.n_observations):
        w = pred * model.observation_probs[a, :, o]
        p = float(w.sum())
        if p > 0.0:
            out.append((o, p, w / p))
    return out


def expected_mode_values(model: PomdpModel, b: Belief | np.ndarray) -> np.ndarray:
    """E_o[rho(b')] for every action, computed from unnormalized posteriors."""
    pred = model.predict_all(_vec(b))
    joint = pred[:, :, None] * model.observation_probs
    return joint.max(axis=1).sum(axis=1)


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------


def exact_expectimax(
    model: PomdpModel,
    b: Belief | np.ndarray,
    depth: int,
    objective: str = "per_step",
    node_budget: int = 1_000_000,
) -> Tuple[float, Optional[int]]:
    """
    Exhaustive finite-depth search over actions and observations.

    per_step:  V_0 = rho,  V_d(b) = max_a sum_o P(o) [rho(b') + discount * V_{d-1}(b')]
    terminal:  V_0 = rho,  V_d(b) = max_a sum_o P(o) V_{d-1}(b')

    Returns (value, best action); the action is None at depth 0. Raises
    SearchBudgetError once more than `node_budget` posteriors are expanded.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    _check_objective(objective)
    memo: Dict[Tuple[int, bytes], Tuple[float, Optional[int]]] = {}
    expanded = 0
    per_step = objective == "per_step"

    def value(vec: np.ndarray, d: int) -> Tuple[float, Optional[int]]:
        nonlocal expanded
        if d == 0:
            return belief_reward(vec), None
        key = (d, np.round(vec, 12).tobytes())
        if key in memo:
            return memo[key]
        q = np.zeros(model.n_actions)
        for a in range(model.n_actions):
            for _, p, post in successors(model, vec, a):
                expanded += 1
                if expanded > node_budget:
                    raise SearchBudgetError(
                        f"expectimax at depth {depth} exceeded the node budget of {node_budget}"
                    )
                future = value(post, d - 1)[0]
                q[a] += p * (belief_reward(post) + model.discount * future) if per_step else p * future
        a_best = select_action(model, q)
        memo[key] = (float(q[a_best]), a_best)
        return memo[key]

    v, a = value(_vec(b), depth)
    logger.debug("expectimax depth=%d value=%.6f action=%s nodes=%d", depth, v, a, expanded)
    return v, a


# ---------------------------------------------------------------------------
# point-based value iteration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AlphaVectorSet:
    """
    Piecewise-linear convex value function: V(b) = max_j vectors[j] . b.

    `actions[j]` is the action that vector j recommends, or NO_ACTION for
    the initial unit vectors.
    """

    vectors: np.ndarray
    actions: Tuple[int, ...]

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ModelError(f"alpha set needs a nonempty (m, S) array, got shape {vectors.shape}")
        if len(self.actions) != vectors.shape[0]:
            raise ModelError(f"{vectors.shape[0]} alpha vectors but {len(self.actions)} actions")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_states(self) -> int:
        return self.vectors.shape[1]

    def values(self, b: Belief | np.ndarray) -> np.ndarray:
        return self.vectors @ _vec(b)

    def value(self, b: Belief | np.ndarray) -> float:
        return float(self.values(b).max())

    def best_action(self, b: Belief | np.ndarray) -> int:
        vals = self.values(b)
        best = int(np.argmax(vals))
        return self.actions[best]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_states": self.n_states,
            "actions": list(self.actions),
            "vectors": self.vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AlphaVectorSet":
        vectors = np.asarray(data["vectors"], dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] != int(data["n_states"]):
            raise ModelError(f"alpha vectors do not have {data['n_states']} entries each")
        return cls(vectors=vectors, actions=tuple(data["actions"]))


def initial_alpha_set(model: PomdpModel) -> AlphaVectorSet:
    """The unit vectors: exactly the mode reward rho."""
    return AlphaVectorSet(unit_alphas(model.n_states), (NO_ACTION,) * model.n_states)


def expand_beliefs(
    model: PomdpModel,
    b0: Belief | np.ndarray,
    depth: int,
    max_points: int = 500,
    tol: float = 1e-6,
) -> np.ndarray:
    """
    Reachable beliefs from b0 up to `depth` snapshots, breadth first.

    A successor is kept only when its L1 distance to every kept belief
    exceeds `tol`. Stops at `max_points`. Rows of the result are beliefs,
    b0 first.
    """
    points: List[np.ndarray] = [_vec(b0).copy()]
    frontier = [points[0]]
    for level in range(depth):
        nxt = []
        for b in frontier:
            for a in range(model.n_actions):
                for _, _, post in successors(model, b, a):
                    if len(points) >= max_points:
                        logger.debug("Belief set capped at %d points (level %d)", max_points, level + 1)
                        return np.vstack(points)
                    if cdist(post[None, :], np.vstack(points), "cityblock").min() > tol:
                        points.append(post)
                        nxt.append(post)
        frontier = nxt
        if not frontier:
            break
    return np.vstack(points)


def _backup(
    model: PomdpModel,
    alphas: np.ndarray,
    beliefs: np.ndarray,
    objective: str,
) -> List[Tuple[np.ndarray, int]]:
    """Point-based backup: one (vector, action) per belief row."""
    out = []
    O = model.observation_probs
    gamma = model.discount
    per_step = objective == "per_step"
    rows = np.arange(model.n_actions)
    for b in beliefs:
        pred = model.predict_all(b)
        g = np.zeros((model.n_actions, model.n_states))
        for o in range(model.n_observations):
            w = pred * O[:, :, o]
            j_star = np.argmax(w @ alphas.T, axis=1)
            term = alphas[j_star]
            if per_step:
                onehot = np.zeros_like(g)
                onehot[rows, np.argmax(w, axis=1)] = 1.0
                term = onehot + gamma * term
            g += O[:, :, o] * term
        if not model.identity_transitions:
            g = np.vstack([model.back_project(a, g[a]) for a in range(model.n_actions)])
        a_best = select_action(model, g @ b)
        out.append((g[a_best], a_best))
    return out


def _prune(vectors: np.ndarray, actions: Sequence[int], beliefs: np.ndarray) -> AlphaVectorSet:
    """Keep the vectors that are maximal at some belief; earlier vectors win ties."""
    keep = sorted(set(np.argmax(beliefs @ vectors.T, axis=1).tolist()))
    return AlphaVectorSet(vectors[keep], tuple(actions[i] for i in keep))


def pbvi_solve(
    model: PomdpModel,
    beliefs: np.ndarray,
    iterations: int,
    objective: str = "per_step",
    workers: int = 1,
    initial: Optional[AlphaVectorSet] = None,
) -> AlphaVectorSet:
    """
    Point-based value iteration under the mode reward.

    Starts from the unit alpha set and performs `iterations` backups at
    every belief row. New vectors are merged with the previous set and
    pruned to those that are maximal somewhere on the belief set, so the
    value at each sampled belief never decreases and stays a lower bound
    of the exact value for the same horizon.
    """
    _check_objective(objective)
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    if beliefs.shape[0] == 0 or beliefs.shape[1] != model.n_states:
        raise ModelError(f"belief set must be a nonempty (n, {model.n_states}) array, got {beliefs.shape}")
    gamma_set = initial or initial_alpha_set(model)
    logger.info(
        "PBVI: %d beliefs, %d iterations, objective=%s, workers=%d",
        beliefs.shape[0], iterations, objective, workers,
    )
    for it in range(1, iterations + 1):
        if workers == 1:
            backed = _backup(model, gamma_set.vectors, beliefs, objective)
        else:
            chunks = np.array_split(beliefs, min(workers * 4, beliefs.shape[0]))
            parts = Parallel(n_jobs=workers)(
                delayed(_backup)(model, gamma_set.vectors, chunk, objective) for chunk in chunks
            )
            backed = [item for part in parts for item in part]
        vectors = np.vstack([v for v, _ in backed] + [gamma_set.vectors])
        actions = [a for _, a in backed] + list(gamma_set.actions)
        gamma_set = _prune(vectors, actions, beliefs)
        values = (beliefs @ gamma_set.vectors.T).max(axis=1)
        logger.info("PBVI iteration %d: |alpha|=%d V(b0)=%.6f mean V=%.6f", it, len(gamma_set), values[0], values.mean())
    return gamma_set


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


class Policy(ABC):
    """Maps the current belief to the next action index."""

    name = "policy"

    @abstractmethod
    def next_action(self, b: Belief | np.ndarray) -> int: ...

    def reset(self) -> None:
        """Forget per-episode state; stateless policies do nothing."""


def greedy_myopic(model: PomdpModel, b: Belief | np.ndarray, threshold: float = 0.99) -> int:
    """
    One-step lookahead on the expected posterior mode.

    Zoom-1 rule: when some Zoom-1 snapshot would report O1 with probability
    at least `threshold`, or when no snapshot raises the expected mode above
    rho(b), the Zoom-1 snapshot with the highest O1 probability is taken
    (lower center on ties). Otherwise the expected-mode argmax with the
    usual tie-break.
    """
    vec = _vec(b)
    values = expected_mode_values(model, vec)
    z1 = [a for a, v in enumerate(model.action_views) if v.zoom == 1]
    if z1:
        pred = model.predict_all(vec)[z1]
        p1 = (pred * model.observation_probs[z1, :, Observation.O1]).sum(axis=1)
        best_p = p1.max()
        if best_p >= threshold or values.max() <= belief_reward(vec) + TIE_TOL:
            candidates = [a for a, p in zip(z1, p1) if p >= best_p - TIE_TOL]
            return min(candidates, key=lambda a: (model.action_views[a].center, a))
    return select_action(model, values)


class GreedyPolicy(Policy):
    name = "greedy"

    def __init__(self, model: PomdpModel, threshold: float = 0.99):
        self.model = model
        self.threshold = threshold

    def next_action(self, b: Belief | np.ndarray) -> int:
        return greedy_myopic(self.model, b, self.threshold)


class RandomPolicy(Policy):
    """Uniform over all actions; reproducible given the generator's seed."""

    name = "random"

    def __init__(self, model: PomdpModel, rng: np.random.Generator):
        self.n_actions = model.n_actions
        self.rng = rng

    def next_action(self, b: Belief | np.ndarray) -> int:
        return int(self.rng.integers(self.n_actions))


class SweepPolicy(Policy):
    """Zoom-1 snapshots of every center in ascending order, wrapping around."""

    name = "sweep"

    def __init__(self, model: PomdpModel):
        order = sorted(
            (a for a, v in enumerate(model.action_views) if v.zoom == 1),
            key=lambda a: model.action_views[a].center,
        )
        if not order:
            raise ModelError("sweep needs Zoom-1 actions")
        self.order: Tuple[int, ...] = tuple(order)
        self._pos = 0

    def next_action(self, b: Belief | np.ndarray) -> int:
        a = self.order[self._pos % len(self.order)]
        self._pos += 1
        return a

    def reset(self) -> None:
        self._pos = 0


BASELINES = ("random", "sweep")


def baseline_policy(kind: str, model: PomdpModel, rng: Optional[np.random.Generator] = None) -> Policy:
    """Comparison baselines: `random` needs a seeded generator, `sweep` needs Zoom-1 actions."""
    if kind == "random":
        if rng is None:
            raise ValueError("random baseline needs a seeded generator")
        return RandomPolicy(model, rng)
    if kind == "sweep":
        return SweepPolicy(model)
    raise ValueError(f"unknown baseline '{kind}', expected one of {list(BASELINES)}")


class PbviPolicy(Policy):
    """
    Acts on a solved alpha set. Beliefs where only the unit vectors are
    maximal fall back to the greedy rule.
    """

    name = "pbvi"

    def __init__(self, model: PomdpModel, alphas: AlphaVectorSet, threshold: float = 0.99):
        if alphas.n_states != model.n_states:
            raise ModelError(f"alpha set has {alphas.n_states} states, model has {model.n_states}")
        self.model = model
        self.alphas = alphas
        self.threshold = threshold

    def next_action(self, b: Belief | np.ndarray) -> int:
        vals = self.alphas.values(b)
        best = vals.max()
        acts = {self.alphas.actions[j] for j in np.flatnonzero(vals >= best - TIE_TOL)} - {NO_ACTION}
        if not acts:
            return greedy_myopic(self.model, b, self.threshold)
        return min(acts, key=lambda a: _tie_key(self.model, a))


class ExpectimaxPolicy(Policy):
    name = "expectimax"

    def __init__(self, model: PomdpModel, depth: int = 2, objective: str = "per_step", node_budget: int = 1_000_000):
        if depth < 1:
            raise ValueError("expectimax policy needs depth >= 1")
        self.model = model
        self.depth = depth
        self.objective = objective
        self.node_budget = node_budget

    def next_action(self, b: Belief | np.ndarray) -> int:
        _, a = exact_expectimax(self.model, b, self.depth, self.objective, self.node_budget)
        return int(a)


# ---------------------------------------------------------------------------
# termination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Termination:
    """Truthy when the episode should stop; `reason` says which rule fired."""

    done: bool
    reason: Optional[str] = None  # "confirmed" | "confident" | "budget"

    def __bool__(self) -> bool:
        return self.done


CONTINUE = Termination(False)


def is_terminal(
    last_view: Optional[CameraView],
    last_obs: Optional[Observation],
    b: Belief,
    threshold: float = 0.99,
    steps: int = 0,
    max_steps: Optional[int] = None,
) -> Termination:
    """
    Stop after a Zoom-1 snapshot that saw the object, when the mode reaches
    `threshold`, or when the step budget is spent, in that order of precedence.
    """
    if last_view is not None and last_view.zoom == 1 and last_obs == Observation.O1:
        return Termination(True, "confirmed")
    if mode(b)[1] >= threshold:
        return Termination(True, "confident")
    if max_steps is not None and steps >= max_steps:
        return Termination(True, "budget")
    return CONTINUE
