from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Hashable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy as _entropy

from .errors import BeliefError, ImpossibleObservationError, NoHypothesisError
from .observation import Observation, ObservationModel, detection_vector
from .world import CameraView, GridWorld

logger = logging.getLogger("scout")

NORMALIZATION_TOL = 1e-9

# Block hypotheses are block ids; None stands for "object absent".
Hypothesis = Optional[int]


@dataclass(frozen=True, eq=False)
class Belief:
    """
    Probability distribution over object hypotheses.

    Immutable: `probs` is a read-only copy and every update returns a new
    Belief over the same hypotheses in the same order.
    """

    hypotheses: Tuple[Hashable, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        hyps = tuple(self.hypotheses)
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(hyps):
            raise BeliefError(f"{len(hyps)} hypotheses but {probs.shape} probabilities")
        if not hyps:
            raise NoHypothesisError("belief over an empty hypothesis set")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise BeliefError("belief has negative or non-finite entries")
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise BeliefError(f"belief sums to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "hypotheses", hyps)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.hypotheses)

    def probability(self, h: Hashable) -> float:
        return float(self.probs[self.hypotheses.index(h)])

    def as_dict(self) -> Dict[Hashable, float]:
        return {h: float(p) for h, p in zip(self.hypotheses, self.probs)}

    def with_probs(self, probs: np.ndarray) -> "Belief":
        return Belief(self.hypotheses, probs)


def block_hypotheses(n_blocks: int, allow_absent: bool = False) -> Tuple[Hypothesis, ...]:
    """B_1..B_N, then B_absent when allowed."""
    hyps: Tuple[Hypothesis, ...] = tuple(range(1, n_blocks + 1))
    return hyps + (None,) if allow_absent else hyps


def uniform_prior(hypotheses: Sequence[Hashable], absent_mass: float = 0.0) -> Belief:
    """
    Absent hypothesis gets `absent_mass`; the rest is split evenly over the
    remaining hypotheses.
    """
    hyps = tuple(hypotheses)
    if not hyps:
        raise NoHypothesisError("uniform prior over an empty hypothesis list")
    if not 0.0 <= absent_mass < 1.0:
        raise BeliefError(f"absent_mass must be in [0, 1), got {absent_mass}")
    has_absent = None in hyps
    if absent_mass > 0 and not has_absent:
        raise BeliefError("absent_mass > 0 needs the absent hypothesis")
    n_present = len(hyps) - (1 if has_absent else 0)
    probs = np.zeros(len(hyps))
    if n_present == 0:
        probs[:] = 1.0
    else:
        share = (1.0 - absent_mass) / n_present
        for idx, h in enumerate(hyps):
            probs[idx] = absent_mass if h is None else share
    return Belief(hyps, probs)


def bayes_update(
    b: Belief,
    view: CameraView,
    o: Observation,
    model: ObservationModel,
    world: GridWorld,
) -> Belief:
    """
    Posterior after observing `o` from `view`.

    The object does not move, so this is a pure correction step.
    """
    p1 = detection_vector(model, view, world, b.hypotheses)
    lik = p1 if o == Observation.O1 else 1.0 - p1
    joint = lik * b.probs
    z = joint.sum()
    if not z > 0:
        raise ImpossibleObservationError(
            f"observation {o.name} from {view.label} has zero probability under the current belief"
        )
    return Belief(b.hypotheses, joint / z)


def _rank(h: Hashable, idx: int) -> Tuple[int, float]:
    if h is None:
        return (1, 0)
    if isinstance(h, (int, np.integer)):
        return (0, int(h))
    return (0, idx)


def mode(b: Belief) -> Tuple[Hashable, float]:
    """Most probable hypothesis; ties go to the lowest block id, absent last."""
    best = b.probs.max()
    candidates = np.flatnonzero(b.probs == best)
    idx = min(candidates, key=lambda i: _rank(b.hypotheses[i], i))
    return b.hypotheses[idx], float(best)


def entropy(b: Belief) -> float:
    """Shannon entropy in nats."""
    return float(_entropy(b.probs))
