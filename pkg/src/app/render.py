from __future__ import annotations

from typing import List

import numpy as np
from scipy.stats import rankdata

from .belief import Belief, mode
from .sim import StepRecord
from .world import GridWorld

RAMP = " .:-=+*#%@"


def quantile_levels(probs: np.ndarray) -> np.ndarray:
    """
    Quantile of each probability among the positive ones, in (0, 1].

    Equal probabilities share the highest rank of their group; zero mass stays 0.
    """
    probs = np.asarray(probs, dtype=float)
    levels = np.zeros(len(probs))
    positive = probs > 0.0
    n = int(positive.sum())
    if n:
        levels[positive] = rankdata(probs[positive], method="max") / n
    return levels


def shade(q: float) -> str:
    """Ramp character for a quantile level; only zero mass is blank."""
    if q <= 0.0:
        return RAMP[0]
    idx = int(np.ceil(q * (len(RAMP) - 1) - 1e-9))
    return RAMP[min(max(idx, 1), len(RAMP) - 1)]


def render_belief(world: GridWorld, b: Belief) -> str:
    """
    ASCII heatmap of a block belief, one character per block, rows top to
    bottom. Blocks are shaded by the quantile of their probability, so the
    frame depends only on the ordering of the belief. Absent mass, if any,
    goes on a footer line.
    """
    blocks = [i for i, h in enumerate(b.hypotheses) if h is not None]
    levels = dict(zip(blocks, quantile_levels(b.probs[blocks])))
    grid = np.full((world.rows, world.cols), RAMP[0])
    absent = None
    for i, (h, p) in enumerate(zip(b.hypotheses, b.probs)):
        if h is None:
            absent = float(p)
            continue
        r, c = world.coords(h)
        grid[r - 1, c - 1] = shade(float(levels[i]))
    lines: List[str] = ["+" + "-" * world.cols + "+"]
    lines += ["|" + "".join(row) + "|" for row in grid]
    lines.append("+" + "-" * world.cols + "+")
    if absent is not None:
        lines.append(f"absent: {absent:.4f}")
    return "\n".join(lines)


def render_step(world: GridWorld, rec: StepRecord, b: Belief) -> str:
    m, p = mode(b)
    label = "absent" if m is None else f"B{m}"
    head = f"step {rec.step}: {rec.action} -> {rec.observation}  mode={label} ({p:.4f})  H={rec.entropy:.4f}"
    return head + "\n" + render_belief(world, b)
