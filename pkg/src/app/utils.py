from __future__ import annotations

import math
from typing import Iterable

import numpy as np


def fmt_number(x: float) -> str:
    """
    Canonical text form for model files: integral values print as ints,
    everything else as the shortest repr that round-trips.
    """
    v = float(x)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {v!r}")
    if v.is_integer():
        return str(int(v))
    return repr(v)


def fmt_numbers(xs: Iterable[float]) -> str:
    return " ".join(fmt_number(x) for x in xs)


def derive_seed(seed: int, index: int) -> int:
    """
    Stable per-episode seed: the first 63 bits of SeedSequence([seed, index]).

    Depends only on (seed, index), so batches give the same episodes in any
    order and on any number of workers.
    """
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
