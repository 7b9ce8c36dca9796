from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, GridBoundsError, InvalidViewError, NoHypothesisError

logger = logging.getLogger("scout")

# Upper limits of bands d1..d4 in block-side units; anything farther is d5.
DEFAULT_BAND_LIMITS: Tuple[float, ...] = (
    math.sqrt(2.0),
    2.0,
    2.0 * math.sqrt(2.0),
    math.sqrt(10.0),
)

# Squared distances are compared against squared limits with this slack.
_BAND_EPS = 1e-9

Offset = Tuple[int, int]
Footprint = Tuple[Offset, ...]


class DistanceBand(IntEnum):
    """Discretized distance between block centers, ordered near to far."""

    D0 = 0
    D1 = 1
    D2 = 2
    D3 = 3
    D4 = 4
    D5 = 5

    @property
    def label(self) -> str:
        return f"d{int(self)}"


@dataclass(frozen=True)
class GridWorld:
    """
    Rectangular lattice of blocks.

    Blocks are numbered 1..N in row-major order; rows and columns are 1-based.
    `block_side` is metadata only: all geometry is in block-side units.
    """

    rows: int
    cols: int
    block_side: float = 1.0

    def __post_init__(self) -> None:
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ConfigError(f"world must have at least one block (rows={self.rows}, cols={self.cols})")
        if not self.block_side > 0:
            raise ConfigError(f"block_side must be positive, got {self.block_side}")

    @property
    def n_blocks(self) -> int:
        return self.rows * self.cols

    def blocks(self) -> range:
        return range(1, self.n_blocks + 1)

    def contains(self, block: int) -> bool:
        return 1 <= block <= self.n_blocks

    def contains_cell(self, row: int, col: int) -> bool:
        return 1 <= row <= self.rows and 1 <= col <= self.cols

    def block_id(self, row: int, col: int) -> int:
        if not self.contains_cell(row, col):
            raise GridBoundsError(f"cell ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return (row - 1) * self.cols + col

    def coords(self, block: int) -> Tuple[int, int]:
        if not self.contains(block):
            raise GridBoundsError(f"block {block} outside 1..{self.n_blocks}")
        r, c = divmod(block - 1, self.cols)
        return r + 1, c + 1


@dataclass(frozen=True)
class CameraView:
    """An observation point: the block under the camera and a zoom level."""

    center: int
    zoom: int

    @property
    def half_width(self) -> int:
        return self.zoom - 1

    @property
    def label(self) -> str:
        return f"C{self.center}_Z{self.zoom}"


def _edge_connected(cells: Sequence[Offset]) -> bool:
    todo = set(cells)
    start = next(iter(todo))
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for nb in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if nb in todo and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return seen == todo


@dataclass(frozen=True)
class ObjectSpec:
    """
    Shape of the searched object.

    Each orientation is a footprint of 1-3 edge-connected cell offsets
    relative to the pose anchor.
    """

    orientations: Tuple[Footprint, ...]
    aspect_ratio: float
    name: str = "custom"

    def __post_init__(self) -> None:
        orientations = tuple(tuple((int(dr), int(dc)) for dr, dc in fp) for fp in self.orientations)
        object.__setattr__(self, "orientations", orientations)
        if not orientations:
            raise ConfigError(f"object '{self.name}' needs at least one orientation")
        for idx, fp in enumerate(orientations):
            if not fp or len(fp) > 3:
                raise ConfigError(f"object '{self.name}' orientation {idx} must have 1-3 cells, got {len(fp)}")
            if len(set(fp)) != len(fp):
                raise ConfigError(f"object '{self.name}' orientation {idx} repeats a cell")
            if not _edge_connected(fp):
                raise ConfigError(f"object '{self.name}' orientation {idx} is not edge-connected")
        if not self.aspect_ratio > 0:
            raise ConfigError(f"object '{self.name}' aspect_ratio must be positive")


@dataclass(frozen=True)
class ObjectPose:
    """Ground-truth placement of the object, or `ABSENT` when it is not there."""

    anchor: Optional[int] = None
    orientation: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.anchor is None) != (self.orientation is None):
            raise ValueError("a pose needs both anchor and orientation, or neither")

    @property
    def is_absent(self) -> bool:
        return self.anchor is None

    @classmethod
    def placed(cls, anchor: int, orientation: int = 0) -> "ObjectPose":
        return cls(anchor=int(anchor), orientation=int(orientation))

    def to_dict(self) -> Dict[str, Optional[int]]:
        return {"anchor": self.anchor, "orientation": self.orientation}


ABSENT = ObjectPose()

OBJECT_PRESETS: Dict[str, ObjectSpec] = {
    "cell": ObjectSpec(orientations=(((0, 0),),), aspect_ratio=1.0, name="cell"),
    "domino": ObjectSpec(
        orientations=(((0, 0), (0, 1)), ((0, 0), (1, 0))),
        aspect_ratio=2.0,
        name="domino",
    ),
    "bar3": ObjectSpec(
        orientations=(((0, 0), (0, 1), (0, 2)), ((0, 0), (1, 0), (2, 0))),
        aspect_ratio=3.0,
        name="bar3",
    ),
}

SINGLE_CELL = OBJECT_PRESETS["cell"]


def _check_view(world: GridWorld, view: CameraView) -> None:
    if not world.contains(view.center):
        raise InvalidViewError(f"view center {view.center} outside 1..{world.n_blocks}")
    if view.zoom < 1:
        raise InvalidViewError(f"zoom must be >= 1, got {view.zoom}")


def view_footprint(world: GridWorld, view: CameraView) -> FrozenSet[int]:
    """
    Blocks visible from a view: the (2w+1)x(2w+1) window around the center,
    clipped to the grid.
    """
    _check_view(world, view)
    r0, c0 = world.coords(view.center)
    w = view.half_width
    return frozenset(
        world.block_id(r, c)
        for r in range(max(1, r0 - w), min(world.rows, r0 + w) + 1)
        for c in range(max(1, c0 - w), min(world.cols, c0 + w) + 1)
    )


def sq_offset(world: GridWorld, i: int, j: int) -> int:
    """Squared center offset of blocks i and j, in block units."""
    ri, ci = world.coords(i)
    rj, cj = world.coords(j)
    return (ri - rj) ** 2 + (ci - cj) ** 2


def dist(world: GridWorld, i: int, j: int) -> float:
    """Euclidean distance between the centers of blocks i and j."""
    return math.sqrt(sq_offset(world, i, j))


def distance_band(
    world: GridWorld,
    i: int,
    j: int,
    limits: Sequence[float] = DEFAULT_BAND_LIMITS,
) -> DistanceBand:
    """Band of dist(i, j); intervals are half-open and upper-inclusive."""
    sq = sq_offset(world, i, j)
    if sq == 0:
        return DistanceBand.D0
    for band, limit in zip((DistanceBand.D1, DistanceBand.D2, DistanceBand.D3, DistanceBand.D4), limits):
        if sq <= limit * limit + _BAND_EPS:
            return band
    return DistanceBand.D5


@lru_cache(maxsize=64)
def band_matrix(world: GridWorld, limits: Tuple[float, ...] = DEFAULT_BAND_LIMITS) -> np.ndarray:
    """
    All pairwise bands as an (N, N) array indexed by block id - 1.

    Agrees entry by entry with `distance_band`. The result is read-only.
    """
    idx = np.arange(world.n_blocks)
    r, c = np.divmod(idx, world.cols)
    sq = (r[:, None] - r[None, :]) ** 2 + (c[:, None] - c[None, :]) ** 2
    edges = np.asarray(limits, dtype=float) ** 2 + _BAND_EPS
    bands = 1 + np.searchsorted(edges, sq, side="left")
    bands[sq == 0] = 0
    bands = bands.astype(np.int8)
    bands.setflags(write=False)
    return bands


def num_at_band(
    world: GridWorld,
    centers: Iterable[int],
    i: int,
    band: DistanceBand,
    limits: Sequence[float] = DEFAULT_BAND_LIMITS,
) -> int:
    """Number of other centers j with distance_band(i, j) == band."""
    return sum(1 for j in centers if j != i and distance_band(world, i, j, limits) == band)


def reduced_centers(world: GridWorld, spec: ObjectSpec) -> Tuple[int, ...]:
    """
    Observation centers the camera may move to.

    Objects with aspect ratio >= 2 always cover one cell of each checkerboard
    color, so only the color of block 1 is kept. Ascending block order.
    """
    if spec.aspect_ratio >= 2:
        return tuple(b for b in world.blocks() if sum(world.coords(b)) % 2 == 0)
    return tuple(world.blocks())


def interior_centers(world: GridWorld, centers: Iterable[int], margin: int = 3) -> Tuple[int, ...]:
    """Centers at least `margin` cells away from every border."""
    out = []
    for b in centers:
        r, c = world.coords(b)
        if margin < r <= world.rows - margin and margin < c <= world.cols - margin:
            out.append(b)
    return tuple(out)


def occupied_blocks(world: GridWorld, spec: ObjectSpec, pose: ObjectPose) -> FrozenSet[int]:
    """Blocks covered by a pose; empty for ABSENT."""
    if pose.is_absent:
        return frozenset()
    if not 0 <= pose.orientation < len(spec.orientations):
        raise GridBoundsError(f"orientation {pose.orientation} not defined for object '{spec.name}'")
    r0, c0 = world.coords(pose.anchor)
    cells = []
    for dr, dc in spec.orientations[pose.orientation]:
        if not world.contains_cell(r0 + dr, c0 + dc):
            raise GridBoundsError(f"pose {pose.to_dict()} leaves the grid")
        cells.append(world.block_id(r0 + dr, c0 + dc))
    return frozenset(cells)


def enumerate_poses(world: GridWorld, spec: ObjectSpec, allow_absent: bool = False) -> List[ObjectPose]:
    """
    Every in-bounds placement, anchor ascending then orientation ascending,
    with ABSENT appended last when allowed.
    """
    poses: List[ObjectPose] = []
    for anchor in world.blocks():
        r0, c0 = world.coords(anchor)
        for o, fp in enumerate(spec.orientations):
            if all(world.contains_cell(r0 + dr, c0 + dc) for dr, dc in fp):
                poses.append(ObjectPose.placed(anchor, o))
    if allow_absent:
        poses.append(ABSENT)
    if not poses:
        raise NoHypothesisError(
            f"object '{spec.name}' fits nowhere in a {world.rows}x{world.cols} grid and absence is not allowed"
        )
    logger.debug("Enumerated %d poses for '%s' on %dx%d", len(poses), spec.name, world.rows, world.cols)
    return poses
