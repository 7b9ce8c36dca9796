from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jsonschema import Draft7Validator

from .errors import ConfigError, InvalidViewError
from .world import (
    DEFAULT_BAND_LIMITS,
    SINGLE_CELL,
    CameraView,
    DistanceBand,
    GridWorld,
    ObjectPose,
    ObjectSpec,
    band_matrix,
    occupied_blocks,
    sq_offset,
)

logger = logging.getLogger("scout")

N_BANDS = len(DistanceBand)


class Observation(IntEnum):
    """O1: the view contains part of the object. O2: it does not."""

    O1 = 0
    O2 = 1


@dataclass(frozen=True)
class ObservationModel:
    """
    Detection table P(O1 | zoom, band) plus the false-positive rate when the
    object is absent.

    `p1[k - 1][band]` is the O1 probability at zoom k. Values are not checked
    here beyond shape; `validate_model` reports range and ordering problems.
    """

    p1: Tuple[Tuple[float, ...], ...]
    p1_absent: float = 0.0
    band_limits: Tuple[float, ...] = DEFAULT_BAND_LIMITS
    name: str = "custom"

    def __post_init__(self) -> None:
        p1 = tuple(tuple(float(x) for x in row) for row in self.p1)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "band_limits", tuple(float(x) for x in self.band_limits))
        object.__setattr__(self, "p1_absent", float(self.p1_absent))
        if not p1:
            raise ConfigError("observation model needs at least one zoom row")
        for k, row in enumerate(p1, start=1):
            if len(row) != N_BANDS:
                raise ConfigError(f"observation row Z{k} needs {N_BANDS} entries (d0..d5), got {len(row)}")
        limits = self.band_limits
        if len(limits) != 4 or any(x <= 0 for x in limits) or any(b <= a for a, b in zip(limits, limits[1:])):
            raise ConfigError(f"band_limits must be 4 increasing positive distances, got {list(limits)}")

    @property
    def zoom_levels(self) -> int:
        return len(self.p1)

    @cached_property
    def table(self) -> np.ndarray:
        arr = np.asarray(self.p1, dtype=float)
        arr.setflags(write=False)
        return arr

    def p_detect(self, zoom: int, band: DistanceBand) -> float:
        if not 1 <= zoom <= self.zoom_levels:
            raise InvalidViewError(f"zoom {zoom} not in 1..{self.zoom_levels} for model '{self.name}'")
        return self.p1[zoom - 1][int(band)]


# Detection inside the window is the same at every height; the camera only
# trades resolution for coverage.
_NOISY_DEFAULT_ROWS: Tuple[Tuple[float, ...], ...] = (
    (0.90, 0.05, 0.02, 0.02, 0.02, 0.02),
    (0.90, 0.90, 0.05, 0.02, 0.02, 0.02),
    (0.90, 0.90, 0.90, 0.90, 0.05, 0.02),
)
_NOISY_DEFAULT_ABSENT = 0.02

# Highest band inside the (2k-1)x(2k-1) window for k = 1, 2, 3.
_WINDOW_BANDS = (DistanceBand.D0, DistanceBand.D1, DistanceBand.D3)


def _check_preset_zoom(name: str, zoom_levels: int) -> None:
    if not 1 <= zoom_levels <= len(_WINDOW_BANDS):
        raise ConfigError(
            f"preset '{name}' supports 1..{len(_WINDOW_BANDS)} zoom levels, got {zoom_levels}; "
            "use an observation model file for wider windows"
        )


def perfect(zoom_levels: int = 3) -> ObservationModel:
    """Ideal sensor: O1 iff some occupied block is inside the footprint."""
    _check_preset_zoom("perfect", zoom_levels)
    rows = tuple(
        tuple(1.0 if b <= _WINDOW_BANDS[k] else 0.0 for b in DistanceBand)
        for k in range(zoom_levels)
    )
    return ObservationModel(p1=rows, p1_absent=0.0, name="perfect")


def noisy_default(zoom_levels: int = 3) -> ObservationModel:
    """
    Bundled noisy sensor: 0.9 inside the window, 0.05 just outside it,
    0.02 beyond, and a 0.02 false-positive rate when the object is absent.

    Args:
        zoom_levels: Number of zoom rows to keep (1-3).

    Returns:
        ObservationModel: The truncated table.
    """
    _check_preset_zoom("noisy-default", zoom_levels)
    return ObservationModel(
        p1=_NOISY_DEFAULT_ROWS[:zoom_levels],
        p1_absent=_NOISY_DEFAULT_ABSENT,
        name="noisy-default",
    )


PRESETS = {
    "perfect": perfect,
    "noisy-default": noisy_default,
}


def get_preset(name: str, zoom_levels: int = 3) -> ObservationModel:
    """
    Build a named preset.

    Args:
        name: "perfect" or "noisy-default".
        zoom_levels: Zoom levels the model must cover.

    Returns:
        ObservationModel: The preset table.

    Raises:
        ConfigError: For an unknown name or an unsupported number of zoom levels.
    """
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown observation preset '{name}', expected one of {sorted(PRESETS)}")
    return factory(zoom_levels)


def detection_vector(
    model: ObservationModel,
    view: CameraView,
    world: GridWorld,
    blocks: Sequence[Optional[int]],
) -> np.ndarray:
    """P(O1) for each block hypothesis (None = object absent) under one view."""
    if not world.contains(view.center):
        raise InvalidViewError(f"view center {view.center} outside 1..{world.n_blocks}")
    row = model.table[view.zoom - 1] if 1 <= view.zoom <= model.zoom_levels else None
    if row is None:
        raise InvalidViewError(f"zoom {view.zoom} not in 1..{model.zoom_levels} for model '{model.name}'")
    bands = band_matrix(world, model.band_limits)[view.center - 1]
    ids, absent = _hypothesis_index(tuple(blocks))
    out = row[bands[ids]]
    out[absent] = model.p1_absent
    return out


@lru_cache(maxsize=256)
def _hypothesis_index(blocks: Tuple[Optional[int], ...]) -> Tuple[np.ndarray, np.ndarray]:
    absent = np.array([b is None for b in blocks], dtype=bool)
    ids = np.array([0 if b is None else b - 1 for b in blocks], dtype=np.intp)
    return ids, absent


def nearest_block(world: GridWorld, cells, center: int) -> int:
    """Occupied block closest to the view center; lowest id on ties."""
    return min(cells, key=lambda b: (sq_offset(world, b, center), b))


def likelihood(
    model: ObservationModel,
    o: Observation,
    pose: ObjectPose,
    view: CameraView,
    world: GridWorld,
    spec: ObjectSpec = SINGLE_CELL,
) -> float:
    """
    P(o | pose, view).

    A placed object is seen through its occupied block nearest to the view
    center; an absent one through the false-positive rate.
    """
    if not world.contains(view.center):
        raise InvalidViewError(f"view center {view.center} outside 1..{world.n_blocks}")
    if pose.is_absent:
        p = model.p1_absent
    else:
        nearest = nearest_block(world, occupied_blocks(world, spec, pose), view.center)
        band = DistanceBand(int(band_matrix(world, model.band_limits)[view.center - 1, nearest - 1]))
        p = model.p_detect(view.zoom, band)
    return p if o == Observation.O1 else 1.0 - p


def sample_observation(
    model: ObservationModel,
    rng: np.random.Generator,
    pose: ObjectPose,
    view: CameraView,
    world: GridWorld,
    spec: ObjectSpec = SINGLE_CELL,
) -> Observation:
    """Draw one observation; consumes exactly one uniform from `rng`."""
    p = likelihood(model, Observation.O1, pose, view, world, spec)
    return Observation.O1 if rng.random() < p else Observation.O2


@dataclass(frozen=True)
class Violation:
    kind: str  # "range" | "monotonicity" | "absent-floor"
    zoom: Optional[int]
    band: Optional[DistanceBand]
    message: str


def validate_model(model: ObservationModel) -> List[Violation]:
    """
    Check ranges, band monotonicity and the absent floor.

    Returns every violation; an empty list means the model is valid.
    """
    out: List[Violation] = []
    for k, row in enumerate(model.p1, start=1):
        for b, p in zip(DistanceBand, row):
            if not 0.0 <= p <= 1.0:
                out.append(Violation("range", k, b, f"p1(Z{k}, {b.label}) = {p} outside [0, 1]"))
        for b, (near, far) in enumerate(zip(row, row[1:]), start=1):
            if far > near:
                band = DistanceBand(b)
                out.append(
                    Violation(
                        "monotonicity",
                        k,
                        band,
                        f"p1(Z{k}, {band.label}) = {far} exceeds p1(Z{k}, d{b - 1}) = {near}",
                    )
                )
    if not 0.0 <= model.p1_absent <= 1.0:
        out.append(Violation("range", None, None, f"p1_absent = {model.p1_absent} outside [0, 1]"))
    floor = min(min(row) for row in model.p1)
    if model.p1_absent > floor:
        out.append(
            Violation("absent-floor", None, None, f"p1_absent = {model.p1_absent} exceeds the table minimum {floor}")
        )
    return out


OBSERVATION_FILE_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["p1"],
    "properties": {
        "name": {"type": "string"},
        "zoom_levels": {"type": "integer", "minimum": 1},
        "band_limits": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 4,
            "maxItems": 4,
        },
        "p1": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "number"}, "minItems": N_BANDS, "maxItems": N_BANDS},
        },
        "p1_absent": {"type": "number"},
    },
}


def observation_model_from_dict(data: Dict[str, Any], source: str = "<dict>") -> ObservationModel:
    """
    Validate and build an observation model from its JSON document.

    Args:
        data: Parsed document with "p1" and optionally "name", "zoom_levels",
            "band_limits" and "p1_absent".
        source: Label used in error messages, usually the file path.

    Returns:
        ObservationModel: The checked model.

    Raises:
        ConfigError: With every schema and table violation, prefixed by `source`.
    """
    errors = sorted(Draft7Validator(OBSERVATION_FILE_SCHEMA).iter_errors(data), key=lambda e: [str(p) for p in e.path])
    if errors:
        raise ConfigError([f"{source}: {'.'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors])
    if "zoom_levels" in data and data["zoom_levels"] != len(data["p1"]):
        raise ConfigError(f"{source}: zoom_levels = {data['zoom_levels']} but p1 has {len(data['p1'])} rows")
    model = ObservationModel(
        p1=data["p1"],
        p1_absent=data.get("p1_absent", 0.0),
        band_limits=tuple(data.get("band_limits", DEFAULT_BAND_LIMITS)),
        name=data.get("name", Path(source).stem),
    )
    violations = validate_model(model)
    if violations:
        raise ConfigError([f"{source}: {v.message}" for v in violations])
    return model


def observation_model_to_dict(model: ObservationModel) -> Dict[str, Any]:
    """Inverse of `observation_model_from_dict`."""
    return {
        "name": model.name,
        "zoom_levels": model.zoom_levels,
        "band_limits": list(model.band_limits),
        "p1": [list(row) for row in model.p1],
        "p1_absent": model.p1_absent,
    }


def load_observation_model(path: Path | str) -> ObservationModel:
    """Load and validate an observation-model JSON file."""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"observation model {p} could not be read: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: line {e.lineno} column {e.colno}: {e.msg}")
    model = observation_model_from_dict(data, source=str(p))
    logger.debug("Loaded observation model '%s' (K=%d) from %s", model.name, model.zoom_levels, p)
    return model
