from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from jsonschema import Draft7Validator

from .errors import ConfigError, GridBoundsError, ScoutError
from .observation import PRESETS, ObservationModel, get_preset, load_observation_model
from .pomdp import ModelVariant, SurrogateReward
from .sim import POLICY_NAMES, EpisodeConfig, PolicyConfig
from .world import ABSENT, OBJECT_PRESETS, CameraView, GridWorld, ObjectPose, ObjectSpec, occupied_blocks

# Default configuration values; config.json is merged on top.
DEFAULTS: Dict[str, Any] = {
    "log": {
        "level": "INFO",
        "to_file": False,
        "file_path": "scout.log",
        "file_max_bytes": 1_000_000,
        "file_backup_count": 3,
    },
    "world": {"rows": 8, "cols": 8, "block_side": 1.0},
    "object": {
        "preset": "domino",    # cell | domino | bar3
        "allow_absent": False,
        "absent_mass": 0.0,
    },
    "observation": {
        "preset": "perfect",   # ignored when path is set
        "path": None,
    },
    "zoom_levels": 3,
    "variant": "A",            # model used by export and solve
    "variant_b": {
        "start_center": None,  # None: first observation center
        "start_zoom": 1,
    },
    "planner": {
        "name": "greedy",
        "depth": 2,            # expectimax
        "iterations": 3,       # PBVI backups
        "belief_depth": 2,     # PBVI belief expansion
        "max_beliefs": 500,
        "node_budget": 1_000_000,
        "objective": "per_step",
        "workers": 1,
    },
    "discount": 0.95,
    "threshold": 0.99,
    "seed": 0,
    "max_steps": 100,
    "truth": {                 # anchor None: drawn from the seed
        "anchor": None,
        "orientation": 0,
        "absent": False,
    },
    "bench": {
        "episodes": 1000,
        "policies": ["greedy", "sweep", "random"],
        "workers": 1,
        "backend": "loky",
    },
    "export": {
        "snapshot_cost": 0.01,
        "hit_reward": 1.0,
    },
    "output": {
        "path": None,
        "format": "json",
        "episode_log": None,
    },
}


def _section(properties: Dict[str, Any], required=()) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": properties, "required": list(required)}


_POS_INT = {"type": "integer", "minimum": 1}
_NULLABLE_PATH = {"type": ["string", "null"]}

CONFIG_SCHEMA: Dict[str, Any] = _section(
    {
        "log": _section(
            {
                "level": {"type": "string", "enum": ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]},
                "to_file": {"type": "boolean"},
                "file_path": {"type": "string"},
                "file_max_bytes": _POS_INT,
                "file_backup_count": {"type": "integer", "minimum": 0},
            }
        ),
        "world": _section(
            {"rows": _POS_INT, "cols": _POS_INT, "block_side": {"type": "number", "exclusiveMinimum": 0}},
            required=("rows", "cols"),
        ),
        "object": _section(
            {
                "preset": {"type": "string", "enum": sorted(OBJECT_PRESETS)},
                "allow_absent": {"type": "boolean"},
                "absent_mass": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            }
        ),
        "observation": _section(
            {"preset": {"type": "string", "enum": sorted(PRESETS)}, "path": _NULLABLE_PATH}
        ),
        "zoom_levels": _POS_INT,
        "variant": {"type": "string", "enum": [v.value for v in ModelVariant]},
        "variant_b": _section({"start_center": {"type": ["integer", "null"], "minimum": 1}, "start_zoom": _POS_INT}),
        "planner": _section(
            {
                "name": {"type": "string", "enum": list(POLICY_NAMES)},
                "depth": _POS_INT,
                "iterations": {"type": "integer", "minimum": 0},
                "belief_depth": {"type": "integer", "minimum": 0},
                "max_beliefs": _POS_INT,
                "node_budget": _POS_INT,
                "objective": {"type": "string", "enum": ["per_step", "terminal"]},
                "workers": {"type": "integer", "minimum": -1, "not": {"const": 0}},
            }
        ),
        "discount": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "max_steps": {"type": "integer", "minimum": 0},
        "truth": _section(
            {
                "anchor": {"type": ["integer", "null"], "minimum": 1},
                "orientation": {"type": "integer", "minimum": 0},
                "absent": {"type": "boolean"},
            }
        ),
        "bench": _section(
            {
                "episodes": _POS_INT,
                "policies": {
                    "type": "array",
                    "minItems": 1,
                    "uniqueItems": True,
                    "items": {"type": "string", "enum": list(POLICY_NAMES)},
                },
                "workers": {"type": "integer", "minimum": -1, "not": {"const": 0}},
                "backend": {"type": "string", "enum": ["loky", "threading", "multiprocessing"]},
            }
        ),
        "export": _section(
            {"snapshot_cost": {"type": "number", "minimum": 0}, "hit_reward": {"type": "number"}}
        ),
        "output": _section(
            {
                "path": _NULLABLE_PATH,
                "format": {"type": "string", "enum": ["csv", "json"]},
                "episode_log": _NULLABLE_PATH,
            }
        ),
    },
    required=("world",),
)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    Recursively merge two dictionaries; values in `override` win.
    """
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def validate_document(doc: Any) -> None:
    """Raise one ConfigError listing every schema violation, by dotted field path."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: configuration must be a JSON object")
    errors = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(doc), key=lambda e: [str(p) for p in e.path])
    if errors:
        raise ConfigError([f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors])


@dataclass(frozen=True)
class BenchConfig:
    episodes: int = 1000
    policies: tuple = ("greedy", "sweep", "random")
    workers: int = 1
    backend: str = "loky"


@dataclass(frozen=True)
class OutputConfig:
    path: Optional[Path] = None
    format: str = "json"
    episode_log: Optional[Path] = None


@dataclass(frozen=True)
class RunConfig:
    """Validated, typed view of one configuration document."""

    log: Dict[str, Any]
    world: GridWorld
    spec: ObjectSpec
    allow_absent: bool
    absent_mass: float
    observation: ObservationModel
    zoom_levels: int
    variant: ModelVariant
    start_view: Optional[CameraView]
    planner: PolicyConfig
    discount: float
    threshold: float
    seed: int
    max_steps: int
    truth: Optional[ObjectPose]
    bench: BenchConfig
    surrogate: SurrogateReward
    output: OutputConfig

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(
            world=self.world,
            spec=self.spec,
            observation=self.observation,
            policy=self.planner,
            zoom_levels=self.zoom_levels,
            truth=self.truth,
            allow_absent=self.allow_absent,
            absent_mass=self.absent_mass,
            seed=self.seed,
            max_steps=self.max_steps,
            threshold=self.threshold,
            discount=self.discount,
        )


def _truth(cfg: Dict[str, Any], world: GridWorld, spec: ObjectSpec, allow_absent: bool) -> Optional[ObjectPose]:
    t = cfg["truth"]
    if t["absent"]:
        if not allow_absent:
            raise ConfigError("truth.absent: needs object.allow_absent = true")
        return ABSENT
    if t["anchor"] is None:
        return None
    pose = ObjectPose.placed(t["anchor"], t["orientation"])
    try:
        occupied_blocks(world, spec, pose)
    except GridBoundsError as e:
        raise ConfigError(f"truth: {e}")
    return pose


def _observation(cfg: Dict[str, Any], base_dir: Path) -> ObservationModel:
    path = cfg["observation"]["path"]
    if path:
        p = Path(path)
        return load_observation_model(p if p.is_absolute() else base_dir / p)
    return get_preset(cfg["observation"]["preset"], cfg["zoom_levels"])


def build_run_config(cfg: Dict[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    """Turn a merged configuration dict into a RunConfig; domain errors become ConfigError."""
    try:
        world = GridWorld(cfg["world"]["rows"], cfg["world"]["cols"], float(cfg["world"].get("block_side", 1.0)))
        spec = OBJECT_PRESETS[cfg["object"]["preset"]]
        allow_absent = bool(cfg["object"]["allow_absent"])
        absent_mass = float(cfg["object"]["absent_mass"])
        if absent_mass > 0 and not allow_absent:
            raise ConfigError("object.absent_mass: needs object.allow_absent = true")
        observation = _observation(cfg, base_dir)
        if cfg["zoom_levels"] > observation.zoom_levels:
            raise ConfigError(
                f"zoom_levels: {cfg['zoom_levels']} requested but the observation model defines {observation.zoom_levels}"
            )
        vb = cfg["variant_b"]
        start_view = None
        if vb["start_center"] is not None:
            if not world.contains(vb["start_center"]):
                raise ConfigError(f"variant_b.start_center: {vb['start_center']} outside 1..{world.n_blocks}")
            start_view = CameraView(vb["start_center"], vb["start_zoom"])
        out = cfg["output"]
        return RunConfig(
            log=copy.deepcopy(cfg["log"]),
            world=world,
            spec=spec,
            allow_absent=allow_absent,
            absent_mass=absent_mass,
            observation=observation,
            zoom_levels=int(cfg["zoom_levels"]),
            variant=ModelVariant(cfg["variant"]),
            start_view=start_view,
            planner=PolicyConfig(**cfg["planner"]),
            discount=float(cfg["discount"]),
            threshold=float(cfg["threshold"]),
            seed=int(cfg["seed"]),
            max_steps=int(cfg["max_steps"]),
            truth=_truth(cfg, world, spec, allow_absent),
            bench=BenchConfig(
                episodes=int(cfg["bench"]["episodes"]),
                policies=tuple(cfg["bench"]["policies"]),
                workers=int(cfg["bench"]["workers"]),
                backend=cfg["bench"]["backend"],
            ),
            surrogate=SurrogateReward(
                hit_reward=float(cfg["export"]["hit_reward"]),
                snapshot_cost=float(cfg["export"]["snapshot_cost"]),
            ),
            output=OutputConfig(
                path=Path(out["path"]) if out["path"] else None,
                format=out["format"],
                episode_log=Path(out["episode_log"]) if out["episode_log"] else None,
            ),
        )
    except ConfigError:
        raise
    except ScoutError as e:
        raise ConfigError(str(e))


def _env_overrides() -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if os.getenv("SCOUT_LOG_LEVEL"):
        out["log"] = {"level": os.getenv("SCOUT_LOG_LEVEL").upper()}
    if os.getenv("SCOUT_SEED"):
        raw = os.getenv("SCOUT_SEED")
        try:
            out["seed"] = int(raw)
        except ValueError:
            raise ConfigError(f"SCOUT_SEED: '{raw}' is not an integer")
    return out


def parse_config(
    document: str,
    base_dir: Path | str = ".",
    overrides: Optional[Dict[str, Any]] = None,
    use_env: bool = False,
) -> RunConfig:
    """
    Parse and validate a configuration document.

    Priority (later wins):
    1. DEFAULTS
    2. The document
    3. Environment (SCOUT_LOG_LEVEL, SCOUT_SEED) when `use_env` is set
    4. `overrides` (command-line flags)

    Raises:
        ConfigError: With every violation, addressed by field path, or by
            line and column for JSON syntax errors.
    """
    try:
        user = json.loads(document)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} column {e.colno}: {e.msg}")
    validate_document(user)

    cfg = deep_merge(copy.deepcopy(DEFAULTS), user)
    if use_env:
        cfg = deep_merge(cfg, _env_overrides())
    if overrides:
        cfg = deep_merge(cfg, overrides)
    validate_document(cfg)
    return build_run_config(cfg, Path(base_dir))


def load_config(path: str | Path = "config.json", overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load the run configuration file, with `.env` and flag overrides.

    Relative paths inside the file resolve against the file's directory.
    """
    load_dotenv()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{p} could not be read: {e}")
    try:
        return parse_config(text, base_dir=p.parent, overrides=overrides, use_env=True)
    except ConfigError as e:
        raise ConfigError([f"{p}: {v}" for v in e.violations])
