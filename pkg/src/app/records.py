import json
import logging
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from .errors import ModelError
from .planner import AlphaVectorSet
from .pomdp import PomdpModel
from .sim import EpisodeResult

logger = logging.getLogger("scout")

EPISODE_SCHEMA = "scout.episode/1"
METRICS_SCHEMA = "scout.metrics/1"
ALPHAS_SCHEMA = "scout.alphas/1"


def _prepare(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def episode_lines(result: EpisodeResult) -> List[str]:
    """
    JSON Lines for one episode: a `step` record per snapshot, then a
    `summary` record.
    """
    lines = [
        json.dumps({"schema": EPISODE_SCHEMA, "type": "step", **rec.to_dict()}, separators=(",", ":"))
        for rec in result.records
    ]
    lines.append(json.dumps({"schema": EPISODE_SCHEMA, "type": "summary", **result.summary()}, separators=(",", ":")))
    return lines


def write_episode_log(path: Path, result: EpisodeResult) -> Path:
    """
    Write an episode log.

    Args:
        path (Path): Target `.jsonl` file; parent directories are created.
        result (EpisodeResult): Finished episode.

    Returns:
        Path: The written file.
    """
    path = _prepare(path)
    path.write_text("\n".join(episode_lines(result)) + "\n", encoding="utf-8")
    logger.debug("Saved episode log: %s (%d steps)", path, result.steps_taken)
    return path


def write_metrics(path: Path, frame: pd.DataFrame, fmt: str = "json") -> Path:
    """Batch metrics, one row per policy, as CSV or a single JSON document."""
    path = _prepare(path)
    if fmt == "csv":
        frame.to_csv(path, index=False)
    elif fmt == "json":
        doc = {"schema": METRICS_SCHEMA, "rows": json.loads(frame.to_json(orient="records"))}
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown metrics format '{fmt}'")
    logger.info("Saved metrics (%s): %s", fmt, path)
    return path


def alphas_document(alphas: AlphaVectorSet, model: PomdpModel) -> Dict[str, Any]:
    return {
        "schema": ALPHAS_SCHEMA,
        "states": list(model.states),
        "action_names": list(model.actions),
        **alphas.to_dict(),
    }


def save_alphas(path: Path, alphas: AlphaVectorSet, model: PomdpModel) -> Path:
    """
    Write an alpha set as a `scout.alphas/1` JSON document.

    Args:
        path: Target file; parent directories are created.
        alphas: Solved vectors and their actions.
        model: Supplies the state and action names stored alongside.

    Returns:
        Path: The written file.
    """
    path = _prepare(path)
    path.write_text(json.dumps(alphas_document(alphas, model), indent=2) + "\n", encoding="utf-8")
    logger.info("Saved %d alpha vectors: %s", len(alphas), path)
    return path


def load_alphas(path: Path) -> AlphaVectorSet:
    """
    Read an alpha set written by `save_alphas`.

    Raises:
        ModelError: If the file is missing, unreadable or has another schema.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelError(f"alpha set {path} could not be read: {e}")
    if data.get("schema") != ALPHAS_SCHEMA:
        raise ModelError(f"{path}: expected schema {ALPHAS_SCHEMA}, got {data.get('schema')!r}")
    return AlphaVectorSet.from_dict(data)
