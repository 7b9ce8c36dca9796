import logging
from pathlib import Path
from typing import Callable, Optional

import pandas as pd

from .cassandra import write_cassandra
from .config import RunConfig
from .errors import ScoutError
from .planner import expand_beliefs, pbvi_solve
from .pomdp import PomdpModel, build_model
from .records import save_alphas, write_episode_log, write_metrics
from .render import render_step
from .sim import EpisodeResult, compare_policies, run_episode
from .world import reduced_centers

logger = logging.getLogger("scout")

Echo = Callable[[str], None]

SUBCOMMANDS = ("export", "solve", "simulate", "bench")


def _out(cfg: RunConfig, default: str) -> Path:
    return cfg.output.path or Path(default)


def build_run_model(cfg: RunConfig) -> PomdpModel:
    """The POMDP selected by `variant`, over the reduced observation centers."""
    return build_model(
        cfg.variant,
        cfg.world,
        reduced_centers(cfg.world, cfg.spec),
        cfg.zoom_levels,
        cfg.observation,
        discount=cfg.discount,
        allow_absent=cfg.allow_absent,
        absent_mass=cfg.absent_mass,
        start_view=cfg.start_view,
        surrogate=cfg.surrogate,
    )


def run_export(cfg: RunConfig, echo: Echo) -> Path:
    """Write the configured model (variant A or B) as a `.pomdp` file."""
    model = build_run_model(cfg)
    path = write_cassandra(model, _out(cfg, "scout.pomdp"))
    echo(f"wrote {path}: {model.n_states} states, {model.n_actions} actions")
    return path


def run_solve(cfg: RunConfig, echo: Echo) -> Path:
    """PBVI on the configured model, started from its initial belief."""
    model = build_run_model(cfg)
    p = cfg.planner
    beliefs = expand_beliefs(model, model.initial, p.belief_depth, p.max_beliefs)
    alphas = pbvi_solve(model, beliefs, p.iterations, p.objective, p.workers)
    path = save_alphas(_out(cfg, "alphas.json"), alphas, model)
    echo(f"wrote {path}: {len(alphas)} alpha vectors, V(b0)={alphas.value(model.initial):.6f}")
    return path


def run_simulate(cfg: RunConfig, echo: Echo, render: bool = False) -> EpisodeResult:
    """
    One episode. With `render`, a heatmap frame is echoed after every
    snapshot; the last line is always `success=<bool> steps=<n>`.
    """
    on_step = (lambda rec, b: echo(render_step(cfg.world, rec, b))) if render else None
    result = run_episode(cfg.episode_config(), on_step=on_step)
    log_path = cfg.output.episode_log or cfg.output.path
    if log_path is not None:
        write_episode_log(log_path, result)
    logger.info(
        "Episode finished: %s after %d steps, declared=%s, truth=%s",
        result.reason, result.steps_taken, result.declared, result.truth.to_dict(),
    )
    echo(f"success={'true' if result.success else 'false'} steps={result.steps_taken}")
    return result


def run_bench(cfg: RunConfig, echo: Echo) -> pd.DataFrame:
    """
    Compare the configured policies on shared sub-seeds.

    Args:
        cfg: Run configuration; `cfg.bench` sets the policies, episode count and workers.
        echo: Receives the metrics table.

    Returns:
        pd.DataFrame: One row per policy, also written as CSV or JSON.
    """
    b = cfg.bench
    frame = compare_policies(cfg.episode_config(), b.policies, b.episodes, b.workers, b.backend)
    fmt = cfg.output.format
    write_metrics(_out(cfg, f"metrics.{fmt}"), frame, fmt)
    echo(frame.to_string(index=False))
    return frame


def dispatch(subcommand: str, cfg: RunConfig, echo: Optional[Echo] = None, render: bool = False) -> int:
    """
    Run one subcommand.

    Returns:
        int: 0 on success, 1 when the subcommand failed, 2 for an unknown
        subcommand.
    """
    echo = echo or print
    handlers = {
        "export": lambda: run_export(cfg, echo),
        "solve": lambda: run_solve(cfg, echo),
        "simulate": lambda: run_simulate(cfg, echo, render),
        "bench": lambda: run_bench(cfg, echo),
    }
    if subcommand not in handlers:
        logger.error("Unknown subcommand '%s' (expected one of %s)", subcommand, ", ".join(SUBCOMMANDS))
        return 2
    logger.info("Running %s (seed=%d)", subcommand, cfg.seed)
    try:
        handlers[subcommand]()
    except ScoutError as e:
        logger.error("%s failed: %s", subcommand, e)
        return 1
    return 0
