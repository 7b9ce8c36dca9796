import logging
from pathlib import Path
from typing import Any, Dict, Optional

import click

from .config import load_config
from .core import dispatch
from .errors import ConfigError
from .logging_setup import setup_logging

logger = logging.getLogger("scout")


def _common_options(fn):
    """--config, --seed and --out, shared by every subcommand."""
    fn = click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
                      help="Output file; each subcommand has its own default name.")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the configured seed.")(fn)
    return click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False, path_type=Path),
        default=Path("config.json"),
        show_default=True,
        help="Run configuration document (JSON).",
    )(fn)


def _run(subcommand: str, config_path: Path, seed: Optional[int], out: Optional[Path], **extra: Any) -> None:
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    output: Dict[str, Any] = {}
    if out is not None:
        output["path"] = str(out)
    if extra.get("fmt"):
        output["format"] = extra["fmt"]
    if output:
        overrides["output"] = output
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as e:
        setup_logging({"level": "INFO"})
        for v in e.violations:
            logger.error("%s: %s", subcommand, v)
        click.get_current_context().exit(1)
    setup_logging(cfg.log)
    code = dispatch(subcommand, cfg, echo=click.echo, render=extra.get("render", False))
    click.get_current_context().exit(code)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def scout() -> None:
    """Belief-space planning for object search with a zooming camera."""


@scout.command()
@_common_options
def export(config_path: Path, seed: Optional[int], out: Optional[Path]) -> None:
    """Write the configured model as a .pomdp file."""
    _run("export", config_path, seed, out)


@scout.command()
@_common_options
def solve(config_path: Path, seed: Optional[int], out: Optional[Path]) -> None:
    """Run point-based value iteration and write the alpha set."""
    _run("solve", config_path, seed, out)


@scout.command()
@_common_options
@click.option("--render", is_flag=True, default=False, help="Print an ASCII belief heatmap after every snapshot.")
def simulate(config_path: Path, seed: Optional[int], out: Optional[Path], render: bool) -> None:
    """Run one episode; --out writes its JSON Lines log."""
    _run("simulate", config_path, seed, out, render=render)


@scout.command()
@_common_options
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["csv", "json"]),
    default=None,
    help="Metrics file format (default: output.format from the config).",
)
def bench(config_path: Path, seed: Optional[int], out: Optional[Path], fmt: Optional[str]) -> None:
    """Compare policies over shared-seed episode batches and write metrics."""
    _run("bench", config_path, seed, out, fmt=fmt)
