"""
Command-line entry point for lattice phi^4 quench campaigns.

    python main.py sweep   --profile desk
    python main.py ground  --mu0sq 0.5 --chi 8
    python main.py quench  --profile desk --workers 4 --resume
    python main.py analyze --profile desk
    python main.py oracle
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
from rich.console import Console
from rich.table import Table

from config import get_environment_info, settings
from config.schema import config_hash, load_campaign_config
from enhanced_modules.resilience_module import setup_logging
from harness.persistence import read_json
from harness.quench_harness import (
    EXIT_FATAL,
    CampaignPaths,
    cmd_analyze,
    cmd_ground,
    cmd_oracle,
    cmd_quench,
    cmd_sweep,
)
from solvers.errors import ConfigurationError, PhiFourError

console = Console(stderr=True)
logger = logging.getLogger("main")

STATUS_STYLES = {"complete": "green", "idle": "green", "partial": "yellow", "failed": "red"}


def _load(ctx: click.Context) -> Any:
    opts = ctx.obj
    top_level: Dict[str, Any] = {
        "output_dir": opts["output_dir"],
        "workers": opts["workers"],
        "resume": opts["resume"] or None,
    }
    return load_campaign_config(opts["config"], opts["profile"], top_level)


def _summary(command: str, config, code: int):
    """Print the campaign manifest written by the command"""
    path = CampaignPaths(config.output_dir).manifest(command)
    if not path.exists():
        return
    manifest = read_json(path)
    status = manifest.get("status", "unknown")
    table = Table(title=f"{command} ({config_hash(config)[:12]})")
    table.add_column("field")
    table.add_column("value")
    table.add_row("status", f"[{STATUS_STYLES.get(status, 'white')}]{status}[/]")
    table.add_row("runs", str(manifest.get("runs_total", 0)))
    for state, count in sorted(manifest.get("counts", {}).items()):
        table.add_row(f"  {state}", str(count))
    table.add_row("peak RSS (MB)", f"{manifest.get('peak_rss_mb', 0.0):.1f}")
    for problem in manifest.get("problems", [])[:10]:
        table.add_row("problem", problem)
    table.add_row("exit code", str(code))
    console.print(table)


def _run(ctx: click.Context, command: str, func) -> None:
    try:
        config = _load(ctx)
        code = func(config)
    except ConfigurationError as e:
        console.print(f"[red]Configuration error:[/] {e}")
        sys.exit(EXIT_FATAL)
    except PhiFourError as e:
        logger.error(f"{command} aborted: {e}")
        console.print(f"[red]{type(e).__name__}:[/] {e}")
        sys.exit(EXIT_FATAL)
    _summary(command, config, code)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="YAML campaign file merged over the profile.")
@click.option("--profile", default=None, help="Named profile: desk, full or smoke.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel runs.")
@click.option("--resume", is_flag=True, help="Skip complete runs and continue from checkpoints.")
@click.option("--log-level", default=None, help="Overrides KZ_LOG_LEVEL.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[Path], profile: Optional[str],
        output_dir: Optional[Path], workers: Optional[int], resume: bool, log_level: Optional[str]):
    """Lattice phi^4 Kibble-Zurek quench campaigns."""
    level = log_level or settings.get("LOG_LEVEL")
    setup_logging(level=level, log_file=settings.get("LOG_FILE"),
                  error_file=settings.get("LOG_FILE") and f"{settings.get('LOG_FILE')}.errors",
                  json_file=settings.get("JSON_LOG"))
    logger.debug(f"Environment: {get_environment_info()}")
    ctx.obj = {
        "config": config_path,
        "profile": profile or settings.get("PROFILE"),
        "output_dir": str(output_dir) if output_dir else None,
        "workers": workers,
        "resume": resume,
    }


@cli.command()
@click.pass_context
def sweep(ctx: click.Context):
    """Equilibrium scan over mu0sq at every bond dimension."""
    _run(ctx, "sweep", cmd_sweep)


@cli.command()
@click.option("--mu0sq", type=float, default=None, help="Defaults to the initial mass of the quench.")
@click.option("--chi", type=click.IntRange(min=1), default=None, help="Defaults to every campaign chi.")
@click.option("--bias", type=float, default=None, help="Seed bias; 0 gives the symmetric state.")
@click.pass_context
def ground(ctx: click.Context, mu0sq: Optional[float], chi: Optional[int], bias: Optional[float]):
    """Compute or load a cached ground state."""
    _run(ctx, "ground", lambda config: cmd_ground(config, mu0sq, chi, bias))


@cli.command()
@click.pass_context
def quench(ctx: click.Context):
    """Run every (tauQ, chi, mu0sq_final) quench of the campaign."""
    _run(ctx, "quench", cmd_quench)


@cli.command()
@click.option("--force", is_flag=True, help="Analyze runs produced with other parameters.")
@click.pass_context
def analyze(ctx: click.Context, force: bool):
    """Averages, freeze-out points, fits and collapse from completed runs."""
    _run(ctx, "analyze", lambda config: cmd_analyze(config, force=force))


@cli.command()
@click.pass_context
def oracle(ctx: click.Context):
    """Free-field and exact-diagonalization reference tables."""
    _run(ctx, "oracle", cmd_oracle)


if __name__ == "__main__":
    cli()
