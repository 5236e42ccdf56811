"""
CLI entrypoint.

Usage:
    sidforge ingest --input data/nyc.csv
    sidforge quantize --grids 4x6,4x6,8x8,8x8 --epochs 50
    sidforge all

Every stage reads the shared YAML config (the packaged default unless
--config is given); stage flags override individual values. The master seed
may also come from SIDFORGE_SEED.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click

from .model.config import load_config
from .pipeline import PipelineRunner
from .stages import STAGE_HANDLERS

_RECORD_FIELDS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}
INPUT_PATH = click.Path(path_type=Path, exists=True)


class JsonFormatter(logging.Formatter):
    """One JSON object per log record, including any `extra=` fields."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        payload.update({k: v for k, v in vars(record).items() if k not in _RECORD_FIELDS})
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def setup_logging(json_logs: bool = False, verbose: bool = False) -> None:
    handler = logging.StreamHandler()
    if json_logs:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(name)s - %(message)s"))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, handlers=[handler], force=True)


@dataclass
class CliState:
    config_path: Optional[Path] = None
    overrides: Dict[str, Any] = field(default_factory=dict)
    force: bool = False
    progress: bool = False


def parse_grids(text: str) -> List[Tuple[int, int]]:
    """'4x6,4x6,8x8' -> [(4, 6), (4, 6), (8, 8)]."""
    try:
        grids = []
        for part in text.split(","):
            height, width = part.lower().strip().split("x")
            grids.append((int(height), int(width)))
        return grids
    except ValueError:
        raise click.BadParameter(f"expected grids like 4x6,8x8, got '{text}'")


def _run(ctx: click.Context, stage: str, overrides: Optional[Dict[str, Any]] = None,
         stop_after: Optional[str] = None, clear: Tuple[str, ...] = (),
         inputs: Optional[Dict[str, Optional[Path]]] = None, out_dir: Optional[Path] = None) -> None:
    state: CliState = ctx.obj
    # unset stage flags must not mask the global options
    given = {key: value for key, value in (overrides or {}).items() if value is not None}
    try:
        config = load_config(state.config_path).with_overrides({**state.overrides, **given}, clear=clear)
        runner = PipelineRunner(config, force=state.force, progress=state.progress)
        if stage == "all":
            results = runner.run_all(stop_after=stop_after)
        else:
            paths = {name: path for name, path in (inputs or {}).items() if path is not None}
            results = {stage: runner.run_stage(stage, inputs=paths, out_dir=out_dir)}
        for name, outputs in results.items():
            click.echo(f"✓ {name}: {len(outputs)} artifact(s)")
            for label, path in outputs.items():
                click.echo(f"  - {path} ({label})")
    except Exception as e:
        logging.getLogger(__name__).debug("stage %s failed", stage, exc_info=True)
        click.echo(f"✗ Error in stage '{stage}': {e}", err=True)
        raise click.Abort()


@click.group()
@click.option('--config', '-c', 'config_path', type=click.Path(path_type=Path, exists=True, dir_okay=False),
              help='YAML config file (default: packaged config/default.yaml)')
@click.option('--work-dir', '-w', type=click.Path(path_type=Path), help='Directory holding stage artifacts')
@click.option('--seed', type=int, envvar='SIDFORGE_SEED', help='Master seed (env: SIDFORGE_SEED)')
@click.option('--force', is_flag=True, help='Accept upstream artifacts produced under another config')
@click.option('--json', 'json_logs', is_flag=True, help='Machine-readable JSON log lines')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging')
@click.option('--progress', is_flag=True, help='Show progress bars for training loops')
@click.pass_context
def cli(ctx, config_path, work_dir, seed, force, json_logs, verbose, progress):
    """sidforge - topology-aware semantic IDs and reward design for next-POI recommendation."""
    setup_logging(json_logs, verbose)
    ctx.obj = CliState(
        config_path=config_path,
        overrides={"seed": seed, "work_dir": work_dir},
        force=force,
        progress=progress,
    )


@cli.command()
@click.option('--input', 'input_path', type=click.Path(path_type=Path), help='Check-in CSV/TSV file')
@click.option('--delta-hours', type=float, help='Trajectory window in hours (default: 24)')
@click.option('--out', type=click.Path(path_type=Path), help='Work directory (same as --work-dir)')
@click.option('--seed-synth', type=int, help='Generate the synthetic corpus with this seed')
@click.pass_context
def ingest(ctx, input_path, delta_hours, out, seed_synth):
    """Load check-ins (or generate them), filter, build trajectories and split."""
    if input_path is not None and seed_synth is not None:
        raise click.UsageError("--input and --seed-synth are mutually exclusive")
    _run(ctx, "ingest", {
        "ingest.input": input_path,
        "ingest.delta_hours": delta_hours,
        "work_dir": out,
        "ingest.synth.seed": seed_synth,
    })


@cli.command()
@click.option('--plus-code-len', type=click.Choice(['2', '4', '6', '8', '10']), help='Plus Code length')
@click.option('--utc-offset', type=int, help='Minutes added to UTC before taking the hour of day')
@click.option('--split', type=INPUT_PATH, help='Ingest output directory (or its train.jsonl)')
@click.option('--out', type=click.Path(path_type=Path), help='Output directory (default: <work_dir>/featurize)')
@click.pass_context
def featurize(ctx, plus_code_len, utc_offset, split, out):
    """Build the one-hot semantic feature vector of every training POI."""
    _run(ctx, "featurize", {
        "features.plus_code_length": int(plus_code_len) if plus_code_len else None,
        "features.utc_offset_minutes": utc_offset,
    }, inputs={"ingest": split}, out_dir=out)


@cli.command()
@click.option('--dim', type=int, help='Latent width')
@click.option('--tau', type=float, help='InfoNCE temperature')
@click.option('--epochs', type=int, help='Training epochs')
@click.option('--encoder', 'encoder_mode', type=click.Choice(['on', 'off']), help='off uses raw features')
@click.option('--features', type=INPUT_PATH, help='features.jsonl (vocabulary.json is read next to it)')
@click.option('--seed', type=int, help='Encoder seed instead of the one derived from the master seed')
@click.pass_context
def encode(ctx, dim, tau, epochs, encoder_mode, features, seed):
    """Train the contrastive encoder and embed every POI."""
    _run(ctx, "encode", {
        "encoder.dim": dim,
        "encoder.tau": tau,
        "encoder.epochs": epochs,
        "encoder.enabled": None if encoder_mode is None else encoder_mode == "on",
        "encoder.seed": seed,
    }, inputs={"featurize": features})


@cli.command()
@click.option('--grids', help='Layer grids, e.g. 4x6,4x6,8x8,8x8')
@click.option('--epochs', type=int, help='Epochs per layer')
@click.option('--embeddings', type=INPUT_PATH, help='embeddings.jsonl from the encode stage')
@click.option('--seed', type=int, help='SOM seed instead of the one derived from the master seed')
@click.pass_context
def quantize(ctx, grids, epochs, embeddings, seed):
    """Train the residual SOM layers and assign semantic IDs."""
    _run(ctx, "quantize", {
        "hsom.grids": parse_grids(grids) if grids else None,
        "hsom.epochs": epochs,
        "hsom.seed": seed,
    }, inputs={"encode": embeddings})


@cli.command()
@click.option('--space', help="ID space, e.g. 'grid:4x6' or 'linear:24'")
@click.option('--samples', type=int, help='Monte Carlo null samples (>= 100)')
@click.option('--layer', help="SID layer to evaluate, or 'all' for concatenated codes")
@click.option('--sids', type=INPUT_PATH, help='sids.jsonl (hsom.jsonl is read next to it)')
@click.option('--categories', type=INPUT_PATH, help='features.jsonl holding each POI category')
@click.option('--seed', type=int, help='Null-model seed instead of the one derived from the master seed')
@click.pass_context
def continuity(ctx, space, samples, layer, sids, categories, seed):
    """Compute NICC/NICS of the SID space and its baselines."""
    overrides: Dict[str, Any] = {
        "continuity.space": space,
        "continuity.samples": samples,
        "continuity.seed": seed,
    }
    inputs = {"quantize": sids, "featurize": categories}
    if layer == "all":
        _run(ctx, "continuity", overrides, clear=("continuity.layer",), inputs=inputs)
        return
    if layer is not None:
        try:
            overrides["continuity.layer"] = int(layer)
        except ValueError:
            raise click.BadParameter(f"expected a layer number or 'all', got '{layer}'")
    _run(ctx, "continuity", overrides, inputs=inputs)


@cli.command()
@click.option('--k', type=int, help='Number of POIs the answer must list')
@click.option('--max-history', type=int, help='Cap on rendered history check-ins')
@click.option('--split', type=INPUT_PATH, help='Ingest output directory (or its train.jsonl)')
@click.option('--sids', type=INPUT_PATH, help='sids.jsonl from the quantize stage')
@click.option('--out', type=click.Path(path_type=Path), help='Output directory (default: <work_dir>/prompts)')
@click.pass_context
def prompts(ctx, k, max_history, split, sids, out):
    """Render QA prompts for every trajectory."""
    _run(ctx, "prompts", {"prompts.k": k, "prompts.max_history": max_history},
         inputs={"ingest": split, "quantize": sids}, out_dir=out)


@cli.command()
@click.option('--weights', help='default|unit|no_format|no_rr|no_soft|no_distinct|no_len|w1,w2,w3,w4,w5')
@click.option('--k', type=int, help='Required list length')
@click.option('--target-len', type=int, help='Target output length in tokens')
@click.option('--completions', type=click.Path(path_type=Path),
              help='JSON-lines {completion, ground_truth_sid}; default scores the popularity baseline')
@click.pass_context
def score(ctx, weights, k, target_len, completions):
    """Score completions with the list rewards."""
    _run(ctx, "score", {
        "rewards.weights": weights,
        "rewards.k": k,
        "rewards.target_length": target_len,
        "rewards.completions": completions,
    })


@cli.command()
@click.option('--env', help='synth:<items>x<contexts>')
@click.option('--steps', type=int, help='Update steps')
@click.option('--group', type=int, help='Rollouts per context per step')
@click.option('--weights', help='Reward weights preset or w1,w2,w3,w4,w5')
@click.option('--ablation', 'ablations', multiple=True, help='Extra weight presets run on the same seed')
@click.option('--with-replacement', is_flag=True, default=None, help='Allow duplicate items in sampled lists')
@click.option('--seed', type=int, help='Environment and rollout seed instead of the one derived from the master seed')
@click.pass_context
def simulate(ctx, env, steps, group, weights, ablations, with_replacement, seed):
    """Train the toy policy with group-relative advantages."""
    _run(ctx, "simulate", {
        "simulate.env": env,
        "simulate.steps": steps,
        "simulate.group": group,
        "simulate.weights": weights,
        "simulate.ablations": list(ablations) or None,
        "simulate.with_replacement": with_replacement,
        "simulate.seed": seed,
    })


@cli.command()
@click.pass_context
def evaluate(ctx):
    """Report Acc@k/MRR overall, per user activity group and for the toy runs."""
    _run(ctx, "evaluate")


@cli.command(name="all")
@click.option('--stop-after', type=click.Choice(list(STAGE_HANDLERS)), help='Last stage to run')
@click.pass_context
def run_all(ctx, stop_after):
    """Run every stage in order."""
    _run(ctx, "all", stop_after=stop_after)


def main():
    """Entry point for the CLI."""
    cli()


if __name__ == '__main__':
    main()
