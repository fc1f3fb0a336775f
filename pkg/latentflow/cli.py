"""
latentflow command-line interface.

Subcommands: train, generate, invert, edit, eval, ablate, oracle-check.
Every run writes manifest.json (resolved config, seed, input hashes,
metrics, NFE totals, wall-clock) plus metrics.csv under --out-dir.
"""

import argparse
import json
import logging
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import BaseModel, Field

from latentflow import __version__
from latentflow.commands import (
    CommandResult,
    guided,
    load_field,
    run_ablate,
    run_edit,
    run_eval,
    run_generate,
    run_invert,
    run_oracle_check,
    run_train,
)
from latentflow.config import RunConfig, config_hash, config_to_dict, load_config
from latentflow.dependencies import RunDependencies
from latentflow.error_codes import ErrorCode, LatentFlowError, get_error_message
from latentflow.kinds import CondMode, EditMethod, PredSpace, SolverMethod, SweepKind
from latentflow.settings import settings
from latentflow.storage import RunStorage

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    """Provenance record of one CLI run."""

    command: str = Field(..., description="Subcommand")
    argv: List[str] = Field(default_factory=list, description="Arguments as given")
    version: str = Field(default=__version__)
    config: Dict[str, Any] = Field(..., description="Fully resolved configuration")
    config_hash: str = Field(..., description="sha256 of the canonical config JSON")
    seed: int = Field(..., ge=0)
    input_hashes: Dict[str, str] = Field(default_factory=dict, description="Git blob ids of the inputs")
    input_hash: str = Field(..., description="Combined hash of all inputs")
    metrics: Dict[str, Any] = Field(default_factory=dict)
    nfe: Dict[str, int] = Field(default_factory=dict)
    nfe_total: int = Field(default=0, ge=0)
    wall_clock_seconds: float = Field(..., ge=0)
    started_at: str = Field(..., description="ISO timestamp")
    outputs: List[str] = Field(default_factory=list, description="Files written to the run directory")


# Flag destination -> config key
FLAG_KEYS: Dict[str, str] = {
    "seed": "seed",
    "t_edit": "inversion.t_edit",
    "s": "inversion.S",
    "k": "inversion.K",
    "w": "inversion.w",
    "lambda_kl": "inversion.lambda_kl",
    "cond": "inversion.cond_mode",
    "pred_space": "inversion.pred_space",
    "solver": "solver.method",
    "steps": "solver.num_steps",
    "guidance": "guidance.scale",
    "train_steps": "train.steps",
    "target": "edit.target_label",
    "source": "edit.source_label",
    "method": "edit.method",
    "blend_label": "edit.blend_label",
    "blend_alpha": "edit.blend_alpha",
}


def _weights(raw: str) -> List[float]:
    try:
        return [float(part) for part in raw.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{raw}'")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Config file (key = value lines or JSON)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override, repeatable")
    parser.add_argument("--out-dir", help=f"Run directory (default {settings.out_dir})")
    parser.add_argument("--seed", type=int, help="Run seed (default LATENTFLOW_SEED)")


def _add_field(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--checkpoint", help="MLPF checkpoint")
    source.add_argument("--oracle", action="store_true", help="Closed-form field of the gaussians dataset")


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--solver", choices=[m.value for m in SolverMethod])
    parser.add_argument("--steps", type=int, help="Solver steps")
    parser.add_argument("--guidance", type=float, help="Classifier-free guidance scale")
    parser.add_argument("--no-guidance", action="store_true", help="Disable classifier-free guidance")


def _add_inversion(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t-edit", type=float)
    parser.add_argument("--s", type=int, help="Backward steps")
    parser.add_argument("--k", type=int, help="Inner iterations per step")
    parser.add_argument("--w", type=_weights, help="Comma-separated iterate weights, one per inner iteration")
    parser.add_argument("--lambda-kl", type=float)
    parser.add_argument("--cond", choices=[m.value for m in CondMode])
    parser.add_argument("--pred-space", choices=[m.value for m in PredSpace])
    parser.add_argument("--method", choices=[m.value for m in EditMethod])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentflow", description="Flow-matching latent generation and editing")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a velocity network")
    _add_common(p)
    p.add_argument("--out", help="Checkpoint path (default <out-dir>/model.mlpf)")
    p.add_argument("--train-steps", type=int)

    p = sub.add_parser("generate", help="Generate latents")
    _add_common(p)
    _add_field(p)
    _add_solver(p)
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--unconditional", action="store_true", help="Generate under the null condition")
    p.add_argument("--num", type=int, default=100)
    p.add_argument("--record-trajectory", action="store_true")
    p.add_argument("--out", help="LSEQ output (default <out-dir>/generated.lseq)")

    p = sub.add_parser("invert", help="Invert latents to T_edit")
    _add_common(p)
    _add_field(p)
    _add_solver(p)
    _add_inversion(p)
    p.add_argument("--input", required=True, help="LSEQ latents")
    p.add_argument("--label", type=int, help="Condition of the inputs (overrides the sidecar)")
    p.add_argument("--out", help="LSEQ output (default <out-dir>/inverted.lseq)")

    p = sub.add_parser("edit", help="Edit latents into another class")
    _add_common(p)
    _add_field(p)
    _add_solver(p)
    _add_inversion(p)
    p.add_argument("--input", required=True, help="LSEQ latents")
    p.add_argument("--target", type=int, help="Target class")
    p.add_argument("--source", type=int, help="Class of the inputs (overrides the sidecar)")
    p.add_argument("--blend-label", type=int, help="Second label of an embedding blend")
    p.add_argument("--blend-alpha", type=float)
    p.add_argument("--out", help="LSEQ output (default <out-dir>/edited.lseq)")

    p = sub.add_parser("eval", help="Score class-balanced generation")
    _add_common(p)
    _add_field(p)
    _add_solver(p)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--record-trajectory", action="store_true")

    p = sub.add_parser("ablate", help="Run an ablation sweep")
    _add_common(p)
    _add_field(p)
    _add_solver(p)
    _add_inversion(p)
    p.add_argument("--sweep", required=True, choices=[s.value for s in SweepKind])
    p.add_argument("--grid", help="Comma-separated grid (variant names for the training sweep)")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--out", help="Extra copy of the sweep CSV")

    p = sub.add_parser("oracle-check", help="Monte-Carlo check of the closed-form velocity")
    _add_common(p)
    p.add_argument("--mu", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--t", type=float, default=0.3)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=0.05)
    return parser


def flag_overrides(args: argparse.Namespace) -> List[str]:
    """`key=value` overrides for every config flag that was given."""
    overrides = list(args.set)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "no_guidance", False):
        overrides.append("guidance.enabled=false")
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, flag_overrides(args), defaults={"seed": settings.seed})


def _dispatch(args: argparse.Namespace, cfg: RunConfig, deps: RunDependencies) -> CommandResult:
    command = args.command
    if command == "train":
        return run_train(cfg, deps, out=args.out)
    if command == "oracle-check":
        return run_oracle_check(deps, args.mu, args.sigma, args.d, args.t, args.samples, args.bins, args.tolerance)

    has_field = args.checkpoint is not None or args.oracle
    if command == "ablate":
        field = load_field(cfg, args.checkpoint, args.oracle) if has_field else None
        grid = [g.strip() for g in args.grid.split(",") if g.strip()] if args.grid else None
        return run_ablate(cfg, deps, SweepKind(args.sweep), field, grid, args.per_class, args.out)

    field = guided(load_field(cfg, args.checkpoint, args.oracle), cfg)
    if command == "generate":
        label = None if args.unconditional else args.label
        return run_generate(cfg, deps, field, label, args.num, args.record_trajectory, args.out)
    if command == "invert":
        return run_invert(cfg, deps, field, args.input, cfg.edit.method, args.label, args.out)
    if command == "edit":
        return run_edit(
            cfg, deps, field, args.input, cfg.edit.target_label, cfg.edit.method,
            source=args.source, blend_label=cfg.edit.blend_label, blend_alpha=cfg.edit.blend_alpha, out=args.out
        )
    return run_eval(cfg, deps, field, args.per_class, args.record_trajectory)


def write_manifest(
    args: argparse.Namespace,
    argv: Sequence[str],
    cfg: RunConfig,
    deps: RunDependencies,
    result: CommandResult
) -> RunManifest:
    """Hash the inputs and write manifest.json into the run directory."""
    config_json = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":")).encode("utf-8")
    paths = {
        "config_file": args.config,
        "checkpoint": getattr(args, "checkpoint", None),
        **result.inputs,
    }
    hashes = RunStorage.hash_inputs(paths, extra=[("config", config_json)])
    combined = hashes.pop("inputs")
    manifest = RunManifest(
        command=args.command,
        argv=list(argv),
        config=config_to_dict(cfg),
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        input_hashes=hashes,
        input_hash=combined,
        metrics=result.metrics,
        nfe=result.nfe,
        nfe_total=sum(result.nfe.values()),
        wall_clock_seconds=round(deps.elapsed, 3),
        started_at=deps.started_at.isoformat(),
        outputs=list(deps.storage.written) + ["manifest.json"],
    )
    deps.storage.write_manifest(manifest.model_dump(mode="json"))
    return manifest


def _report_error(e: LatentFlowError) -> int:
    payload = e.to_dict()
    payload["error"]["summary"] = get_error_message(e.code)
    print(json.dumps(payload), file=sys.stderr)
    return e.exit_code


def run(argv: Optional[Sequence[str]] = None, progress_callback: Optional[Callable[[Dict[str, Any]], None]] = None) -> int:
    """
    Execute one CLI invocation.

    Args:
        argv: Arguments without the program name (sys.argv[1:] when None)
        progress_callback: Receives pipeline progress updates

    Returns:
        Process exit code: 0 success, 1 runtime failure, 2 usage error
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    start = time.time()
    try:
        cfg = resolve_config(args)
        deps = RunDependencies.from_settings(
            args.command, out_dir=args.out_dir, seed=cfg.seed, progress_callback=progress_callback
        )
        logger.info(f"latentflow {args.command} (seed {cfg.seed}, config {config_hash(cfg)[:12]})")
        result = _dispatch(args, cfg, deps)
        write_manifest(args, argv, cfg, deps, result)
    except LatentFlowError as e:
        logger.error(f"{args.command} failed: {e.code.value}: {e.message}")
        return _report_error(e)
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        return _report_error(LatentFlowError(ErrorCode.UNKNOWN_ERROR, str(e), details={"type": type(e).__name__}))

    print(result.message or json.dumps(result.metrics, default=str))
    logger.info(f"{args.command} finished in {time.time() - start:.1f}s")
    return 0


def main() -> None:
    """Console-script entry point."""
    logging.basicConfig(
        level=getattr(logging, settings.effective_log_level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
