"""
Command pipelines behind the latentflow CLI.

Each pipeline loads what it needs, runs the numeric modules step by step
while reporting progress, writes its outputs through the run storage and
returns a CommandResult for the run manifest.
"""

from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import logging
import time

import numpy as np

from latentflow.ablations import GenerationSetup, balanced_conditions, sweep_cfg, sweep_efficiency, sweep_training
from latentflow.config import RunConfig, config_hash
from latentflow.core import Batch, Condition, as_array, make_rng
from latentflow.data import Splits, load_dataset, make_dataset, oracle_for, save_dataset, split
from latentflow.dependencies import RunDependencies
from latentflow.edit import EditRequest, EditSetup, edit, inversion_setup, invert_latents, sweep_lambda_kl, sweep_nfe, sweep_t_edit
from latentflow.error_codes import ErrorCode, processing_error, usage_error, validation_error
from latentflow.invert import reconstruction_solver
from latentflow.kinds import SWEEP_DEFAULT_GRIDS, EditMethod, SweepKind
from latentflow.metrics import OracleClassifier, evaluate_run, lpaps
from latentflow.ode import integrate
from latentflow.plots import sweep_chart_svg
from latentflow.storage import CHECKPOINT_FILE, TRAIN_LOG_FILE, TRAJECTORY_FILE
from latentflow.train import fit, validation_loss
from latentflow.velocity import (
    GaussianOracleField,
    GuidedField,
    MlpField,
    NfeCounter,
    VelocityField,
    blend_condition,
    load_checkpoint,
    oracle_validate,
    save_checkpoint,
    unwrap,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class CommandResult:
    """What a pipeline reports back for the run manifest."""

    metrics: Dict[str, Any] = dc_field(default_factory=dict)
    nfe: Dict[str, int] = dc_field(default_factory=dict)
    inputs: Dict[str, Optional[PathLike]] = dc_field(default_factory=dict)
    message: str = ""


# Shared loading steps

def prepare_splits(cfg: RunConfig) -> Splits:
    """Generate the configured dataset and split it with the run seed."""
    return split(make_dataset(cfg.dataset), cfg.splits, cfg.seed)


def load_field(cfg: RunConfig, checkpoint: Optional[PathLike], oracle: bool = False) -> VelocityField:
    """
    Resolve the velocity field of a run.

    Args:
        cfg: Resolved configuration
        checkpoint: MLPF checkpoint path; its EMA parameters are used
        oracle: Use the closed-form field of the configured gaussians dataset

    Returns:
        Bare (unguided) velocity field
    """
    if checkpoint is not None:
        return load_checkpoint(checkpoint, field_name="--checkpoint").with_ema()
    if oracle:
        return oracle_for(cfg.dataset)
    raise usage_error("A velocity field is required: pass --checkpoint <file> or --oracle", field="--checkpoint")


def guided(field: VelocityField, cfg: RunConfig) -> VelocityField:
    """Wrap a network in classifier-free guidance when enabled; the oracle has no null branch."""
    if cfg.guidance.enabled and isinstance(field, MlpField):
        return GuidedField(field, cfg.guidance.scale)
    return field


def fit_classifier(splits: Splits) -> OracleClassifier:
    """Oracle classifier on data the generator never trained on."""
    held_out = splits.validation if splits.validation is not None else splits.eval
    if held_out is None:
        held_out = splits.train
    return OracleClassifier().fit(held_out)


def class_subset(data: Optional[Batch], label: Optional[int]) -> Optional[Batch]:
    """Items of one class (all items when label is None); None when fewer than two remain."""
    if data is None:
        return None
    if label is None:
        return data if data.B >= 2 else None
    idx = np.flatnonzero(data.labels == label)
    return data.subset(idx) if len(idx) >= 2 else None


def _shape_matches(reference: Optional[Batch], x: np.ndarray) -> bool:
    return reference is not None and reference.data.shape[1:] == x.shape[1:]


# Pipelines

def run_train(cfg: RunConfig, deps: RunDependencies, out: Optional[PathLike] = None) -> CommandResult:
    """
    Train a network on the configured dataset and save its checkpoint.

    Writes the checkpoint (default model.mlpf in the run directory) and
    train_log.csv.
    """
    deps.send_progress_update("loading", 5, f"dataset {cfg.dataset.kind.value}")
    splits = prepare_splits(cfg)
    if splits.train is None:
        raise validation_error(ErrorCode.INVALID_CONFIG, "Training split is empty", field="splits")

    total = max(1, cfg.train.steps)

    def progress(step: int, row: Dict[str, float]) -> None:
        deps.send_progress_update("training", 10 + int(80 * step / total), f"step {step} loss {row['loss']:.4f}")

    start = time.time()
    state, log = fit(splits.train, cfg.model, cfg.train, progress=progress)
    elapsed = time.time() - start

    deps.send_progress_update("writing", 92, "checkpoint and log")
    path = Path(out) if out is not None else deps.storage.path(CHECKPOINT_FILE)
    save_checkpoint(path, state.field, {
        "dataset": cfg.dataset.model_dump(mode="json"),
        "train": cfg.train.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
    })
    deps.storage.register(path)
    deps.storage.write_table(log, TRAIN_LOG_FILE)

    metrics: Dict[str, Any] = {
        "steps": state.step,
        "final_loss": float(log["loss"].iloc[-1]) if len(log) else None,
        "ema_loss": state.ema_loss,
        "train_seconds": round(elapsed, 3),
    }
    if splits.validation is not None:
        metrics["val_mse"] = validation_loss(
            state.field.with_ema(), splits.validation, cfg.train.sampler, make_rng([cfg.seed, 1]), draws=4
        )
    deps.storage.write_metrics(metrics)
    return CommandResult(metrics=metrics, message=f"checkpoint written to {path}")


def run_generate(
    cfg: RunConfig,
    deps: RunDependencies,
    field: VelocityField,
    label: Optional[int] = 0,
    num: int = 100,
    record: bool = False,
    out: Optional[PathLike] = None
) -> CommandResult:
    """
    Generate `num` latents under one class label (null when label is None).

    Writes the latents as LSEQ with a label sidecar, trajectory.csv when
    recording, and metrics.csv.
    """
    if num < 1:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "--num must be at least 1", field="--num")
    c = Condition.null() if label is None else Condition.of_label(label)
    sampling_field = unwrap(field) if c.is_null else field
    L, d = _latent_shape(field, cfg)

    deps.send_progress_update("generating", 20, f"{num} samples, {cfg.solver.method.value} x {cfg.solver.num_steps}")
    rng = make_rng(cfg.seed)
    eps = rng.standard_normal((num, L, d))
    counter = NfeCounter()
    x, traj = integrate(sampling_field, eps, 0.0, 1.0, cfg.solver, c, record=record, counter=counter)

    deps.send_progress_update("writing", 80, "latents")
    path = Path(out) if out is not None else deps.storage.path("generated.lseq")
    save_dataset(path, Batch(x, tuple([c] * num)))
    deps.storage.register(path)

    metrics: Dict[str, Any] = {"num": num, "label": label}
    if record:
        deps.storage.register(traj.save_csv(deps.storage.path(TRAJECTORY_FILE)))
    splits = prepare_splits(cfg)
    reference = class_subset(splits.eval, label) if num >= 2 else None
    if _shape_matches(reference, x):
        classifier = fit_classifier(splits) if label is not None else None
        report = evaluate_run(
            x, reference, [c] * num, classifier,
            trajectory=traj if record and len(traj.points) >= 3 else None, nfe=counter.count, config_hash=config_hash(cfg)
        )
        metrics.update(report.model_dump(exclude_none=True))
    metrics["nfe"] = counter.count
    deps.storage.write_metrics(metrics)
    return CommandResult(metrics=metrics, nfe={"generate": counter.count}, message=f"{num} latents written to {path}")


def _latent_shape(field: VelocityField, cfg: RunConfig):
    base = unwrap(field)
    if isinstance(base, MlpField):
        return base.cfg.L, base.cfg.d
    return cfg.dataset.L, cfg.dataset.d


def _load_latents(path: PathLike, label: Optional[int]) -> Batch:
    """Latents plus their conditions; an explicit label overrides the sidecar."""
    batch, _ = load_dataset(path, field="--input")
    if label is not None:
        batch = batch.with_conditions([Condition.of_label(label)] * batch.B)
    return batch


def run_invert(
    cfg: RunConfig,
    deps: RunDependencies,
    field: VelocityField,
    input_path: PathLike,
    method: EditMethod = EditMethod.REGULARIZED,
    label: Optional[int] = None,
    out: Optional[PathLike] = None
) -> CommandResult:
    """
    Invert latents to T_edit and measure how well they reconstruct.

    The reconstruction integrates the inverted latents back to t=1 under the
    inversion conditioning with euler on the inversion grid; its mean
    per-frame L2 to the input is reported as reconstruction_lpaps.
    """
    deps.send_progress_update("loading", 5, f"latents from {input_path}")
    originals = _load_latents(input_path, label)
    inversion = cfg.inversion

    deps.send_progress_update("inverting", 20, f"{method.value} to t={inversion.t_edit}")
    counter = NfeCounter()
    z = invert_latents(field, originals.data, list(originals.conditions), inversion, method, make_rng(cfg.seed), counter)
    backward = counter.count

    deps.send_progress_update("reconstructing", 60, "integrating back to t=1")
    inv_field, inv_c = inversion_setup(field, list(originals.conditions), inversion.cond_mode)
    x_rec, _ = integrate(inv_field, z, inversion.t_edit, 1.0, reconstruction_solver(inversion), inv_c, counter=counter)

    path = Path(out) if out is not None else deps.storage.path("inverted.lseq")
    save_dataset(path, Batch(as_array(z), originals.conditions))
    deps.storage.register(path)
    distances = lpaps(x_rec, originals.data)
    metrics = {
        "method": method.value,
        "t_edit": inversion.t_edit,
        "num": originals.B,
        "reconstruction_lpaps": float(np.mean(distances)),
        "reconstruction_lpaps_max": float(np.max(distances)),
        "nfe": backward,
    }
    deps.storage.write_metrics(metrics)
    return CommandResult(
        metrics=metrics,
        nfe={"inversion": backward, "reconstruction": counter.count - backward},
        inputs={"input": input_path},
        message=f"inverted latents written to {path}",
    )


def run_edit(
    cfg: RunConfig,
    deps: RunDependencies,
    field: VelocityField,
    input_path: PathLike,
    target: int,
    method: EditMethod = EditMethod.REGULARIZED,
    source: Optional[int] = None,
    blend_label: Optional[int] = None,
    blend_alpha: float = 0.0,
    out: Optional[PathLike] = None
) -> CommandResult:
    """
    Edit latents into the target class (optionally a blend of two labels).

    Writes the edited latents and metrics.csv with Frechet distance to the
    target class, adherence and lpaps to the originals.
    """
    deps.send_progress_update("loading", 5, f"latents from {input_path}")
    originals = _load_latents(input_path, source)
    c_edit = Condition.of_label(target)
    if blend_label is not None:
        c_edit = blend_condition(field, c_edit, Condition.of_label(blend_label), blend_alpha)

    deps.send_progress_update("editing", 20, f"{method.value} edit to {c_edit.describe()}")
    req = EditRequest(
        x_orig=originals.data,
        c_orig=list(originals.conditions),
        c_edit=c_edit,
        inversion=cfg.inversion,
        solver=cfg.solver,
        method=method,
    )
    x_edit, nfe = edit(field, req, make_rng(cfg.seed))
    x_edit = as_array(x_edit)

    deps.send_progress_update("writing", 80, "edited latents")
    path = Path(out) if out is not None else deps.storage.path("edited.lseq")
    save_dataset(path, Batch(x_edit, tuple([c_edit] * originals.B)) if blend_label is None else Batch(x_edit))
    deps.storage.register(path)

    metrics: Dict[str, Any] = {"method": method.value, "target": target, "num": originals.B}
    splits = prepare_splits(cfg)
    reference = class_subset(splits.eval, target)
    if _shape_matches(reference, x_edit) and originals.B >= 2:
        report = evaluate_run(
            x_edit, reference, [c_edit] * originals.B, fit_classifier(splits),
            originals=originals.data, nfe=nfe, config_hash=config_hash(cfg)
        )
        metrics.update(report.model_dump(exclude_none=True))
    else:
        metrics["lpaps"] = float(np.mean(lpaps(x_edit, originals.data)))
    metrics["nfe"] = nfe
    deps.storage.write_metrics(metrics)
    return CommandResult(metrics=metrics, nfe={"edit": nfe}, inputs={"input": input_path}, message=f"edited latents written to {path}")


def run_eval(
    cfg: RunConfig,
    deps: RunDependencies,
    field: VelocityField,
    per_class: int = 200,
    record: bool = False
) -> CommandResult:
    """Class-balanced generation scored against the evaluation split."""
    deps.send_progress_update("loading", 5, "dataset and classifier")
    splits = prepare_splits(cfg)
    if splits.eval is None:
        raise validation_error(ErrorCode.INVALID_CONFIG, "Evaluation split is empty", field="splits")
    classifier = fit_classifier(splits)
    conds = balanced_conditions(cfg.dataset.classes, per_class)

    deps.send_progress_update("generating", 30, f"{len(conds)} samples")
    rng = make_rng(cfg.seed)
    eps = rng.standard_normal((len(conds), splits.eval.L, splits.eval.d))
    counter = NfeCounter()
    x, traj = integrate(field, eps, 0.0, 1.0, cfg.solver, conds, record=True, counter=counter)
    if record:
        deps.storage.register(traj.save_csv(deps.storage.path(TRAJECTORY_FILE)))

    deps.send_progress_update("scoring", 80, "metrics")
    report = evaluate_run(
        x, splits.eval, conds, classifier,
        trajectory=traj if len(traj.points) >= 3 else None, nfe=counter.count, config_hash=config_hash(cfg))
    metrics: Dict[str, Any] = {"classifier_accuracy": classifier.accuracy(splits.eval), **report.model_dump(exclude_none=True)}
    base = unwrap(field)
    if isinstance(base, MlpField):
        metrics["val_mse"] = validation_loss(base, splits.eval, cfg.train.sampler, make_rng([cfg.seed, 1]), draws=4)
    deps.storage.write_metrics(metrics)
    return CommandResult(metrics=metrics, nfe={"generate": counter.count})


def _numeric_grid(sweep: SweepKind, grid: Optional[Sequence[str]]) -> List[float]:
    if not grid:
        return list(SWEEP_DEFAULT_GRIDS[sweep])
    try:
        return [float(v) for v in grid]
    except ValueError as e:
        raise usage_error(f"--grid for {sweep.value} must be numbers, got {list(grid)}", field="--grid") from e


def _edit_setup(cfg: RunConfig, field: VelocityField, splits: Splits, classifier: OracleClassifier, deps: RunDependencies) -> EditSetup:
    source = cfg.edit.source_label if cfg.edit.source_label is not None else 0
    originals = class_subset(splits.eval, source)
    reference = class_subset(splits.eval, cfg.edit.target_label)
    if originals is None or reference is None:
        raise validation_error(
            ErrorCode.INVALID_CONFIG,
            f"Evaluation split needs at least two items of classes {source} and {cfg.edit.target_label}",
            field="splits"
        )
    return EditSetup(
        field=field,
        originals=originals,
        c_edit=Condition.of_label(cfg.edit.target_label),
        reference=reference.data,
        classifier=classifier,
        inversion=cfg.inversion,
        solver=cfg.solver,
        seed=cfg.seed,
        num_workers=deps.num_workers,
    )


def run_ablate(
    cfg: RunConfig,
    deps: RunDependencies,
    sweep: SweepKind,
    field: Optional[VelocityField] = None,
    grid: Optional[Sequence[str]] = None,
    per_class: int = 200,
    out: Optional[PathLike] = None
) -> CommandResult:
    """
    Run one ablation sweep and write its table and chart.

    Editing sweeps move eval items of edit.source_label to
    edit.target_label. The training sweep ignores `field` and trains one
    model per variant; its grid lists variant names.
    """
    sweep = SweepKind(sweep)
    deps.send_progress_update("loading", 5, f"{sweep.value} sweep")
    splits = prepare_splits(cfg)
    if splits.eval is None or splits.train is None:
        raise validation_error(ErrorCode.INVALID_CONFIG, "Sweeps need non-empty train and eval splits", field="splits")
    classifier = fit_classifier(splits)

    if sweep != SweepKind.TRAINING and field is None:
        raise usage_error("A velocity field is required: pass --checkpoint <file> or --oracle", field="--checkpoint")

    deps.send_progress_update("sweeping", 15, "running cells")
    if sweep == SweepKind.TRAINING:
        validation = splits.validation if splits.validation is not None else splits.eval
        table = sweep_training(
            cfg, splits.train, validation, splits.eval, classifier,
            variants=list(grid) if grid else None, samples_per_class=per_class, num_workers=deps.num_workers
        )
    elif sweep in (SweepKind.CFG, SweepKind.EFFICIENCY):
        values = _numeric_grid(sweep, grid)
        bare = unwrap(field)
        setup = GenerationSetup(
            guided(bare, cfg) if sweep == SweepKind.EFFICIENCY else bare,
            splits.eval, classifier, cfg.solver, cfg.dataset.classes, per_class, cfg.seed, deps.num_workers
        )
        table = sweep_cfg(setup, values) if sweep == SweepKind.CFG else sweep_efficiency(setup, [int(v) for v in values])
    else:
        values = _numeric_grid(sweep, grid)
        setup = _edit_setup(cfg, guided(field, cfg), splits, classifier, deps)
        if sweep == SweepKind.T_EDIT:
            table = sweep_t_edit(setup, values)
        elif sweep == SweepKind.NFE:
            table = sweep_nfe(setup, [int(v) for v in values])
        else:
            table = sweep_lambda_kl(setup, values)

    deps.send_progress_update("writing", 90, f"{len(table)} rows")
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out, index=False)
        deps.storage.register(out)
    deps.storage.write_table(table)
    deps.storage.write_svg(sweep_chart_svg(table, sweep))
    nfe_total = int(table["nfe"].sum()) if "nfe" in table.columns else 0
    return CommandResult(
        metrics={"sweep": sweep.value, "cells": len(table)},
        nfe={"sweep": nfe_total},
        message=table.to_string(index=False),
    )


def run_oracle_check(
    deps: RunDependencies,
    mu: float,
    sigma: float,
    d: int = 1,
    t: float = 0.3,
    num_samples: int = 1_000_000,
    bins: int = 20,
    tolerance: float = 0.05
) -> CommandResult:
    """
    Monte-Carlo check of the closed-form velocity for N(mu, sigma^2 I) data.

    Raises ORACLE_CHECK_FAILED when the largest binned deviation reaches
    the tolerance.
    """
    deps.send_progress_update("sampling", 10, f"{num_samples} draws at t={t}")
    field = GaussianOracleField(np.full((1, d), mu), np.full((1, d), sigma))
    deviation = oracle_validate(field, t, num_samples, make_rng(deps.seed), bins=bins)
    metrics = {
        "mu": mu,
        "sigma": sigma,
        "t": t,
        "num_samples": num_samples,
        "bins": bins,
        "max_deviation": deviation,
        "tolerance": tolerance,
        "passed": deviation < tolerance,
    }
    deps.storage.write_metrics(metrics)
    if deviation >= tolerance:
        raise processing_error(
            ErrorCode.ORACLE_CHECK_FAILED,
            f"Max binned deviation {deviation:.4g} is not below {tolerance}",
            details=metrics
        )
    return CommandResult(metrics=metrics, message=f"max binned deviation {deviation:.6f}")
