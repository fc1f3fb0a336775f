"""
Generation and training ablations: guidance scale, solver efficiency and
the training-design variants (flow-step sampler, batch coupling, width).
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from latentflow.config import FlowStepSampler, MlpConfig, RunConfig, SolverConfig, TrainConfig, updated
from latentflow.core import Batch, Condition, make_rng, sample_noise
from latentflow.error_codes import ErrorCode, validation_error
from latentflow.kinds import EVALS_PER_STEP, CouplingKind, FlowStepKind, SolverMethod
from latentflow.metrics import OracleClassifier, adherence, frechet_gaussian
from latentflow.ode import integrate, straightness
from latentflow.sweep_manager import SweepManager
from latentflow.train import fit, validation_loss
from latentflow.velocity import GuidedField, NfeCounter, VelocityField

logger = logging.getLogger(__name__)


@dataclass
class GenerationSetup:
    """Shared inputs of the generation sweeps."""

    field: VelocityField
    reference: Batch
    classifier: OracleClassifier
    solver: SolverConfig
    num_classes: int
    samples_per_class: int = 200
    seed: int = 0
    num_workers: Optional[int] = None


def balanced_conditions(num_classes: int, per_class: int) -> List[Condition]:
    return [Condition.of_label(k) for k in range(num_classes) for _ in range(per_class)]


def generate_labelled(
    field: VelocityField,
    conditions: Sequence[Condition],
    L: int,
    d: int,
    solver: SolverConfig,
    rng: np.random.Generator,
    record: bool = False
) -> Tuple[np.ndarray, int, Optional[float]]:
    """
    Generate one sample per condition in a single batched solve.

    Returns:
        Samples, NFE per sample, and the mean straightness when recorded
    """
    eps = sample_noise(L, d, rng, batch=len(conditions))
    counter = NfeCounter()
    x, traj = integrate(field, eps, 0.0, 1.0, solver, list(conditions), record=record, counter=counter)
    return x, counter.count, straightness(traj) if record else None


def _generation_metrics(setup: GenerationSetup, field: VelocityField, solver: SolverConfig, rng) -> Dict[str, Any]:
    conds = balanced_conditions(setup.num_classes, setup.samples_per_class)
    x, nfe, straight = generate_labelled(field, conds, setup.reference.L, setup.reference.d, solver, rng, record=True)
    return {
        "nfe": nfe,
        "frechet": frechet_gaussian(x, setup.reference),
        "adherence": float(np.mean(adherence(x, conds, setup.classifier))),
        "straightness": straight,
    }


def sweep_cfg(setup: GenerationSetup, grid: Sequence[float]) -> pd.DataFrame:
    """
    Generation quality as a function of the guidance scale.

    `setup.field` must be unguided; each cell wraps it with its scale.

    Returns:
        Columns scale, nfe, frechet, adherence, straightness
    """
    if not grid:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "Guidance grid is empty", field="--grid")
    if isinstance(setup.field, GuidedField):
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "Guidance sweep needs the bare field", field="field")
    manager = SweepManager(setup.seed, setup.num_workers)
    for scale in grid:
        manager.add_cell({"scale": float(scale)})

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        return _generation_metrics(setup, GuidedField(setup.field, params["scale"]), setup.solver, rng)

    return manager.run(run_cell)


def steps_for_nfe(nfe: int, method: SolverMethod, field: VelocityField) -> int:
    """Step count whose evaluation cost is closest to `nfe` (at least one step)."""
    per_step = EVALS_PER_STEP[SolverMethod(method)] * field.nfe_per_call
    return max(1, int(round(nfe / per_step)))


def sweep_efficiency(
    setup: GenerationSetup,
    grid: Sequence[int],
    methods: Sequence[SolverMethod] = (SolverMethod.EULER, SolverMethod.MIDPOINT)
) -> pd.DataFrame:
    """
    Generation quality against evaluation budget for each solver.

    Returns:
        Columns method, budget, num_steps, nfe, frechet, adherence, straightness
    """
    if not grid or any(int(b) <= 0 for b in grid):
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "NFE grid must be positive", field="--grid")
    manager = SweepManager(setup.seed, setup.num_workers)
    for method in methods:
        for budget in grid:
            manager.add_cell({"method": SolverMethod(method).value, "budget": int(budget)})

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        steps = steps_for_nfe(params["budget"], params["method"], setup.field)
        solver = SolverConfig(method=params["method"], num_steps=steps)
        return {"num_steps": steps, **_generation_metrics(setup, setup.field, solver, rng)}

    return manager.run(run_cell)


TrainingVariant = Callable[[TrainConfig, MlpConfig], Tuple[TrainConfig, MlpConfig]]


def _baseline(train: TrainConfig, model: MlpConfig) -> Tuple[TrainConfig, MlpConfig]:
    sampler = FlowStepSampler(kind=FlowStepKind.UNIFORM)
    return updated(train, sampler=sampler, coupling=CouplingKind.INDEPENDENT), model


def _logit_normal(train: TrainConfig, model: MlpConfig) -> Tuple[TrainConfig, MlpConfig]:
    train, model = _baseline(train, model)
    return updated(train, sampler=FlowStepSampler(kind=FlowStepKind.LOGIT_NORMAL)), model


def _coupled(train: TrainConfig, model: MlpConfig) -> Tuple[TrainConfig, MlpConfig]:
    train, model = _logit_normal(train, model)
    return updated(train, coupling=CouplingKind.OT), model


def _wider(train: TrainConfig, model: MlpConfig) -> Tuple[TrainConfig, MlpConfig]:
    train, model = _coupled(train, model)
    return train, updated(model, width=2 * model.width)


# Cumulative rows of the training-design table
TRAINING_VARIANTS: Dict[str, TrainingVariant] = {
    "baseline": _baseline,
    "+logit_normal": _logit_normal,
    "+ot_coupling": _coupled,
    "+wider": _wider,
}


def sweep_training(
    cfg: RunConfig,
    train_data: Batch,
    validation: Batch,
    reference: Batch,
    classifier: OracleClassifier,
    variants: Optional[Sequence[str]] = None,
    samples_per_class: int = 200,
    num_workers: Optional[int] = None
) -> pd.DataFrame:
    """
    Train one model per variant and evaluate it.

    Validation MSE always draws logit-normal(0, 1) flow steps and a fixed
    noise stream so rows are comparable.

    Returns:
        Columns variant, sampler, coupling, width, final_loss, val_mse,
        frechet, adherence, straightness
    """
    names = list(variants) if variants else list(TRAINING_VARIANTS)
    unknown = [n for n in names if n not in TRAINING_VARIANTS]
    if unknown:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Unknown training variants {unknown}",
            field="--grid",
            details={"known": list(TRAINING_VARIANTS)}
        )
    manager = SweepManager(cfg.seed, num_workers)
    for name in names:
        manager.add_cell({"variant": name})

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        train_cfg, model_cfg = TRAINING_VARIANTS[params["variant"]](cfg.train, cfg.model)
        state, log = fit(train_data, model_cfg, train_cfg)
        ema_field = state.field.with_ema()
        val = validation_loss(ema_field, validation, FlowStepSampler(), make_rng(cfg.seed), draws=4)
        field = GuidedField(ema_field, cfg.guidance.scale) if cfg.guidance.enabled else ema_field
        setup = GenerationSetup(field, reference, classifier, cfg.solver, model_cfg.num_classes, samples_per_class)
        metrics = _generation_metrics(setup, field, cfg.solver, make_rng([cfg.seed, 1]))
        return {
            "sampler": train_cfg.sampler.kind.value,
            "coupling": train_cfg.coupling.value,
            "width": model_cfg.width,
            "final_loss": float(log["ema_loss"].iloc[-1]) if len(log) else float("nan"),
            "val_mse": val,
            **{k: metrics[k] for k in ("frechet", "adherence", "straightness")},
        }

    return manager.run(run_cell)
