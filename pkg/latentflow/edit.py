"""
Label-guided editing: invert a latent to T_edit, then integrate forward
to t=1 under the edit condition. Also the editing sweeps over T_edit,
NFE budget and KL strength.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from latentflow.config import InversionConfig, SolverConfig, updated
from latentflow.core import ArrayLike, Batch, Condition, as_array, make_rng
from latentflow.error_codes import ErrorCode, validation_error
from latentflow.invert import (
    ddim_invert,
    equal_nfe_ddim_steps,
    inversion_nfe_per_step,
    regularized_invert,
    resolve_inversion_condition,
)
from latentflow.kinds import EVALS_PER_STEP, CondMode, EditMethod, PredSpace
from latentflow.metrics import OracleClassifier, adherence, frechet_gaussian, lpaps
from latentflow.ode import integrate
from latentflow.settings import settings
from latentflow.sweep_manager import SweepManager
from latentflow.velocity import NfeCounter, VelocityField

logger = logging.getLogger(__name__)

ConditionArg = Union[Condition, Sequence[Condition]]


@dataclass(frozen=True)
class EditRequest:
    """What to edit, into what, and how."""

    x_orig: ArrayLike
    c_orig: ConditionArg
    c_edit: ConditionArg
    inversion: InversionConfig
    solver: SolverConfig
    method: EditMethod = EditMethod.REGULARIZED
    ddim_steps: Optional[int] = None

    def __post_init__(self):
        targets = [self.c_edit] if isinstance(self.c_edit, Condition) else list(self.c_edit)
        if any(c.is_null for c in targets):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                "Edit condition must not be null",
                field="c_edit"
            )


def inversion_setup(
    field: VelocityField,
    c_orig: ConditionArg,
    cond_mode: CondMode
) -> Tuple[VelocityField, ConditionArg]:
    if isinstance(c_orig, Condition):
        return resolve_inversion_condition(field, c_orig, cond_mode)
    conds = list(c_orig)
    if cond_mode == CondMode.NULL or all(c.is_null for c in conds):
        return resolve_inversion_condition(field, Condition.null(), CondMode.NULL)
    return field, conds


def invert_latents(
    field: VelocityField,
    x_orig: ArrayLike,
    c_orig: ConditionArg,
    inversion: InversionConfig,
    method: EditMethod = EditMethod.REGULARIZED,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[NfeCounter] = None,
    ddim_steps: Optional[int] = None
) -> ArrayLike:
    """
    Invert latents from t=1 down to `inversion.t_edit`.

    Args:
        field: Velocity field (unwrapped for null-conditioned inversion)
        x_orig: Latent or (B, L, d) batch at t=1
        c_orig: Condition(s) the latents were generated under
        inversion: Inversion settings
        method: ddim or regularized
        rng: Reference-noise generator for regularized inversion
        counter: Optional NFE counter
        ddim_steps: DDIM step count (inversion.S when None)

    Returns:
        Noised latent(s) at T_edit
    """
    inv_field, inv_c = inversion_setup(field, c_orig, inversion.cond_mode)
    if EditMethod(method) == EditMethod.DDIM:
        steps = inversion.S if ddim_steps is None else ddim_steps
        return ddim_invert(inv_field, x_orig, inv_c, inversion.t_edit, steps, counter)
    rng = rng if rng is not None else make_rng(settings.seed)
    return regularized_invert(inv_field, x_orig, inv_c, inversion, rng, counter)


def invert(
    field: VelocityField,
    req: EditRequest,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[NfeCounter] = None
) -> ArrayLike:
    """Backward phase of an edit: x_orig to z at T_edit."""
    return invert_latents(field, req.x_orig, req.c_orig, req.inversion, req.method, rng, counter, req.ddim_steps)


def edit(
    field: VelocityField,
    req: EditRequest,
    rng: Optional[np.random.Generator] = None
) -> Tuple[ArrayLike, int]:
    """
    Edit a latent (or a batch of latents).

    Args:
        field: Velocity field, guided fields guide both directions
        req: Edit request
        rng: Reference-noise generator for regularized inversion

    Returns:
        Edited latent and the evaluations spent by both phases
    """
    counter = NfeCounter()
    z = invert(field, req, rng, counter)
    backward = counter.count
    if req.inversion.t_edit < 1.0:
        z, _ = integrate(field, z, req.inversion.t_edit, 1.0, req.solver, req.c_edit, counter=counter)
    logger.debug(f"Edit via {req.method.value}: backward nfe {backward}, total {counter.count}")
    return z, counter.count


@dataclass
class EditSetup:
    """Shared inputs of the editing sweeps."""

    field: VelocityField
    originals: Batch
    c_edit: Condition
    reference: np.ndarray
    classifier: OracleClassifier
    inversion: InversionConfig
    solver: SolverConfig
    seed: int = 0
    equal_nfe: bool = True
    num_workers: Optional[int] = None


def _edit_metrics(setup: EditSetup, x_edit: np.ndarray, nfe: int) -> Dict[str, Any]:
    distances = lpaps(x_edit, setup.originals.data)
    return {
        "nfe": nfe,
        "frechet": frechet_gaussian(x_edit, setup.reference),
        "adherence": float(np.mean(adherence(x_edit, setup.c_edit, setup.classifier))),
        "lpaps": float(np.mean(distances)),
        "lpaps_median": float(np.median(distances)),
    }


def _request(setup: EditSetup, inversion: InversionConfig, method: EditMethod, **kwargs) -> EditRequest:
    return EditRequest(
        x_orig=setup.originals.data,
        c_orig=list(setup.originals.conditions),
        c_edit=setup.c_edit,
        inversion=inversion,
        solver=kwargs.get("solver", setup.solver),
        method=method,
        ddim_steps=kwargs.get("ddim_steps"),
    )


def _ddim_steps(setup: EditSetup, inversion: InversionConfig) -> int:
    return equal_nfe_ddim_steps(inversion) if setup.equal_nfe else inversion.S


def sweep_t_edit(
    setup: EditSetup,
    grid: Sequence[float],
    methods: Sequence[EditMethod] = (EditMethod.DDIM, EditMethod.REGULARIZED)
) -> pd.DataFrame:
    """
    Edit metrics for every (method, T_edit) cell.

    DDIM gets S times the regularized per-step evaluations when
    `equal_nfe` is set.

    Returns:
        Columns method, t_edit, nfe, frechet, adherence, lpaps, lpaps_median
    """
    if not grid:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "T_edit grid is empty", field="--grid")
    manager = SweepManager(setup.seed, setup.num_workers)
    for method in methods:
        for t_edit in grid:
            manager.add_cell({"method": EditMethod(method).value, "t_edit": float(t_edit)})

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        inversion = updated(setup.inversion, t_edit=params["t_edit"])
        method = EditMethod(params["method"])
        req = _request(setup, inversion, method, ddim_steps=_ddim_steps(setup, inversion))
        x_edit, nfe = edit(setup.field, req, rng)
        return _edit_metrics(setup, as_array(x_edit), nfe)

    return manager.run(run_cell)


def _budget_plan(
    setup: EditSetup,
    method: EditMethod,
    budget: int,
    inversion: InversionConfig
) -> Tuple[InversionConfig, int, SolverConfig]:
    """Split a budget in halves between backward and forward phases."""
    per_call = setup.field.nfe_per_call
    half = budget / 2.0
    if method == EditMethod.DDIM:
        backward_steps = max(1, int(round(half / per_call)))
    else:
        backward_steps = max(1, int(round(half / inversion_nfe_per_step(inversion, setup.field))))
    forward_steps = max(1, int(round(half / (EVALS_PER_STEP[setup.solver.method] * per_call))))
    return (
        updated(inversion, S=backward_steps),
        backward_steps,
        updated(setup.solver, num_steps=forward_steps),
    )


def sweep_nfe(
    setup: EditSetup,
    budgets: Sequence[int],
    methods: Sequence[EditMethod] = (EditMethod.DDIM, EditMethod.REGULARIZED)
) -> pd.DataFrame:
    """
    Edit metrics at T_edit=0 for every (method, NFE budget) cell.

    Step counts are rounded to integers; cells that miss their budget
    carry rounded=True and a warning. The nfe column is the counted total.
    """
    if not budgets or any(int(b) <= 0 for b in budgets):
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "NFE budgets must be positive", field="--grid")
    base = updated(setup.inversion, t_edit=0.0)
    manager = SweepManager(setup.seed, setup.num_workers)
    for method in methods:
        for budget in budgets:
            manager.add_cell({"method": EditMethod(method).value, "budget": int(budget)})

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        method = EditMethod(params["method"])
        inversion, backward_steps, solver = _budget_plan(setup, method, params["budget"], base)
        req = _request(setup, inversion, method, solver=solver, ddim_steps=backward_steps)
        x_edit, nfe = edit(setup.field, req, rng)
        result = _edit_metrics(setup, as_array(x_edit), nfe)
        result["backward_steps"] = backward_steps
        result["forward_steps"] = solver.num_steps
        result["rounded"] = nfe != params["budget"]
        result["warning"] = f"budget {params['budget']} rounded to {nfe}" if nfe != params["budget"] else ""
        if result["rounded"]:
            logger.warning(f"{method.value}: NFE budget {params['budget']} rounded to {nfe}")
        return result

    return manager.run(run_cell)


def sweep_lambda_kl(
    setup: EditSetup,
    grid: Sequence[float],
    pred_spaces: Sequence[PredSpace] = (PredSpace.VELOCITY, PredSpace.NOISE),
    cond_modes: Sequence[CondMode] = (CondMode.NULL, CondMode.ORIGINAL)
) -> pd.DataFrame:
    """
    Regularized-edit metrics over KL strength, prediction space and
    inversion conditioning.

    Returns:
        Columns pred_space, cond_mode, lambda_kl, nfe, frechet, adherence,
        lpaps, lpaps_median
    """
    if not grid:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "lambda_KL grid is empty", field="--grid")
    manager = SweepManager(setup.seed, setup.num_workers)
    for space in pred_spaces:
        for mode in cond_modes:
            for lam in grid:
                manager.add_cell({
                    "pred_space": PredSpace(space).value,
                    "cond_mode": CondMode(mode).value,
                    "lambda_kl": float(lam),
                })

    def run_cell(params: Dict[str, Any], rng: np.random.Generator) -> Dict[str, Any]:
        inversion = updated(
            setup.inversion,
            lambda_kl=params["lambda_kl"],
            pred_space=params["pred_space"],
            cond_mode=params["cond_mode"],
        )
        x_edit, nfe = edit(setup.field, _request(setup, inversion, EditMethod.REGULARIZED), rng)
        return _edit_metrics(setup, as_array(x_edit), nfe)

    return manager.run(run_cell)


def best_rows(table: pd.DataFrame, by: List[str], metric: str = "frechet") -> pd.DataFrame:
    """Row with the lowest `metric` within each group."""
    return table.loc[table.groupby(by)[metric].idxmin()].reset_index(drop=True)
