"""
Enumerations shared across latentflow and their lookup tables.

String-valued enums so they round-trip through config files, CSV tables
and CLI flags unchanged.
"""

from enum import Enum
from typing import Dict, List


class ConditionKind(str, Enum):
    """Variants of the conditioning signal."""
    NULL = "null"
    CLASS_LABEL = "class_label"
    EMBEDDING = "embedding"


class FlowStepKind(str, Enum):
    """Flow-step sampling distributions for training."""
    UNIFORM = "uniform"
    LOGIT_NORMAL = "logit_normal"


class CouplingKind(str, Enum):
    """Pairing of data and noise inside a training batch."""
    INDEPENDENT = "independent"
    OT = "ot"


class LossWeighting(str, Enum):
    """Per-item weighting of the flow-matching loss."""
    NONE = "none"
    LOGIT_NORMAL_PDF = "logit_normal_pdf"


class SolverMethod(str, Enum):
    """Fixed-step ODE integrators."""
    EULER = "euler"
    MIDPOINT = "midpoint"


class CondMode(str, Enum):
    """Conditioning used while inverting."""
    NULL = "null"
    ORIGINAL = "orig"


class PredSpace(str, Enum):
    """Space in which inversion predictions are regularized."""
    VELOCITY = "velocity"
    NOISE = "noise"


class EditMethod(str, Enum):
    """Inversion algorithm used by the editing pipeline."""
    DDIM = "ddim"
    REGULARIZED = "regularized"


class DatasetKind(str, Enum):
    """Synthetic dataset generators."""
    GAUSSIANS = "gaussians"
    MOONS_LIKE = "moons_like"
    SEQ_SINES = "seq_sines"


class SweepKind(str, Enum):
    """Ablation sweeps exposed by `latentflow ablate`."""
    T_EDIT = "t-edit"
    NFE = "nfe"
    LAMBDA_KL = "lambda-kl"
    CFG = "cfg"
    EFFICIENCY = "efficiency"
    TRAINING = "training"


# Field evaluations per solver step (before guidance doubling)
EVALS_PER_STEP: Dict[SolverMethod, int] = {
    SolverMethod.EULER: 1,
    SolverMethod.MIDPOINT: 2,
}


# Default grids used when `--grid` is not given
SWEEP_DEFAULT_GRIDS: Dict[SweepKind, List[float]] = {
    SweepKind.T_EDIT: [0.0, 0.04, 0.08, 0.12, 0.16, 0.2, 0.3, 0.4, 0.5],
    SweepKind.NFE: [16, 32, 64, 128, 256],
    SweepKind.LAMBDA_KL: [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5],
    SweepKind.CFG: [0.0, 1.0, 2.0, 3.0, 5.0, 8.0],
    SweepKind.EFFICIENCY: [8, 16, 32, 64, 128],
    SweepKind.TRAINING: [],
}


# Axis labels for sweep plots
SWEEP_AXIS_LABELS: Dict[SweepKind, str] = {
    SweepKind.T_EDIT: "T_edit",
    SweepKind.NFE: "NFE budget",
    SweepKind.LAMBDA_KL: "lambda_KL",
    SweepKind.CFG: "guidance scale",
    SweepKind.EFFICIENCY: "NFE",
    SweepKind.TRAINING: "variant",
}
