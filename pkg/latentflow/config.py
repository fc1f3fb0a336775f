"""
Experiment configuration models for latentflow.

Every knob of a run lives in one pydantic tree (RunConfig). Config files
are plain `key = value` lines with dotted keys, or JSON; CLI overrides are
applied on top and the resolved tree is echoed into the run manifest.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union
import hashlib
import json
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from latentflow.error_codes import ErrorCode, validation_error, resource_error
from latentflow.kinds import (
    CondMode,
    CouplingKind,
    DatasetKind,
    EditMethod,
    FlowStepKind,
    LossWeighting,
    PredSpace,
    SolverMethod,
)

logger = logging.getLogger(__name__)


class FlowStepSampler(BaseModel):
    """Distribution of training flow steps."""
    model_config = ConfigDict(frozen=True)

    kind: FlowStepKind = Field(default=FlowStepKind.LOGIT_NORMAL, description="uniform or logit_normal")
    m: float = Field(default=0.0, description="Location of the underlying normal")
    s: float = Field(default=1.0, description="Scale of the underlying normal")

    @field_validator("s")
    @classmethod
    def validate_scale(cls, v):
        if v <= 0:
            raise ValueError("Logit-normal scale s must be positive")
        return v


class MlpConfig(BaseModel):
    """Shape of the trainable velocity network."""
    model_config = ConfigDict(frozen=True)

    L: int = Field(default=1, ge=1, description="Sequence length")
    d: int = Field(default=2, ge=1, description="Channel count")
    num_classes: int = Field(default=2, ge=1, description="Number of class labels")
    hidden_layers: int = Field(default=3, ge=1, description="Hidden layer count")
    width: int = Field(default=256, ge=1, description="Hidden layer width")
    emb_dim: int = Field(default=16, ge=1, description="Class embedding width")
    n_freqs: int = Field(default=6, ge=0, description="Sinusoidal flow-step frequencies")
    seed: int = Field(default=0, ge=0, description="Initialization seed")


class OptimizerConfig(BaseModel):
    """Decoupled-weight-decay adaptive-moment optimizer."""
    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=1e-3, gt=0, description="Peak learning rate")
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.95, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    grad_clip: float = Field(default=1.0, gt=0, description="Global gradient-norm clip")
    warmup_steps: int = Field(default=100, ge=0, description="Linear warmup, constant afterwards")


class EmaConfig(BaseModel):
    """Exponential moving average of parameters."""
    model_config = ConfigDict(frozen=True)

    decay: float = Field(default=0.99, gt=0, lt=1)
    interval: int = Field(default=10, ge=1, description="Steps between EMA updates")


class TrainConfig(BaseModel):
    """Training loop configuration."""
    model_config = ConfigDict(frozen=True)

    steps: int = Field(default=5000, ge=0)
    batch_size: int = Field(default=128, ge=1)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    dropout_p: float = Field(default=0.2, ge=0, le=1, description="Probability a condition becomes null")
    sampler: FlowStepSampler = Field(default_factory=FlowStepSampler)
    coupling: CouplingKind = Field(default=CouplingKind.OT)
    ema: EmaConfig = Field(default_factory=EmaConfig)
    loss_weighting: LossWeighting = Field(default=LossWeighting.NONE)
    seed: int = Field(default=0, ge=0)
    log_every: int = Field(default=50, ge=1)


class SolverConfig(BaseModel):
    """Uniform-grid ODE solver."""
    model_config = ConfigDict(frozen=True)

    method: SolverMethod = Field(default=SolverMethod.MIDPOINT)
    num_steps: int = Field(default=32, ge=1)


class InversionConfig(BaseModel):
    """Regularized inversion settings; defaults are the published ones."""
    model_config = ConfigDict(frozen=True)

    t_edit: float = Field(default=0.04, ge=0, lt=1, description="Flow step where inversion stops")
    S: int = Field(default=25, ge=1, description="Backward steps")
    K: int = Field(default=4, ge=1, description="Inner iterations per step")
    w: Optional[Tuple[float, ...]] = Field(default=None, description="Iterate weights, default k-1, or 1 for K=1")
    lambda_kl: float = Field(default=0.2, ge=0, description="Patch-KL gradient weight")
    kl_floor: float = Field(default=0.1, ge=0, description="Patch variance floor as a fraction of the reference patch mean square")
    cond_mode: CondMode = Field(default=CondMode.ORIGINAL)
    pred_space: PredSpace = Field(default=PredSpace.VELOCITY)
    literal_mixture: bool = Field(default=True, description="Build the reference mixture with t instead of t - dt")
    patch: Tuple[int, int] = Field(default=(4, 4))

    @model_validator(mode="before")
    @classmethod
    def default_weights(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("w") is None:
            data = dict(data)
            K = int(data.get("K", 4))
            data["w"] = (1.0,) if K == 1 else tuple(float(k) for k in range(K))
        return data

    @model_validator(mode="after")
    def check_weights(self):
        if len(self.w) != self.K:
            raise ValueError(f"w needs K={self.K} weights, got {len(self.w)}")
        if any(v < 0 for v in self.w):
            raise ValueError("Iterate weights must be non-negative")
        if min(self.patch) < 1:
            raise ValueError("Patch dimensions must be >= 1")
        return self

    @property
    def dt(self) -> float:
        return (1.0 - self.t_edit) / self.S


class GuidanceConfig(BaseModel):
    """Classifier-free guidance."""
    model_config = ConfigDict(frozen=True)

    scale: float = Field(default=5.0, ge=0)
    enabled: bool = Field(default=True)


class DatasetSpec(BaseModel):
    """Synthetic dataset description."""
    model_config = ConfigDict(frozen=True)

    kind: DatasetKind = Field(default=DatasetKind.GAUSSIANS)
    classes: int = Field(default=2, ge=2)
    L: int = Field(default=1, ge=1)
    d: int = Field(default=2, ge=1)
    n_per_class: int = Field(default=500, ge=1)
    seed: int = Field(default=0, ge=0)
    radius: float = Field(default=4.0, gt=0, description="Circle radius of the class means")
    sigma: float = Field(default=0.5, gt=0, description="Per-class standard deviation")
    noise: float = Field(default=0.1, ge=0, description="Observation noise of curve datasets")


class EditConfig(BaseModel):
    """Editing pipeline selection."""
    model_config = ConfigDict(frozen=True)

    method: EditMethod = Field(default=EditMethod.REGULARIZED)
    source_label: Optional[int] = Field(default=0, ge=0)
    target_label: int = Field(default=1, ge=0)
    blend_label: Optional[int] = Field(default=None, ge=0)
    blend_alpha: float = Field(default=0.0, ge=0, le=1)


class RunConfig(BaseModel):
    """The complete, resolved configuration of a run."""
    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    model: MlpConfig = Field(default_factory=MlpConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    edit: EditConfig = Field(default_factory=EditConfig)
    splits: Tuple[float, float, float] = Field(default=(0.8, 0.1, 0.1))

    @model_validator(mode="before")
    @classmethod
    def align_model_with_dataset(cls, data: Any) -> Any:
        # the network input shape follows the dataset
        if not isinstance(data, dict):
            return data
        dataset = data.get("dataset", {})
        if not isinstance(dataset, DatasetSpec):
            dataset = DatasetSpec.model_validate(dataset)
        model = data.get("model", {})
        model = model.model_dump() if isinstance(model, MlpConfig) else dict(model)
        model.update(L=dataset.L, d=dataset.d, num_classes=dataset.classes)
        return {**data, "dataset": dataset, "model": model}


# Short keys mapped into the config tree
KEY_ALIASES: Dict[str, str] = {
    "flowstep.": "train.sampler.",
    "coupling.kind": "train.coupling",
    "ema.": "train.ema.",
    "optimizer.": "train.optimizer.",
}


def _canonical_key(key: str) -> str:
    key = key.strip()
    for prefix, target in KEY_ALIASES.items():
        if prefix.endswith("."):
            if key.startswith(prefix):
                return target + key[len(prefix):]
        elif key == prefix:
            return target
    return key


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if "," in raw:
            return [_parse_value(part) for part in raw.split(",")]
        return raw


def _set_dotted(tree: Dict[str, Any], key: str, value: Any) -> None:
    parts = _canonical_key(key).split(".")
    node = tree
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def _flatten(tree: Dict[str, Any], prefix: str = "") -> Iterable[Tuple[str, Any]]:
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, dotted + ".")
        else:
            yield dotted, value


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse a config file body into a nested dict.

    Args:
        text: JSON object, or `key = value` lines with `#` comments

    Returns:
        Nested dictionary with canonical keys
    """
    stripped = text.strip()
    tree: Dict[str, Any] = {}
    if stripped.startswith("{"):
        for key, value in _flatten(json.loads(stripped)):
            _set_dotted(tree, key, value)
        return tree
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise validation_error(
                ErrorCode.INVALID_CONFIG,
                f"Config line {lineno} is not 'key = value': {line!r}",
                field="config"
            )
        key, value = line.split("=", 1)
        _set_dotted(tree, key, _parse_value(value))
    return tree


def apply_overrides(tree: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `key=value` overrides on top of a parsed tree."""
    for item in overrides:
        if "=" not in item:
            raise validation_error(
                ErrorCode.INVALID_CONFIG,
                f"Override must look like key=value, got {item!r}",
                field="--set"
            )
        key, value = item.split("=", 1)
        _set_dotted(tree, key, _parse_value(value))
    return tree


def build_config(tree: Dict[str, Any]) -> RunConfig:
    """Validate a nested dict into a RunConfig."""
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(p) for p in first.get("loc", ()))
        raise validation_error(
            ErrorCode.INVALID_CONFIG,
            f"Invalid configuration at '{location}': {first.get('msg')}",
            field=location or None,
            details={"errors": len(e.errors())}
        ) from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    defaults: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Load a run configuration.

    Args:
        path: Optional config file (key-value or JSON)
        overrides: `key=value` strings applied after the file
        defaults: Dotted-key values applied before the file

    Returns:
        Fully resolved RunConfig
    """
    tree: Dict[str, Any] = {}
    for key, value in (defaults or {}).items():
        _set_dotted(tree, key, value)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise resource_error(ErrorCode.INVALID_CONFIG, f"Config file not found: {path}", field="--config")
        for key, value in _flatten(parse_config_text(path.read_text(encoding="utf-8"))):
            _set_dotted(tree, key, value)
        logger.info(f"Loaded config from {path}")
    apply_overrides(tree, overrides)
    return build_config(tree)


def config_to_dict(cfg: BaseModel) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")


def config_hash(cfg: Union[BaseModel, Dict[str, Any]]) -> str:
    """Stable sha256 of the canonical JSON form of a config."""
    payload = config_to_dict(cfg) if isinstance(cfg, BaseModel) else cfg
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def updated(cfg: BaseModel, **changes: Any) -> BaseModel:
    """Validated copy of a config with some fields replaced."""
    return type(cfg).model_validate({**cfg.model_dump(), **changes})
