"""
Toy-scale evaluation metrics.

- frechet_gaussian: Frechet distance between Gaussian fits of two sample sets
- lpaps: mean per-frame L2 distance between paired sequences
- adherence: oracle classifier probability of the requested class
"""

from typing import List, Optional, Sequence, Union
import logging
import math

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.linalg import eigh
from sklearn.linear_model import LogisticRegression

from latentflow.core import ArrayLike, Batch, Condition, LatentSeq, as_array
from latentflow.error_codes import ErrorCode, shape_mismatch, validation_error
from latentflow.kinds import ConditionKind
from latentflow.ode import Trajectory, straightness

logger = logging.getLogger(__name__)

# Diagonal added to both covariances
COVARIANCE_JITTER = 1e-6

SampleSet = Union[Batch, np.ndarray, Sequence[LatentSeq]]


def _stacked(samples: SampleSet) -> np.ndarray:
    if isinstance(samples, Batch):
        return samples.data
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=np.float64)
    return np.stack([as_array(s) for s in samples])


def _features(samples: SampleSet) -> np.ndarray:
    arr = _stacked(samples)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr.reshape(arr.shape[0], -1)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_gaussian(A: SampleSet, B: SampleSet) -> float:
    """
    ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^(1/2)) on flattened samples.

    The trace of the matrix root is taken from the eigenvalues of the
    symmetric product S_A^(1/2) S_B S_A^(1/2), negatives clamped to 0.
    """
    fa, fb = _features(A), _features(B)
    if fa.shape[1] != fb.shape[1]:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Sample sets have feature sizes {fa.shape[1]} and {fb.shape[1]}",
            field="B"
        )
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "Each sample set needs at least 2 samples", field="A")
    dim = fa.shape[1]
    jitter = COVARIANCE_JITTER * np.eye(dim)
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(fa, rowvar=False)) + jitter
    cov_b = np.atleast_2d(np.cov(fb, rowvar=False)) + jitter
    root_a = _psd_sqrt(cov_a)
    product = root_a @ cov_b @ root_a
    cross = eigh(0.5 * (product + product.T), eigvals_only=True)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(cross, 0.0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def lpaps(x_a: ArrayLike, x_b: ArrayLike) -> Union[float, np.ndarray]:
    """
    Mean over frames of the per-frame L2 distance.

    Returns a float for single sequences, one value per item for batches.
    """
    a, b = as_array(x_a), as_array(x_b)
    if a.shape != b.shape:
        raise shape_mismatch("x_b", a.shape, b.shape)
    per_frame = np.linalg.norm(a - b, axis=-1)
    if a.ndim == 3:
        return per_frame.mean(axis=1)
    return float(per_frame.mean())


class OracleClassifier:
    """
    Multinomial logistic regression on flattened latents.

    A metric fixture fitted on held-out data, never on the generator's
    training split.
    """

    def __init__(self, C: float = 1.0, max_iter: int = 1000):
        self.model = LogisticRegression(C=C, max_iter=max_iter)
        self.num_classes = 0

    def fit(self, data: Batch) -> "OracleClassifier":
        labels = data.labels
        if np.any(labels < 0):
            raise validation_error(ErrorCode.INVALID_ARGUMENT, "Classifier needs class-labelled data", field="data")
        self.model.fit(_features(data), labels)
        self.num_classes = int(labels.max()) + 1
        logger.info(f"Fitted oracle classifier on {data.B} samples, {self.num_classes} classes")
        return self

    def predict_proba(self, x: SampleSet) -> np.ndarray:
        """(N, num_classes) class probabilities; rows sum to 1."""
        arr = x if not isinstance(x, LatentSeq) else x.data[None]
        raw = self.model.predict_proba(_features(arr))
        probs = np.zeros((raw.shape[0], self.num_classes))
        probs[:, self.model.classes_] = raw
        return probs

    def accuracy(self, data: Batch) -> float:
        return float(np.mean(np.argmax(self.predict_proba(data), axis=1) == data.labels))


def _label_of(c: Condition) -> int:
    if c.kind == ConditionKind.NULL:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, "Adherence needs a class condition, got null", field="c")
    if c.kind != ConditionKind.CLASS_LABEL:
        raise validation_error(
            ErrorCode.UNSUPPORTED_CONDITION,
            f"Adherence is defined for class labels, got {c.describe()}",
            field="c"
        )
    return int(c.label)


def adherence(
    x: ArrayLike,
    c: Union[Condition, Sequence[Condition]],
    classifier: OracleClassifier
) -> Union[float, np.ndarray]:
    """
    Classifier probability of the requested class.

    Returns a float for a single sequence, one value per item for a batch.
    """
    arr = as_array(x)
    single = arr.ndim == 2
    batch = arr[None] if single else arr
    conds = [c] * batch.shape[0] if isinstance(c, Condition) else list(c)
    if len(conds) != batch.shape[0]:
        raise validation_error(ErrorCode.SHAPE_MISMATCH, f"{len(conds)} conditions for {batch.shape[0]} samples", field="c")
    labels = np.array([_label_of(ci) for ci in conds])
    probs = classifier.predict_proba(batch)[np.arange(batch.shape[0]), labels]
    return float(probs[0]) if single else probs


class MetricsReport(BaseModel):
    """Aggregated evaluation of one run."""

    frechet: float = Field(..., ge=0, description="Frechet distance to the reference set")
    lpaps: Optional[float] = Field(default=None, ge=0, description="Mean per-frame L2 to the originals")
    adherence: Optional[float] = Field(default=None, ge=0, le=1, description="Mean classifier probability of the target class")
    straightness: Optional[float] = Field(default=None, ge=0, description="Mean trajectory straightness")
    nfe: int = Field(default=0, ge=0, description="Field evaluations spent")
    config_hash: str = Field(default="", description="sha256 of the resolved config")

    @field_validator("frechet", "lpaps", "adherence", "straightness")
    @classmethod
    def validate_finite(cls, v):
        if v is not None and not math.isfinite(v):
            raise ValueError("Metric values must be finite")
        return v


def evaluate_run(
    generated: SampleSet,
    reference: SampleSet,
    conditions: Sequence[Condition],
    classifier: Optional[OracleClassifier] = None,
    originals: Optional[SampleSet] = None,
    trajectory: Optional[Trajectory] = None,
    nfe: int = 0,
    config_hash: str = ""
) -> MetricsReport:
    """
    Assemble a MetricsReport.

    Args:
        generated: Generated or edited samples
        reference: Reference samples for the Frechet distance
        conditions: Condition each generated sample was produced under
        classifier: Oracle classifier; adherence is skipped without one
        originals: Paired originals for lpaps (edits only)
        trajectory: Recorded batched trajectory for straightness
        nfe: Evaluation count to report
        config_hash: Hash of the resolved config

    Returns:
        The report
    """
    gen = _stacked(generated)
    conds: List[Condition] = list(conditions)
    labelled = [i for i, c in enumerate(conds) if c.kind == ConditionKind.CLASS_LABEL]
    adh = None
    if classifier is not None and labelled:
        adh = float(np.mean(adherence(gen[labelled], [conds[i] for i in labelled], classifier)))
    lp = None
    if originals is not None:
        lp = float(np.mean(lpaps(gen, _stacked(originals))))
    report = MetricsReport(
        frechet=frechet_gaussian(gen, reference),
        lpaps=lp,
        adherence=adh,
        straightness=None if trajectory is None else straightness(trajectory),
        nfe=nfe,
        config_hash=config_hash,
    )
    logger.debug(f"Metrics: {report.model_dump()}")
    return report
