"""
Domain types and the flow-matching mixture algebra.

Latent sequences are L x d float64 arrays stored row-major (time by
channel). Operations accept either a LatentSeq or a raw array of shape
(L, d) / (B, L, d); raw arrays come back as raw arrays so batched code
can skip the wrapper.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from latentflow.error_codes import ErrorCode, validation_error, shape_mismatch
from latentflow.kinds import ConditionKind

logger = logging.getLogger(__name__)

ArrayLike = Union["LatentSeq", np.ndarray]


def make_rng(seed: Union[int, Sequence[int], np.random.SeedSequence]) -> np.random.Generator:
    """
    Build the toolkit's random generator.

    Philox is counter based, so a seed produces the same stream on every
    platform; normals come from numpy's ziggurat sampler on top of it.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, key...), e.g. one per sweep cell."""
    return make_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


@dataclass(frozen=True)
class LatentSeq:
    """An L x d latent sequence (x, eps, z_t or a velocity estimate)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"LatentSeq must be a non-empty L x d matrix, got shape {arr.shape}",
                field="data"
            )
        if not np.all(np.isfinite(arr)):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                "LatentSeq entries must be finite",
                field="data"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def L(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentSeq):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.shape, self.data.tobytes()))


@dataclass(frozen=True)
class FlowStep:
    """Interpolation coordinate t in [0, 1]; 0 is noise, 1 is data."""

    t: float

    def __post_init__(self):
        if not (0.0 <= float(self.t) <= 1.0):
            raise validation_error(
                ErrorCode.DOMAIN_ERROR,
                f"Flow step must lie in [0, 1], got {self.t}",
                field="t"
            )
        object.__setattr__(self, "t", float(self.t))

    def __float__(self) -> float:
        return self.t


@dataclass(frozen=True)
class Condition:
    """Conditioning signal: null, a class label, or an embedding vector."""

    kind: ConditionKind = ConditionKind.NULL
    label: Optional[int] = None
    embedding: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind == ConditionKind.CLASS_LABEL:
            if self.label is None or int(self.label) < 0:
                raise validation_error(
                    ErrorCode.INVALID_ARGUMENT,
                    f"Class label must be a non-negative integer, got {self.label}",
                    field="label"
                )
        if self.kind == ConditionKind.EMBEDDING:
            if not self.embedding:
                raise validation_error(
                    ErrorCode.INVALID_ARGUMENT,
                    "Embedding condition needs a non-empty vector",
                    field="embedding"
                )
            object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))

    @classmethod
    def null(cls) -> "Condition":
        return cls(ConditionKind.NULL)

    @classmethod
    def of_label(cls, label: int) -> "Condition":
        return cls(ConditionKind.CLASS_LABEL, label=int(label))

    @classmethod
    def of_embedding(cls, vector: Sequence[float]) -> "Condition":
        return cls(ConditionKind.EMBEDDING, embedding=tuple(vector))

    @property
    def is_null(self) -> bool:
        return self.kind == ConditionKind.NULL

    def describe(self) -> str:
        if self.kind == ConditionKind.CLASS_LABEL:
            return f"class:{self.label}"
        if self.kind == ConditionKind.EMBEDDING:
            return f"embedding[{len(self.embedding)}]"
        return "null"


@dataclass(frozen=True)
class Batch:
    """
    B latent sequences sharing (L, d), each with its condition.

    `data` holds the stacked (B, L, d) array; `items` exposes the
    (LatentSeq, Condition) pairs.
    """

    data: np.ndarray
    conditions: Tuple[Condition, ...] = field(default=())

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Batch data must have shape (B, L, d) with B >= 1, got {arr.shape}",
                field="data"
            )
        conditions = tuple(self.conditions) or tuple(Condition.null() for _ in range(arr.shape[0]))
        if len(conditions) != arr.shape[0]:
            raise validation_error(
                ErrorCode.SHAPE_MISMATCH,
                f"Batch has {arr.shape[0]} sequences but {len(conditions)} conditions",
                field="conditions"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "conditions", conditions)

    @classmethod
    def from_items(cls, items: Sequence[Tuple[LatentSeq, Condition]]) -> "Batch":
        if not items:
            raise validation_error(ErrorCode.INVALID_ARGUMENT, "Batch needs at least one item", field="items")
        shapes = {seq.shape for seq, _ in items}
        if len(shapes) != 1:
            raise validation_error(
                ErrorCode.SHAPE_MISMATCH,
                f"All sequences in a batch must share (L, d), got {sorted(shapes)}",
                field="items"
            )
        return cls(np.stack([seq.data for seq, _ in items]), tuple(c for _, c in items))

    @property
    def B(self) -> int:
        return self.data.shape[0]

    @property
    def L(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    @property
    def items(self) -> List[Tuple[LatentSeq, Condition]]:
        return [(LatentSeq(self.data[i]), self.conditions[i]) for i in range(self.B)]

    @property
    def labels(self) -> np.ndarray:
        """Integer labels with -1 for non-label conditions."""
        return np.array(
            [c.label if c.kind == ConditionKind.CLASS_LABEL else -1 for c in self.conditions],
            dtype=np.int64
        )

    def subset(self, indices: Sequence[int]) -> "Batch":
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(self.data[idx], tuple(self.conditions[i] for i in idx))

    def with_conditions(self, conditions: Sequence[Condition]) -> "Batch":
        return Batch(self.data, tuple(conditions))


def as_array(a: ArrayLike) -> np.ndarray:
    """Unwrap a LatentSeq; arrays pass through as float64."""
    if isinstance(a, LatentSeq):
        return a.data
    return np.asarray(a, dtype=np.float64)


def rewrap(template: ArrayLike, result: np.ndarray) -> ArrayLike:
    """Return `result` in the same wrapper type as `template`."""
    if isinstance(template, LatentSeq):
        return LatentSeq(result)
    return result


def as_time(t: Union[FlowStep, float]) -> float:
    return float(t.t) if isinstance(t, FlowStep) else float(t)


def _check_same_shape(x: np.ndarray, eps: np.ndarray, name: str = "eps") -> None:
    if x.shape != eps.shape:
        raise shape_mismatch(name, x.shape, eps.shape)


def mix(x: ArrayLike, eps: ArrayLike, t: Union[FlowStep, float, np.ndarray]) -> ArrayLike:
    """
    Point on the straight path between noise and data: t*x + (1-t)*eps.

    `t` may be an array of per-item steps for a (B, L, d) batch.
    """
    xa, ea = as_array(x), as_array(eps)
    _check_same_shape(xa, ea)
    if isinstance(t, np.ndarray) and t.ndim == 1:
        tt = t.reshape(-1, *([1] * (xa.ndim - 1)))
    else:
        tt = as_time(t)
    return rewrap(x, tt * xa + (1.0 - tt) * ea)


def target_velocity(x: ArrayLike, eps: ArrayLike) -> ArrayLike:
    """Regression target of flow matching: x - eps."""
    xa, ea = as_array(x), as_array(eps)
    _check_same_shape(xa, ea)
    return rewrap(x, xa - ea)


def sample_noise(L: int, d: int, rng: np.random.Generator, batch: Optional[int] = None) -> ArrayLike:
    """
    Standard normal latent of shape L x d (a LatentSeq), or a raw
    (batch, L, d) array when `batch` is given.
    """
    if L < 1 or d < 1:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"L and d must be positive, got L={L}, d={d}",
            field="L" if L < 1 else "d"
        )
    if batch is None:
        return LatentSeq(rng.standard_normal((L, d)))
    return rng.standard_normal((batch, L, d))
