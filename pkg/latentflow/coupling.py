"""
Minibatch coupling between data and noise batches.

ot_couple solves the exact assignment problem on the B x B matrix of
squared distances (scipy's Jonker-Volgenant solver). For small batches
the optimum is refined to the lexicographically smallest optimal map so
results do not depend on solver internals.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from latentflow.core import Batch, LatentSeq
from latentflow.error_codes import ErrorCode, validation_error
from latentflow.settings import settings

logger = logging.getLogger(__name__)

BatchLike = Union[Batch, np.ndarray, Sequence[LatentSeq]]

# Relative tolerance when comparing assignment costs during tie refinement
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Permutation:
    """Bijection over [0, B); map[i] is the noise index paired with data item i."""

    map: Tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(i) for i in self.map)
        if sorted(m) != list(range(len(m))):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Not a permutation of [0, {len(m)}): {list(m)[:16]}",
                field="map"
            )
        object.__setattr__(self, "map", m)

    @classmethod
    def identity(cls, size: int) -> "Permutation":
        return cls(tuple(range(size)))

    def __len__(self) -> int:
        return len(self.map)

    @property
    def is_identity(self) -> bool:
        return self.map == tuple(range(len(self.map)))

    def apply(self, items: np.ndarray) -> np.ndarray:
        """Reorder a (B, ...) array so row i holds items[map[i]]."""
        return np.asarray(items)[np.asarray(self.map, dtype=np.int64)]


def _stack(items: BatchLike, name: str) -> np.ndarray:
    if isinstance(items, Batch):
        arr = items.data
    elif isinstance(items, np.ndarray):
        arr = np.asarray(items, dtype=np.float64)
    else:
        arr = np.stack([s.data if isinstance(s, LatentSeq) else np.asarray(s, dtype=np.float64) for s in items])
    if arr.ndim < 2 or arr.shape[0] < 1:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, f"{name} must be a non-empty batch", field=name)
    return arr.reshape(arr.shape[0], -1)


def _aligned(X: BatchLike, E: BatchLike) -> Tuple[np.ndarray, np.ndarray]:
    xa, ea = _stack(X, "X"), _stack(E, "E")
    if xa.shape != ea.shape:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Data and noise batches differ: {xa.shape} vs {ea.shape}",
            field="E",
            details={"data_shape": list(xa.shape), "noise_shape": list(ea.shape)}
        )
    return xa, ea


def cost_matrix(X: BatchLike, E: BatchLike) -> np.ndarray:
    """B x B matrix of squared Euclidean distances, in double precision."""
    xa, ea = _aligned(X, E)
    return cdist(xa, ea, metric="sqeuclidean")


def pair_cost(X: BatchLike, E: BatchLike, P: Optional[Permutation] = None) -> float:
    """
    Total squared distance sum_i ||x_i - e_P(i)||^2.

    Args:
        X: Data batch
        E: Noise batch of the same size and shape
        P: Pairing; identity when omitted

    Returns:
        Squared Frobenius cost of the pairing
    """
    xa, ea = _aligned(X, E)
    if P is None:
        P = Permutation.identity(xa.shape[0])
    if len(P) != xa.shape[0]:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Permutation has {len(P)} entries for a batch of {xa.shape[0]}",
            field="P"
        )
    diff = xa - P.apply(ea)
    return float(np.sum(diff * diff))


def _assignment_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _lexicographic_refine(cost: np.ndarray, optimum: float) -> Tuple[int, ...]:
    """Smallest optimal map: fix rows in order, taking the lowest column that keeps the optimum."""
    B = cost.shape[0]
    free_cols = list(range(B))
    chosen = []
    spent = 0.0
    tol = _TIE_RTOL * max(1.0, abs(optimum))
    for i in range(B):
        for j in free_cols:
            rest_cols = [c for c in free_cols if c != j]
            rest = _assignment_cost(cost[np.ix_(range(i + 1, B), rest_cols)])
            if spent + cost[i, j] + rest <= optimum + tol:
                chosen.append(j)
                spent += cost[i, j]
                free_cols = rest_cols
                break
    return tuple(chosen)


def ot_couple(X: BatchLike, E: BatchLike, tiebreak_max_batch: Optional[int] = None) -> Permutation:
    """
    Exact minibatch optimal-transport pairing.

    Args:
        X: Data batch
        E: Noise batch
        tiebreak_max_batch: Largest B refined to the lexicographically
            smallest optimal map (settings default)

    Returns:
        Permutation minimizing pair_cost(X, E, P)
    """
    cost = cost_matrix(X, E)
    B = cost.shape[0]
    if B == 1:
        return Permutation((0,))
    rows, cols = linear_sum_assignment(cost)
    limit = settings.tiebreak_max_batch if tiebreak_max_batch is None else tiebreak_max_batch
    if B <= limit:
        optimum = float(cost[rows, cols].sum())
        refined = _lexicographic_refine(cost, optimum)
        if len(refined) == B:
            return Permutation(refined)
        logger.debug("Tie refinement fell short of the optimum, keeping solver map")
    mapping = np.empty(B, dtype=np.int64)
    mapping[rows] = cols
    return Permutation(tuple(mapping.tolist()))


def independent_couple(X: BatchLike, E: BatchLike) -> Permutation:
    """Identity pairing (noise drawn independently of data)."""
    xa, _ = _aligned(X, E)
    return Permutation.identity(xa.shape[0])
