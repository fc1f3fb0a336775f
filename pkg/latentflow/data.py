"""
Deterministic synthetic datasets.

- gaussians: class k ~ N(mu_k, sigma^2 I), mu_k on a circle of radius 4
  in the first two channels
- moons_like: interleaving half circles, one arc per class
- seq_sines: a sinusoid of frequency k + 1 over the flattened sequence
  with random phase plus N(0, noise^2) noise

Each class draws from its own stream spawned from the dataset seed, so a
spec always produces the same bytes.
"""

from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple, Union
import json
import logging

import numpy as np

from latentflow.config import DatasetSpec
from latentflow.core import Batch, Condition, make_rng
from latentflow.error_codes import ErrorCode, resource_error, validation_error
from latentflow.kinds import DatasetKind
from latentflow.lseq import load_lseq, save_lseq
from latentflow.velocity import GaussianOracleField

logger = logging.getLogger(__name__)


class Splits(NamedTuple):
    """Train / validation / evaluation partitions; empty partitions are None."""
    train: Optional[Batch]
    validation: Optional[Batch]
    eval: Optional[Batch]


def class_means(spec: DatasetSpec) -> np.ndarray:
    """(classes, d) means of the gaussians dataset, evenly spaced on the circle."""
    angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
    mu = np.zeros((spec.classes, spec.d))
    mu[:, 0] = spec.radius * np.cos(angles)
    if spec.d > 1:
        mu[:, 1] = spec.radius * np.sin(angles)
    return mu


def oracle_for(spec: DatasetSpec) -> GaussianOracleField:
    """Exact velocity field of a gaussians dataset."""
    if spec.kind != DatasetKind.GAUSSIANS:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Closed-form oracle exists for gaussians only, got {spec.kind.value}",
            field="dataset.kind"
        )
    return GaussianOracleField(class_means(spec), np.full((spec.classes, spec.d), spec.sigma))


def _gaussians(spec: DatasetSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    mu = class_means(spec)[k]
    return mu + spec.sigma * rng.standard_normal((spec.n_per_class, spec.L, spec.d))


def _moons(spec: DatasetSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi, size=(spec.n_per_class, spec.L))
    if k % 2 == 0:
        x, y = np.cos(theta), np.sin(theta)
    else:
        x, y = 1.0 - np.cos(theta), 0.5 - np.sin(theta)
    # arcs beyond the first pair move right
    x = x + 3.0 * (k // 2)
    scale = spec.radius / 2.0
    out = spec.noise * rng.standard_normal((spec.n_per_class, spec.L, spec.d))
    out[..., 0] += scale * x
    if spec.d > 1:
        out[..., 1] += scale * y
    return out


def _sines(spec: DatasetSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    n = spec.L * spec.d
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(spec.n_per_class, 1))
    grid = np.arange(n)[None, :] / n
    wave = np.sin(2.0 * np.pi * (k + 1) * grid + phase)
    wave = wave + spec.noise * rng.standard_normal(wave.shape)
    return wave.reshape(spec.n_per_class, spec.L, spec.d)


_GENERATORS = {
    DatasetKind.GAUSSIANS: _gaussians,
    DatasetKind.MOONS_LIKE: _moons,
    DatasetKind.SEQ_SINES: _sines,
}


def make_dataset(spec: DatasetSpec, rng: Optional[np.random.Generator] = None) -> Batch:
    """
    Generate a labelled dataset.

    Args:
        spec: Dataset description
        rng: Optional generator; the spec seed is used when omitted

    Returns:
        Batch of classes * n_per_class items, class-major order
    """
    root = np.random.SeedSequence(spec.seed) if rng is None else np.random.SeedSequence(int(rng.integers(0, 2**63 - 1)))
    streams = root.spawn(spec.classes)
    generator = _GENERATORS[spec.kind]
    parts = [generator(spec, k, make_rng(streams[k])) for k in range(spec.classes)]
    conditions = tuple(Condition.of_label(k) for k in range(spec.classes) for _ in range(spec.n_per_class))
    data = np.concatenate(parts, axis=0)
    logger.debug(f"Generated {spec.kind.value} dataset: {data.shape}")
    return Batch(data, conditions)


def split(dataset: Batch, fractions: Sequence[float], seed: int) -> Splits:
    """
    Deterministic shuffled split.

    Args:
        dataset: Items to partition
        fractions: (train, validation, eval) shares summing to 1
        seed: Shuffle seed

    Returns:
        Disjoint partitions covering the dataset
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0, atol=1e-9):
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"Split fractions must be three non-negative numbers summing to 1, got {list(fractions)}",
            field="splits"
        )
    order = make_rng(seed).permutation(dataset.B)
    n_train = int(round(fr[0] * dataset.B))
    n_val = min(int(round(fr[1] * dataset.B)), dataset.B - n_train)
    bounds = [0, n_train, n_train + n_val, dataset.B]
    parts = [order[bounds[i]:bounds[i + 1]] for i in range(3)]
    return Splits(*[dataset.subset(np.sort(p)) if len(p) else None for p in parts])


def dataset_sidecar(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_dataset(path: Union[str, Path], dataset: Batch, spec: Optional[DatasetSpec] = None) -> Path:
    """Write the latents as LSEQ and the labels (plus spec) as a JSON sidecar."""
    path = save_lseq(path, dataset.data)
    meta: Dict[str, Any] = {"labels": dataset.labels.tolist()}
    if spec is not None:
        meta["spec"] = spec.model_dump(mode="json")
    dataset_sidecar(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return path


def load_dataset(path: Union[str, Path], field: str = "--input") -> Tuple[Batch, Optional[DatasetSpec]]:
    """Read a dataset written by save_dataset; labels default to null without a sidecar."""
    data = load_lseq(path, field=field)
    side = dataset_sidecar(path)
    if not side.exists():
        return Batch(data), None
    meta = json.loads(side.read_text(encoding="utf-8"))
    labels = meta.get("labels", [])
    if len(labels) != data.shape[0]:
        raise resource_error(
            ErrorCode.INVALID_FORMAT,
            f"Sidecar lists {len(labels)} labels for {data.shape[0]} items",
            field=field
        )
    conditions = tuple(Condition.null() if k < 0 else Condition.of_label(k) for k in labels)
    spec = DatasetSpec.model_validate(meta["spec"]) if "spec" in meta else None
    return Batch(data, conditions), spec
