"""
Test configuration for latentflow.
"""

from typing import List

import numpy as np
import pytest

from latentflow.config import DatasetSpec, MlpConfig
from latentflow.core import Batch, Condition, make_rng
from latentflow.data import make_dataset, oracle_for
from latentflow.dependencies import RunDependencies
from latentflow.metrics import OracleClassifier
from latentflow.storage import RunStorage
from latentflow.velocity import GaussianOracleField, MlpField, VelocityField


class ZeroField(VelocityField):
    """v = 0 for every input."""

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        return np.zeros_like(z)


class IdentityField(VelocityField):
    """v(z, t) = z."""

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        return z.copy()


class ConstantField(VelocityField):
    """v = value for conditioned items, null_value for null ones."""

    def __init__(self, value: float = 1.0, null_value: float = 0.0):
        self.value = value
        self.null_value = null_value

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        fill = np.array([self.null_value if c.is_null else self.value for c in conds])
        return np.broadcast_to(fill[:, None, None], z.shape).copy()


class TimeField(VelocityField):
    """v(z, t) = sin(3t) + t, independent of z."""

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        return np.broadcast_to((np.sin(3.0 * t) + t)[:, None, None], z.shape).copy()


@pytest.fixture
def rng():
    """Seeded generator."""
    return make_rng(0)


@pytest.fixture
def oracle_field():
    """Single-class oracle with mu=3, sigma=0.5 in d=2."""
    return GaussianOracleField(np.full((1, 2), 3.0), np.full((1, 2), 0.5))


@pytest.fixture
def toy_spec():
    """Two-class circle of Gaussians, small enough for unit tests."""
    return DatasetSpec(n_per_class=60, seed=0)


@pytest.fixture
def toy_data(toy_spec):
    """Labelled toy dataset."""
    return make_dataset(toy_spec)


@pytest.fixture
def two_class_oracle(toy_spec):
    """Closed-form field of the toy dataset."""
    return oracle_for(toy_spec)


@pytest.fixture
def classifier(toy_data):
    """Oracle classifier fitted on the toy dataset."""
    return OracleClassifier().fit(toy_data)


@pytest.fixture
def mlp_config():
    """Small network shape for the toy task."""
    return MlpConfig(L=1, d=2, num_classes=2, hidden_layers=2, width=16, emb_dim=4, n_freqs=2, seed=0)


@pytest.fixture
def small_mlp(mlp_config):
    """Freshly initialized network."""
    return MlpField(mlp_config)


@pytest.fixture
def labelled_batch(rng):
    """Four labelled items of shape (1, 2)."""
    conds = (Condition.of_label(0), Condition.of_label(1), Condition.null(), Condition.of_label(1))
    return Batch(rng.standard_normal((4, 1, 2)), conds)


@pytest.fixture
def run_deps(tmp_path):
    """Dependencies writing into a temporary run directory."""
    deps = RunDependencies(storage=RunStorage(tmp_path / "run"), seed=0, command="test")
    return deps
