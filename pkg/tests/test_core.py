"""
Tests for the domain types and the mixture algebra.
"""

import numpy as np
import pytest

from latentflow.core import (
    Batch,
    Condition,
    FlowStep,
    LatentSeq,
    derive_rng,
    make_rng,
    mix,
    sample_noise,
    target_velocity,
)
from latentflow.error_codes import ErrorCode, LatentFlowError
from latentflow.kinds import ConditionKind


class TestMix:
    """Test the straight mixture path."""

    def test_midpoint(self):
        """Half way between data and noise."""
        out = mix(LatentSeq([[1.0, 0.0]]), LatentSeq([[0.0, 1.0]]), FlowStep(0.5))
        assert isinstance(out, LatentSeq)
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_endpoints(self, rng):
        """t=0 gives the noise and t=1 the data."""
        x = rng.standard_normal((3, 2))
        eps = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(mix(x, eps, 0.0), eps)
        np.testing.assert_array_equal(mix(x, eps, 1.0), x)

    def test_per_item_steps(self, rng):
        """A vector of steps applies one t per batch item."""
        x = rng.standard_normal((2, 1, 2))
        eps = rng.standard_normal((2, 1, 2))
        out = mix(x, eps, np.array([0.0, 1.0]))
        np.testing.assert_array_equal(out[0], eps[0])
        np.testing.assert_array_equal(out[1], x[1])

    def test_shape_mismatch(self):
        """Mismatched shapes are rejected."""
        with pytest.raises(LatentFlowError) as exc:
            mix(np.zeros((2, 2)), np.zeros((2, 3)), 0.5)
        assert exc.value.code == ErrorCode.SHAPE_MISMATCH
        assert exc.value.exit_code == 2


class TestTargetVelocity:
    """Test the regression target."""

    def test_zero_when_equal(self):
        np.testing.assert_array_equal(target_velocity(LatentSeq([[1.0, 2.0]]), LatentSeq([[1.0, 2.0]])).data, [[0.0, 0.0]])

    def test_scalar_difference(self):
        np.testing.assert_array_equal(target_velocity(np.array([[3.0]]), np.array([[1.0]])), [[2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(LatentFlowError):
            target_velocity(np.zeros((1, 2)), np.zeros((2, 1)))


class TestSampleNoise:
    """Test noise draws."""

    def test_deterministic(self):
        """Same seed, same draws."""
        a = sample_noise(4, 3, make_rng(7))
        b = sample_noise(4, 3, make_rng(7))
        assert a == b

    def test_moments(self):
        """Standard normal moments at 10^5 draws."""
        draws = sample_noise(1, 1, make_rng(1), batch=100_000).reshape(-1)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.02

    def test_scalar(self):
        """L=1, d=1 gives one finite value."""
        z = sample_noise(1, 1, make_rng(0))
        assert z.shape == (1, 1)
        assert np.isfinite(z.data).all()

    def test_invalid_dims(self):
        with pytest.raises(LatentFlowError) as exc:
            sample_noise(0, 2, make_rng(0))
        assert exc.value.field == "L"

    def test_derived_streams_differ(self):
        """Different keys give independent streams."""
        a = derive_rng(3, 0).standard_normal(4)
        b = derive_rng(3, 1).standard_normal(4)
        c = derive_rng(3, 0).standard_normal(4)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, c)


class TestTypes:
    """Test validation of the domain types."""

    def test_latent_seq_rejects_non_finite(self):
        with pytest.raises(LatentFlowError) as exc:
            LatentSeq([[np.nan, 1.0]])
        assert exc.value.code == ErrorCode.INVALID_ARGUMENT

    def test_latent_seq_promotes_vector(self):
        seq = LatentSeq([1.0, 2.0, 3.0])
        assert seq.shape == (1, 3)
        assert seq.L == 1 and seq.d == 3

    def test_latent_seq_is_immutable(self):
        seq = LatentSeq([[1.0, 2.0]])
        with pytest.raises(ValueError):
            seq.data[0, 0] = 5.0

    def test_flow_step_domain(self):
        with pytest.raises(LatentFlowError) as exc:
            FlowStep(1.5)
        assert exc.value.code == ErrorCode.DOMAIN_ERROR

    def test_conditions(self):
        """Constructors and descriptions."""
        assert Condition.null().is_null
        assert Condition.of_label(3).describe() == "class:3"
        assert Condition.of_embedding([0.1, 0.2]).describe() == "embedding[2]"
        assert Condition.of_label(1).kind == ConditionKind.CLASS_LABEL

    def test_negative_label_rejected(self):
        with pytest.raises(LatentFlowError):
            Condition.of_label(-1)

    def test_empty_embedding_rejected(self):
        with pytest.raises(LatentFlowError):
            Condition.of_embedding([])

    def test_batch_defaults_to_null_conditions(self, rng):
        batch = Batch(rng.standard_normal((3, 2, 2)))
        assert all(c.is_null for c in batch.conditions)
        np.testing.assert_array_equal(batch.labels, [-1, -1, -1])

    def test_batch_condition_count(self, rng):
        with pytest.raises(LatentFlowError) as exc:
            Batch(rng.standard_normal((3, 1, 2)), (Condition.null(),))
        assert exc.value.code == ErrorCode.SHAPE_MISMATCH

    def test_batch_from_items_requires_common_shape(self):
        items = [(LatentSeq([[1.0, 2.0]]), Condition.null()), (LatentSeq([[1.0, 2.0, 3.0]]), Condition.null())]
        with pytest.raises(LatentFlowError) as exc:
            Batch.from_items(items)
        assert exc.value.code == ErrorCode.SHAPE_MISMATCH

    def test_batch_subset(self, labelled_batch):
        sub = labelled_batch.subset([1, 3])
        assert sub.B == 2
        np.testing.assert_array_equal(sub.labels, [1, 1])
        np.testing.assert_array_equal(sub.data, labelled_batch.data[[1, 3]])
