"""
Tests for the flow-matching loss, the optimizer loop and gradient checks.
"""

import math

import numpy as np
import pytest

from latentflow.config import EmaConfig, FlowStepSampler, OptimizerConfig, TrainConfig
from latentflow.core import Batch, Condition, make_rng
from latentflow.error_codes import ErrorCode, LatentFlowError
from latentflow.kinds import CouplingKind, LossWeighting
from latentflow.train import (
    LOG_COLUMNS,
    TrainState,
    analytic_gradient,
    finite_difference_gradient,
    fit,
    fm_loss,
    fm_loss_and_grad,
    grad_check,
    learning_rate,
    sample_entries,
    train_step,
    update_ema,
    validation_loss,
)
from tests.conftest import ZeroField


@pytest.fixture
def tiny_train():
    """Short run on a narrow network."""
    return TrainConfig(steps=12, batch_size=16, log_every=5, seed=3)


class TestFmLoss:
    """Test the velocity regression objective."""

    def test_zero_when_data_is_noise(self, rng):
        x = rng.standard_normal((5, 1, 2))
        assert fm_loss(ZeroField(), Batch(x), x, rng.uniform(size=5)) == 0.0

    def test_hand_computed(self):
        """Zero prediction against target (2, 0) averaged over L d = 2."""
        batch = Batch(np.array([[[2.0, 0.0]]]))
        assert fm_loss(ZeroField(), batch, np.zeros((1, 1, 2)), [0.3]) == pytest.approx(2.0)

    def test_density_weighting(self):
        batch = Batch(np.array([[[2.0, 0.0]]]))
        loss = fm_loss(ZeroField(), batch, np.zeros((1, 1, 2)), [0.5], weighting=LossWeighting.LOGIT_NORMAL_PDF)
        assert loss == pytest.approx(2.0 * 4.0 / math.sqrt(2.0 * math.pi))

    def test_noise_shape_mismatch(self, rng):
        with pytest.raises(LatentFlowError) as exc:
            fm_loss(ZeroField(), Batch(rng.standard_normal((2, 1, 2))), rng.standard_normal((3, 1, 2)), [0.5, 0.5])
        assert exc.value.code == ErrorCode.SHAPE_MISMATCH

    def test_step_count_mismatch(self, rng):
        with pytest.raises(LatentFlowError):
            fm_loss(ZeroField(), Batch(rng.standard_normal((2, 1, 2))), rng.standard_normal((2, 1, 2)), [0.5])

    def test_matches_backprop_loss(self, small_mlp, labelled_batch, rng):
        eps = rng.standard_normal(labelled_batch.data.shape)
        t = rng.uniform(size=labelled_batch.B)
        loss, _ = fm_loss_and_grad(small_mlp, labelled_batch.data, eps, t, list(labelled_batch.conditions))
        assert loss == pytest.approx(fm_loss(small_mlp, labelled_batch, eps, t), rel=1e-12)

    def test_zero_weights_zero_gradients(self, small_mlp, labelled_batch, rng):
        eps = rng.standard_normal(labelled_batch.data.shape)
        _, grads = fm_loss_and_grad(
            small_mlp, labelled_batch.data, eps, rng.uniform(size=4), list(labelled_batch.conditions), np.zeros(4)
        )
        assert all(np.all(g == 0.0) for g in grads.values())


class TestGradientCheck:
    """Test backprop against finite differences."""

    def test_grad_check_passes(self, small_mlp, toy_data):
        assert grad_check(small_mlp, toy_data.subset(np.arange(0, 120, 6)), num_params=60) < 1e-4

    def test_second_order_finite_differences(self, small_mlp, toy_data):
        """Halving h cuts the central-difference error by about four."""
        data = toy_data.subset(np.arange(0, 120, 10))
        entries = [("W0", i) for i in range(0, small_mlp.params["W0"].size, 3)]
        analytic = analytic_gradient(small_mlp, data, entries)
        err_h = np.sum(np.abs(finite_difference_gradient(small_mlp, data, entries, h=1e-3) - analytic))
        err_2h = np.sum(np.abs(finite_difference_gradient(small_mlp, data, entries, h=2e-3) - analytic))
        assert 3.0 <= err_2h / err_h <= 5.0

    def test_finite_differences_restore_params(self, small_mlp, toy_data):
        before = {k: v.copy() for k, v in small_mlp.params.items()}
        finite_difference_gradient(small_mlp, toy_data.subset([0, 1]), [("W1", 0), ("emb", 2)])
        for name, value in before.items():
            np.testing.assert_array_equal(small_mlp.params[name], value)

    def test_sample_entries(self, small_mlp):
        entries = sample_entries(small_mlp, 50, make_rng(0))
        assert len(set(entries)) == 50
        for name, index in entries:
            assert 0 <= index < small_mlp.params[name].size


class TestTrainStep:
    """Test a single optimizer step."""

    def test_full_dropout_nulls_conditions(self, small_mlp, toy_data):
        cfg = TrainConfig(dropout_p=1.0)
        state = train_step(TrainState.create(small_mlp, 0), toy_data.subset(np.arange(8)), cfg)
        assert all(c.is_null for c in state.last["conditions"])

    def test_no_dropout_keeps_conditions(self, small_mlp, toy_data):
        batch = toy_data.subset(np.arange(8))
        state = train_step(TrainState.create(small_mlp, 0), batch, TrainConfig(dropout_p=0.0))
        assert state.last["conditions"] == list(batch.conditions)

    def test_ot_never_costs_more(self, small_mlp, toy_data):
        cfg = TrainConfig(coupling=CouplingKind.OT)
        state = TrainState.create(small_mlp, 0)
        rng = make_rng(5)
        for _ in range(10):
            train_step(state, toy_data.subset(rng.choice(toy_data.B, 16, replace=False)), cfg)
            assert state.last["pair_cost"] <= state.last["independent_cost"] + 1e-9

    def test_independent_coupling_costs_match(self, small_mlp, toy_data):
        state = train_step(TrainState.create(small_mlp, 0), toy_data.subset(np.arange(8)),
                           TrainConfig(coupling=CouplingKind.INDEPENDENT))
        assert state.last["pair_cost"] == state.last["independent_cost"]

    def test_ema_interval(self, small_mlp, toy_data):
        cfg = TrainConfig(ema=EmaConfig(decay=0.99, interval=10))
        state = TrainState.create(small_mlp, 0)
        batch = toy_data.subset(np.arange(8))
        for _ in range(9):
            train_step(state, batch, cfg)
        assert state.ema_updates == 0
        train_step(state, batch, cfg)
        assert state.ema_updates == 1

    def test_non_finite_parameters_diverge(self, small_mlp, toy_data):
        small_mlp.params["W0"][0, 0] = np.nan
        with pytest.raises(LatentFlowError) as exc:
            train_step(TrainState.create(small_mlp, 0), toy_data.subset(np.arange(4)), TrainConfig())
        assert exc.value.code == ErrorCode.TRAINING_DIVERGED

    def test_parameters_move(self, small_mlp, toy_data):
        before = small_mlp.params["W0"].copy()
        train_step(TrainState.create(small_mlp, 0), toy_data.subset(np.arange(8)), TrainConfig())
        assert not np.array_equal(before, small_mlp.params["W0"])


class TestEma:
    """Test the parameter moving average."""

    def test_frozen_gap_decays_geometrically(self, small_mlp):
        state = TrainState.create(small_mlp, 0)
        for name in state.ema:
            state.ema[name] = state.params[name] + 1.0
        for _ in range(7):
            update_ema(state, 0.99)
        gap = state.ema["b0"] - state.params["b0"]
        np.testing.assert_allclose(gap, 0.99 ** 7, rtol=1e-12)
        assert state.ema_updates == 7

    def test_create_seeds_ema_with_params(self, small_mlp):
        state = TrainState.create(small_mlp, 0)
        for name, p in state.params.items():
            np.testing.assert_array_equal(state.ema[name], p)
            assert state.ema[name] is not p


class TestLearningRate:
    """Test the warmup schedule."""

    def test_warmup(self):
        cfg = TrainConfig(optimizer=OptimizerConfig(lr=1e-3, warmup_steps=100))
        assert learning_rate(0, cfg) == pytest.approx(1e-5)
        assert learning_rate(49, cfg) == pytest.approx(5e-4)
        assert learning_rate(99, cfg) == pytest.approx(1e-3)
        assert learning_rate(5000, cfg) == pytest.approx(1e-3)

    def test_no_warmup(self):
        cfg = TrainConfig(optimizer=OptimizerConfig(lr=2e-3, warmup_steps=0))
        assert learning_rate(0, cfg) == 2e-3


class TestFit:
    """Test the training loop."""

    def test_log_table(self, mlp_config, toy_data, tiny_train):
        _, log = fit(toy_data, mlp_config, tiny_train)
        assert list(log.columns) == LOG_COLUMNS
        assert log["step"].tolist() == [1, 5, 10, 12]
        assert np.all(np.isfinite(log["loss"]))

    def test_deterministic(self, mlp_config, toy_data, tiny_train):
        state_a, log_a = fit(toy_data, mlp_config, tiny_train)
        state_b, log_b = fit(toy_data, mlp_config, tiny_train)
        for name in state_a.params:
            np.testing.assert_array_equal(state_a.params[name], state_b.params[name])
        assert log_a.equals(log_b)

    def test_progress_callback(self, mlp_config, toy_data, tiny_train):
        calls = []
        fit(toy_data, mlp_config, tiny_train, progress=lambda step, row: calls.append(step))
        assert calls == [1, 5, 10, 12]

    def test_smoothed_loss(self, mlp_config, toy_data):
        state, log = fit(toy_data, mlp_config, TrainConfig(steps=2, batch_size=8, log_every=1))
        first, second = log["loss"].tolist()
        assert log["ema_loss"].iloc[0] == first
        assert state.ema_loss == pytest.approx(0.99 * first + 0.01 * second)

    def test_validation_loss(self, small_mlp, toy_data):
        value = validation_loss(small_mlp, toy_data, FlowStepSampler(), make_rng(0), draws=2)
        assert np.isfinite(value)
        assert value > 0.0

    def test_continues_given_field(self, small_mlp, mlp_config, toy_data):
        state, _ = fit(toy_data, mlp_config, TrainConfig(steps=3, batch_size=8), field=small_mlp)
        assert state.field is small_mlp
        assert state.step == 3

    def test_validation_loss_uses_conditions(self, small_mlp, toy_data):
        nulled = toy_data.with_conditions(tuple(Condition.null() for _ in range(toy_data.B)))
        a = validation_loss(small_mlp, toy_data, FlowStepSampler(), make_rng(0))
        b = validation_loss(small_mlp, nulled, FlowStepSampler(), make_rng(0))
        assert a != b
