"""
Tests for the generation and training ablations.
"""

import numpy as np
import pytest

from latentflow.ablations import (
    TRAINING_VARIANTS,
    GenerationSetup,
    balanced_conditions,
    generate_labelled,
    steps_for_nfe,
    sweep_cfg,
    sweep_efficiency,
    sweep_training,
)
from latentflow.config import SolverConfig, build_config
from latentflow.core import make_rng
from latentflow.error_codes import ErrorCode, LatentFlowError
from latentflow.kinds import CouplingKind, FlowStepKind, SolverMethod
from latentflow.velocity import GuidedField


@pytest.fixture
def generation_setup(two_class_oracle, toy_data, classifier):
    """Generation sweep inputs on the closed-form field."""
    return GenerationSetup(
        field=two_class_oracle,
        reference=toy_data,
        classifier=classifier,
        solver=SolverConfig(num_steps=8),
        num_classes=2,
        samples_per_class=20,
        num_workers=1,
    )


class TestGenerateLabelled:
    """Test batched labelled generation."""

    def test_balanced_conditions(self):
        labels = [c.label for c in balanced_conditions(2, 3)]
        assert labels == [0, 0, 0, 1, 1, 1]

    def test_counts_and_straightness(self, two_class_oracle):
        conds = balanced_conditions(2, 5)
        x, nfe, straight = generate_labelled(two_class_oracle, conds, 1, 2, SolverConfig(num_steps=8), make_rng(0), record=True)
        assert x.shape == (10, 1, 2)
        assert nfe == 16
        assert straight is not None and straight >= 0.0

    def test_without_record(self, two_class_oracle):
        _, _, straight = generate_labelled(
            two_class_oracle, balanced_conditions(2, 2), 1, 2, SolverConfig(num_steps=2), make_rng(0)
        )
        assert straight is None

    def test_samples_land_on_their_class(self, two_class_oracle, classifier):
        conds = balanced_conditions(2, 25)
        x, _, _ = generate_labelled(two_class_oracle, conds, 1, 2, SolverConfig(num_steps=16), make_rng(1))
        predicted = np.argmax(classifier.predict_proba(x), axis=1)
        assert np.mean(predicted == [c.label for c in conds]) > 0.95


class TestStepsForNfe:
    """Test budget to step conversion."""

    def test_midpoint(self, two_class_oracle):
        assert steps_for_nfe(64, SolverMethod.MIDPOINT, two_class_oracle) == 32

    def test_guided_midpoint(self, two_class_oracle):
        assert steps_for_nfe(64, SolverMethod.MIDPOINT, GuidedField(two_class_oracle, 2.0)) == 16

    def test_euler(self, two_class_oracle):
        assert steps_for_nfe(10, "euler", two_class_oracle) == 10

    def test_at_least_one_step(self, two_class_oracle):
        assert steps_for_nfe(1, SolverMethod.MIDPOINT, two_class_oracle) == 1


class TestSweepCfg:
    """Test the guidance-scale sweep."""

    def test_rows(self, small_mlp, toy_data, classifier):
        setup = GenerationSetup(
            field=small_mlp,
            reference=toy_data,
            classifier=classifier,
            solver=SolverConfig(method=SolverMethod.MIDPOINT, num_steps=4),
            num_classes=2,
            samples_per_class=10,
            num_workers=1,
        )
        table = sweep_cfg(setup, [0.0, 1.0])
        assert table["scale"].tolist() == [0.0, 1.0]
        assert table["nfe"].tolist() == [16, 16]
        assert np.all(np.isfinite(table[["frechet", "adherence", "straightness"]].to_numpy()))

    def test_rejects_guided_field(self, generation_setup, small_mlp):
        generation_setup.field = GuidedField(small_mlp, 2.0)
        with pytest.raises(LatentFlowError) as exc:
            sweep_cfg(generation_setup, [1.0])
        assert exc.value.code == ErrorCode.INVALID_ARGUMENT

    def test_empty_grid(self, generation_setup):
        with pytest.raises(LatentFlowError):
            sweep_cfg(generation_setup, [])


class TestSweepEfficiency:
    """Test the solver budget sweep."""

    def test_budgets_are_met(self, generation_setup):
        table = sweep_efficiency(generation_setup, [8, 16])
        assert table["method"].tolist() == ["euler", "euler", "midpoint", "midpoint"]
        assert table["nfe"].tolist() == [8, 16, 8, 16]
        assert table["num_steps"].tolist() == [8, 16, 4, 8]
        assert np.all(table["adherence"] > 0.9)

    def test_rejects_non_positive(self, generation_setup):
        with pytest.raises(LatentFlowError):
            sweep_efficiency(generation_setup, [8, -1])


class TestTrainingVariants:
    """Test the cumulative training-design variants."""

    def test_cumulative_changes(self):
        cfg = build_config({})
        rows = {name: fn(cfg.train, cfg.model) for name, fn in TRAINING_VARIANTS.items()}
        assert rows["baseline"][0].sampler.kind == FlowStepKind.UNIFORM
        assert rows["baseline"][0].coupling == CouplingKind.INDEPENDENT
        assert rows["+logit_normal"][0].sampler.kind == FlowStepKind.LOGIT_NORMAL
        assert rows["+logit_normal"][0].coupling == CouplingKind.INDEPENDENT
        assert rows["+ot_coupling"][0].coupling == CouplingKind.OT
        assert rows["+ot_coupling"][1].width == cfg.model.width
        assert rows["+wider"][1].width == 2 * cfg.model.width

    def test_tiny_sweep(self, toy_data, classifier):
        cfg = build_config({
            "train": {"steps": 20, "batch_size": 16},
            "model": {"width": 8},
            "solver": {"num_steps": 4},
        })
        table = sweep_training(
            cfg, toy_data, toy_data, toy_data, classifier,
            variants=["baseline", "+wider"], samples_per_class=10, num_workers=1
        )
        assert table["variant"].tolist() == ["baseline", "+wider"]
        assert table["width"].tolist() == [8, 16]
        assert table["sampler"].tolist() == ["uniform", "logit_normal"]
        assert np.all(np.isfinite(table[["final_loss", "val_mse", "frechet", "straightness"]].to_numpy()))

    def test_unknown_variant(self, toy_data, classifier):
        with pytest.raises(LatentFlowError) as exc:
            sweep_training(build_config({}), toy_data, toy_data, toy_data, classifier, variants=["bogus"])
        assert exc.value.code == ErrorCode.INVALID_ARGUMENT
