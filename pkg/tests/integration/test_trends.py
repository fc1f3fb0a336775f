"""
Trend reproductions on trained toy models.

These train real networks for thousands of steps; run them with `pytest -m slow`.
"""

import numpy as np
import pytest

from latentflow.ablations import sweep_training
from latentflow.commands import class_subset, fit_classifier
from latentflow.config import build_config
from latentflow.core import Condition
from latentflow.data import make_dataset, split
from latentflow.edit import EditSetup, sweep_lambda_kl, sweep_t_edit
from latentflow.kinds import PredSpace
from latentflow.train import fit
from latentflow.velocity import GuidedField

pytestmark = pytest.mark.slow

T_EDIT_GRID = [0.0, 0.04, 0.08, 0.12, 0.16, 0.2]
LAMBDA_GRID = [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5]


def prepared(cfg):
    splits = split(make_dataset(cfg.dataset), cfg.splits, cfg.seed)
    return splits, fit_classifier(splits)


@pytest.fixture(scope="module")
def two_class_run():
    """Guided EMA network trained on the 2-class gaussians task, plus its splits."""
    cfg = build_config({"train": {"steps": 3000}, "dataset": {"n_per_class": 500}})
    splits, classifier = prepared(cfg)
    state, _ = fit(splits.train, cfg.model, cfg.train)
    field = GuidedField(state.field.with_ema(), cfg.guidance.scale)
    return cfg, splits, classifier, field


def edit_setup(run, num=100, **inversion):
    cfg, splits, classifier, field = run
    originals = class_subset(splits.eval, 0)
    return EditSetup(
        field=field,
        originals=originals.subset(range(min(num, originals.B))),
        c_edit=Condition.of_label(1),
        reference=class_subset(splits.eval, 1).data,
        classifier=classifier,
        inversion=cfg.inversion.model_copy(update=inversion),
        solver=cfg.solver,
        seed=cfg.seed,
    )


class TestTrainingConverges:
    """Test the loss curve of a long run."""

    def test_smoothed_loss_halves(self):
        cfg = build_config({})
        splits, _ = prepared(cfg)
        _, log = fit(splits.train, cfg.model, cfg.train)
        assert log["step"].iloc[-1] == 5000
        assert log["ema_loss"].iloc[-1] < 0.5 * log["loss"].iloc[0]


class TestRegularizedInversion:
    """Test editing quality against DDIM at matched budgets."""

    def test_beats_ddim_across_t_edit(self, two_class_run):
        table = sweep_t_edit(edit_setup(two_class_run), T_EDIT_GRID)
        ddim = table[table["method"] == "ddim"].set_index("t_edit")
        ours = table[table["method"] == "regularized"].set_index("t_edit")
        np.testing.assert_array_equal(ddim["nfe"], ours["nfe"])
        assert np.all(ours["lpaps_median"] < ddim["lpaps_median"])
        assert np.mean(ours["frechet"] < ddim["frechet"]) >= 0.8

    def test_lambda_optimum_is_interior(self, two_class_run):
        table = sweep_lambda_kl(edit_setup(two_class_run, num=60, S=10), LAMBDA_GRID, pred_spaces=[PredSpace.VELOCITY])
        curve = table[table["cond_mode"] == "orig"].sort_values("lambda_kl")
        best = curve["lambda_kl"].iloc[int(np.argmin(curve["frechet"].to_numpy()))]
        assert 0.0 < best < 0.5


class TestTrainingDesign:
    """Test the sampler and coupling trends on the circle of gaussians."""

    @pytest.fixture(scope="class")
    def variants(self):
        cfg = build_config({
            "dataset": {"classes": 4, "n_per_class": 400},
            "train": {"steps": 3000},
        })
        splits, classifier = prepared(cfg)
        validation = splits.validation if splits.validation is not None else splits.eval
        table = sweep_training(
            cfg, splits.train, validation, splits.eval, classifier,
            variants=["baseline", "+logit_normal", "+ot_coupling"], samples_per_class=200
        )
        return table.set_index("variant")

    def test_ot_coupling_straightens_paths(self, variants):
        independent = variants.loc["+logit_normal"]
        ot = variants.loc["+ot_coupling"]
        assert ot["straightness"] < independent["straightness"]
        assert ot["frechet"] <= 1.1 * independent["frechet"]

    def test_logit_normal_beats_uniform(self, variants):
        assert variants.loc["+logit_normal", "frechet"] < variants.loc["baseline", "frechet"]
