"""
Tests for run configuration, process settings and structured errors.
"""

import pytest
from pydantic import ValidationError

from latentflow.config import (
    InversionConfig,
    RunConfig,
    SolverConfig,
    apply_overrides,
    build_config,
    config_hash,
    load_config,
    parse_config_text,
    updated,
)
from latentflow.error_codes import (
    ErrorCategory,
    ErrorCode,
    LatentFlowError,
    get_error_message,
    processing_error,
    resource_error,
    shape_mismatch,
    usage_error,
    validation_error,
)
from latentflow.kinds import CouplingKind, FlowStepKind, SolverMethod
from latentflow.settings import Settings


class TestParseConfigText:
    """Test the key-value and JSON config bodies."""

    def test_key_value_lines(self):
        tree = parse_config_text("seed = 3\n# full comment\ntrain.steps = 10  # trailing\nsolver.method = euler\n")
        assert tree == {"seed": 3, "train": {"steps": 10}, "solver": {"method": "euler"}}

    def test_aliases(self):
        tree = parse_config_text("flowstep.m = 0.5\ncoupling.kind = independent\nema.decay = 0.9\noptimizer.lr = 0.01")
        assert tree == {
            "train": {
                "sampler": {"m": 0.5},
                "coupling": "independent",
                "ema": {"decay": 0.9},
                "optimizer": {"lr": 0.01},
            }
        }

    def test_json_body(self):
        tree = parse_config_text('{"coupling": {"kind": "ot"}, "solver": {"num_steps": 8}}')
        assert tree == {"train": {"coupling": "ot"}, "solver": {"num_steps": 8}}

    def test_comma_lists(self):
        assert parse_config_text("splits = 0.5,0.25,0.25") == {"splits": [0.5, 0.25, 0.25]}

    def test_bad_line(self):
        with pytest.raises(LatentFlowError) as exc:
            parse_config_text("seed 3")
        assert exc.value.code == ErrorCode.INVALID_CONFIG


class TestBuildConfig:
    """Test validation into the run tree."""

    def test_defaults(self):
        cfg = build_config({})
        assert cfg.train.coupling == CouplingKind.OT
        assert cfg.train.sampler.kind == FlowStepKind.LOGIT_NORMAL
        assert cfg.solver.method == SolverMethod.MIDPOINT
        assert cfg.solver.num_steps == 32
        assert cfg.guidance.scale == 5.0
        assert cfg.train.ema.decay == 0.99

    def test_model_follows_dataset(self):
        cfg = build_config({"dataset": {"L": 2, "d": 3, "classes": 4}, "model": {"L": 9}})
        assert (cfg.model.L, cfg.model.d, cfg.model.num_classes) == (2, 3, 4)

    def test_invalid_value_names_location(self):
        with pytest.raises(LatentFlowError) as exc:
            build_config({"train": {"steps": -1}})
        assert exc.value.code == ErrorCode.INVALID_CONFIG
        assert exc.value.field == "train.steps"
        assert exc.value.exit_code == 2

    def test_overrides(self):
        tree = apply_overrides({}, ["train.steps=20", "flowstep.kind=uniform"])
        cfg = build_config(tree)
        assert cfg.train.steps == 20
        assert cfg.train.sampler.kind == FlowStepKind.UNIFORM

    def test_override_without_equals(self):
        with pytest.raises(LatentFlowError) as exc:
            apply_overrides({}, ["train.steps"])
        assert exc.value.field == "--set"

    def test_frozen(self):
        with pytest.raises(ValidationError):
            RunConfig().seed = 4


class TestLoadConfig:
    """Test the file, defaults and override layering."""

    def test_layering(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 5\nsolver.num_steps = 16\n", encoding="utf-8")
        cfg = load_config(path, ["solver.num_steps=8"], defaults={"seed": 1, "train.steps": 7})
        assert cfg.seed == 5
        assert cfg.solver.num_steps == 8
        assert cfg.train.steps == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(LatentFlowError) as exc:
            load_config(tmp_path / "absent.cfg")
        assert exc.value.code == ErrorCode.INVALID_CONFIG
        assert exc.value.field == "--config"
        assert exc.value.category == ErrorCategory.RESOURCE

    def test_hash(self):
        a = config_hash(load_config())
        assert a == config_hash(load_config())
        assert a != config_hash(load_config(overrides=["seed=1"]))
        assert len(a) == 64


class TestInversionConfig:
    """Test the inversion defaults and weight validation."""

    def test_default_weights(self):
        cfg = InversionConfig()
        assert cfg.w == (0.0, 1.0, 2.0, 3.0)
        assert cfg.dt == pytest.approx(0.96 / 25)

    def test_weights_follow_k(self):
        assert InversionConfig(K=2).w == (0.0, 1.0)

    def test_single_iterate_gets_unit_weight(self):
        """K=1 would otherwise default to an all-zero weight vector."""
        assert InversionConfig(K=1).w == (1.0,)

    def test_single_iterate_from_flags(self):
        cfg = load_config(overrides=["inversion.K=1"])
        assert cfg.inversion.w == (1.0,)

    def test_default_variance_floor(self):
        assert InversionConfig().kl_floor == pytest.approx(0.1)

    def test_weight_count(self):
        with pytest.raises(ValidationError):
            InversionConfig(K=3, w=(1.0, 1.0))

    def test_negative_weight(self):
        with pytest.raises(ValidationError):
            InversionConfig(K=2, w=(1.0, -1.0))

    def test_t_edit_below_one(self):
        with pytest.raises(ValidationError):
            InversionConfig(t_edit=1.0)

    def test_updated(self):
        cfg = updated(SolverConfig(), num_steps=8)
        assert cfg.num_steps == 8
        with pytest.raises(ValidationError):
            updated(SolverConfig(), num_steps=0)


class TestSettings:
    """Test environment-backed settings."""

    def test_defaults(self, monkeypatch):
        for name in ("LATENTFLOW_SEED", "LATENTFLOW_NUM_WORKERS", "LATENTFLOW_TIEBREAK_MAX_BATCH"):
            monkeypatch.delenv(name, raising=False)
        s = Settings(_env_file=None)
        assert s.seed == 0
        assert s.num_workers == 1
        assert s.tiebreak_max_batch == 16

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("LATENTFLOW_SEED", "7")
        assert Settings(_env_file=None).seed == 7

    def test_negative_seed(self, monkeypatch):
        monkeypatch.setenv("LATENTFLOW_SEED", "-1")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)

    def test_worker_bounds(self):
        with pytest.raises(ValidationError):
            Settings(_env_file=None, num_workers=0)

    def test_log_level_normalized(self):
        assert Settings(_env_file=None, log_level="debug").log_level == "DEBUG"

    def test_debug_forces_debug_logging(self):
        assert Settings(_env_file=None, log_level="WARNING").effective_log_level == "WARNING"
        assert Settings(_env_file=None, log_level="WARNING", debug=True).effective_log_level == "DEBUG"


class TestErrors:
    """Test the structured error factories."""

    def test_validation_exit_code(self):
        err = validation_error(ErrorCode.DOMAIN_ERROR, "t out of range", field="t")
        assert err.exit_code == 2
        assert err.category == ErrorCategory.VALIDATION

    def test_processing_exit_code(self):
        err = processing_error(ErrorCode.DIVERGENCE, "non-finite", details={"step": 3})
        assert err.exit_code == 1
        assert err.details == {"step": 3}

    def test_resource_and_usage(self):
        assert resource_error(ErrorCode.CHECKPOINT_NOT_FOUND, "missing", field="--checkpoint").exit_code == 2
        err = usage_error("unknown flag", field="--bogus")
        assert err.code == ErrorCode.USAGE_ERROR
        assert err.exit_code == 2

    def test_to_dict(self):
        payload = shape_mismatch("eps", (4, 2), (4, 3)).to_dict()
        assert payload["success"] is False
        assert payload["error"]["code"] == "SHAPE_MISMATCH"
        assert payload["error"]["field"] == "eps"
        assert payload["error"]["details"] == {"expected": [4, 2], "provided": [4, 3]}
        assert "suggestion" not in payload["error"]

    def test_messages(self):
        assert get_error_message(ErrorCode.DIVERGENCE) == "ODE state became non-finite"
        assert get_error_message(ErrorCode.UNKNOWN_ERROR) == "An error occurred"
