"""
Tests for flow-step sampling.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate, stats
from scipy.special import logit

from latentflow.config import FlowStepSampler
from latentflow.core import FlowStep, make_rng
from latentflow.error_codes import ErrorCode, LatentFlowError
from latentflow.kinds import FlowStepKind
from latentflow.sampler import logit_normal_pdf, sample_flowstep, sample_flowsteps


class TestSampleFlowsteps:
    """Test the training-time flow-step distributions."""

    def test_forced_normal_draw(self):
        """A zero normal draw maps to t = 0.5."""
        step = sample_flowstep(FlowStepSampler(), make_rng(0), normal_draw=0.0)
        assert isinstance(step, FlowStep)
        assert step.t == 0.5

    def test_logit_normal_ks(self):
        """KS statistic against the analytic CDF below 0.01 at 10^5 draws."""
        t = sample_flowsteps(FlowStepSampler(m=0.0, s=1.0), make_rng(11), 100_000)
        assert stats.kstest(logit(t), "norm", args=(0.0, 1.0)).statistic < 0.01

    def test_uniform_ks(self):
        t = sample_flowsteps(FlowStepSampler(kind=FlowStepKind.UNIFORM), make_rng(12), 100_000)
        assert stats.kstest(t, "uniform").statistic < 0.01

    def test_logit_normal_mean(self):
        t = sample_flowsteps(FlowStepSampler(), make_rng(13), 100_000)
        assert abs(t.mean() - 0.5) < 0.005

    def test_open_interval_under_saturation(self):
        """Extreme normal draws still land strictly inside (0, 1)."""
        t = sample_flowsteps(FlowStepSampler(), make_rng(0), 2, normal_draws=np.array([100.0, -800.0]))
        assert np.all(t > 0.0)
        assert np.all(t < 1.0)

    def test_location_shift(self):
        """A positive location moves mass toward data."""
        t = sample_flowsteps(FlowStepSampler(m=1.0, s=1.0), make_rng(2), 20_000)
        assert t.mean() > 0.6

    def test_scale_must_be_positive(self):
        with pytest.raises(ValidationError):
            FlowStepSampler(s=0.0)


class TestLogitNormalPdf:
    """Test the density used for loss weighting."""

    def test_center_value(self):
        assert logit_normal_pdf(0.5, 0.0, 1.0) == pytest.approx(4.0 / math.sqrt(2.0 * math.pi))

    def test_integrates_to_one(self):
        total, _ = integrate.quad(lambda t: logit_normal_pdf(t, 0.3, 0.8), 0.0, 1.0, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_vectorized(self):
        values = logit_normal_pdf(np.array([0.25, 0.5, 0.75]))
        assert values.shape == (3,)
        assert values[0] == pytest.approx(values[2])

    def test_accepts_flow_step(self):
        assert logit_normal_pdf(FlowStep(0.5)) == pytest.approx(logit_normal_pdf(0.5))

    @pytest.mark.parametrize("t", [0.0, 1.0])
    def test_domain(self, t):
        with pytest.raises(LatentFlowError) as exc:
            logit_normal_pdf(t)
        assert exc.value.code == ErrorCode.DOMAIN_ERROR

    def test_scale_domain(self):
        with pytest.raises(LatentFlowError):
            logit_normal_pdf(0.5, 0.0, -1.0)
