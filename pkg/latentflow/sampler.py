"""
Flow-step sampling distributions used during training, and their densities.
"""

from typing import Optional, Union
import math

import numpy as np
from scipy.special import expit, logit

from latentflow.config import FlowStepSampler
from latentflow.core import FlowStep, as_time
from latentflow.error_codes import ErrorCode, validation_error
from latentflow.kinds import FlowStepKind


def sample_flowsteps(
    sampler: FlowStepSampler,
    rng: np.random.Generator,
    size: int,
    normal_draws: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Draw `size` flow steps.

    Args:
        sampler: Uniform or LogitNormal(m, s)
        rng: Caller-owned generator
        size: Number of draws
        normal_draws: Optional pre-drawn standard normals (logit-normal only)

    Returns:
        Array of t values; logit-normal draws lie in the open interval (0, 1)
    """
    if sampler.kind == FlowStepKind.UNIFORM:
        return rng.random(size)
    n = rng.standard_normal(size) if normal_draws is None else np.asarray(normal_draws, dtype=np.float64)
    t = expit(sampler.m + sampler.s * n)
    # sigmoid saturates to exactly 0 or 1 for |n| beyond ~37
    tiny = np.finfo(np.float64).tiny
    return np.clip(t, tiny, 1.0 - np.finfo(np.float64).epsneg)


def sample_flowstep(
    sampler: FlowStepSampler,
    rng: np.random.Generator,
    normal_draw: Optional[float] = None
) -> FlowStep:
    """Draw a single flow step."""
    draws = None if normal_draw is None else np.array([normal_draw])
    return FlowStep(float(sample_flowsteps(sampler, rng, 1, draws)[0]))


def logit_normal_pdf(
    t: Union[FlowStep, float, np.ndarray],
    m: float = 0.0,
    s: float = 1.0
) -> Union[float, np.ndarray]:
    """
    Density of the logit-normal distribution.

    pdf(t) = 1 / (s sqrt(2 pi)) * 1 / (t (1 - t)) * exp(-(logit(t) - m)^2 / (2 s^2))
    """
    if s <= 0:
        raise validation_error(ErrorCode.DOMAIN_ERROR, f"Scale must be positive, got {s}", field="s")
    scalar = not isinstance(t, np.ndarray)
    tt = np.atleast_1d(np.asarray(as_time(t) if scalar else t, dtype=np.float64))
    if np.any((tt <= 0.0) | (tt >= 1.0)):
        raise validation_error(
            ErrorCode.DOMAIN_ERROR,
            "Logit-normal density is defined on the open interval (0, 1)",
            field="t",
            details={"min": float(tt.min()), "max": float(tt.max())}
        )
    z = logit(tt)
    pdf = np.exp(-((z - m) ** 2) / (2.0 * s * s)) / (s * math.sqrt(2.0 * math.pi) * tt * (1.0 - tt))
    return float(pdf[0]) if scalar else pdf
