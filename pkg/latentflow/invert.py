"""
Latent inversion: plain backward-euler (DDIM-style) inversion and the
regularized flow-matching inversion with a patch-KL correction.

Regularized inversion walks the grid 1 -> T_edit in S steps. Each step
runs K fixed-point iterates z_k = z_t - delta_k dt, where delta_k is the
field at t - dt evaluated on the previous iterate. Iterates with a
positive weight get their prediction pulled toward the patch statistics
of a prediction made on a freshly noised copy of the input. The step
commits the weighted average of the iterates.

Patch variances are floored at a fraction of the reference patch's mean
square, and the pull on each item is capped at the distance between its
prediction and the reference prediction. Small patches (a 1 x 2 grid is
a single two-element patch) otherwise produce unbounded corrections.

With no KL term the inversion undoes euler sampling on its own grid
exactly, up to the fixed-point residual; reconstruction_solver returns
that sampler.
"""

from typing import List, Optional, Tuple, Union
import logging

import numpy as np

from latentflow.config import InversionConfig, SolverConfig
from latentflow.core import ArrayLike, Condition, FlowStep, as_array, as_time, rewrap
from latentflow.error_codes import ErrorCode, processing_error, shape_mismatch, validation_error
from latentflow.kinds import CondMode, PredSpace, SolverMethod
from latentflow.ode import integrate, time_grid
from latentflow.velocity import ConditionArg, NfeCounter, VelocityField, unwrap

logger = logging.getLogger(__name__)

# Variance floor for constant patches
VARIANCE_FLOOR = 1e-6

Slices = List[Tuple[slice, slice]]


def ddim_invert(
    field: VelocityField,
    x: ArrayLike,
    c: ConditionArg,
    t_edit: Union[FlowStep, float],
    num_steps: int,
    counter: Optional[NfeCounter] = None
) -> ArrayLike:
    """
    Backward euler from t=1 to t_edit.

    Returns x unchanged when t_edit >= 1 or num_steps is 0.
    """
    te = as_time(t_edit)
    if te >= 1.0 or num_steps == 0:
        return x
    z, _ = integrate(field, x, 1.0, te, SolverConfig(method=SolverMethod.EULER, num_steps=num_steps), c, counter=counter)
    return z


def patch_slices(L: int, d: int, patch: Tuple[int, int] = (4, 4)) -> Slices:
    """
    Tiling of an L x d grid into patch-sized blocks.

    Edge blocks keep their smaller natural size. Grids with fewer cells
    than one full patch form a single patch.
    """
    pl, pd_ = patch
    if L * d < pl * pd_:
        return [(slice(0, L), slice(0, d))]
    return [
        (slice(r, min(r + pl, L)), slice(q, min(q + pd_, d)))
        for r in range(0, L, pl)
        for q in range(0, d, pd_)
    ]


def patch_partition(a: ArrayLike, patch: Tuple[int, int] = (4, 4)) -> List[np.ndarray]:
    """Blocks of a single L x d sequence in row-major tile order."""
    arr = as_array(a)
    return [arr[rs, cs] for rs, cs in patch_slices(arr.shape[0], arr.shape[1], patch)]


def _moments(block: np.ndarray, floor: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-item mean, floored variance and the floor mask of (B, n) blocks."""
    mean = block.mean(axis=1)
    var = block.var(axis=1)
    floored = var < floor
    return mean, np.where(floored, floor, var), floored


def _patch_floor(ref_block: np.ndarray, rel_floor: float) -> np.ndarray:
    """Per-item variance floor of (B, n) reference blocks; depends on the reference only."""
    return np.maximum(VARIANCE_FLOOR, rel_floor * np.mean(ref_block ** 2, axis=1))


def _paired(delta: ArrayLike, delta_ref: ArrayLike) -> Tuple[np.ndarray, np.ndarray, bool]:
    a, b = as_array(delta), as_array(delta_ref)
    if a.shape != b.shape:
        raise shape_mismatch("delta_ref", a.shape, b.shape)
    if a.ndim == 2:
        return a[None], b[None], False
    if a.ndim != 3:
        raise validation_error(ErrorCode.INVALID_ARGUMENT, f"Expected (L, d) or (B, L, d), got {a.shape}", field="delta")
    return a, b, True


def patch_kl(
    delta: ArrayLike,
    delta_ref: ArrayLike,
    patch: Tuple[int, int] = (4, 4),
    rel_floor: float = 0.0
) -> Union[float, np.ndarray]:
    """
    Mean over patches of KL(N(mu1, s1^2) || N(mu2, s2^2)) between Gaussian
    fits of corresponding patches.

    Both variances are floored at max(1e-6, rel_floor * mean(ref_patch^2)).
    Returns a float for one sequence, or one value per item for a batch.
    """
    a, b, batched = _paired(delta, delta_ref)
    slices = patch_slices(a.shape[1], a.shape[2], patch)
    total = np.zeros(a.shape[0])
    for rs, cs in slices:
        ref = b[:, rs, cs].reshape(b.shape[0], -1)
        floor = _patch_floor(ref, rel_floor)
        mu1, var1, _ = _moments(a[:, rs, cs].reshape(a.shape[0], -1), floor)
        mu2, var2, _ = _moments(ref, floor)
        total += 0.5 * np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / (2.0 * var2) - 0.5
    kl = total / len(slices)
    return kl if batched else float(kl[0])


def patch_kl_grad(
    delta: ArrayLike,
    delta_ref: ArrayLike,
    patch: Tuple[int, int] = (4, 4),
    rel_floor: float = 0.0
) -> ArrayLike:
    """
    Gradient of patch_kl with respect to delta (delta_ref held constant).

    For a patch of n elements:
        dKL/d delta_i = [(mu1 - mu2) / s2^2 + (1/s2^2 - 1/s1^2)(delta_i - mu1)] / n
    divided by the number of patches. The variance term vanishes where
    the floor is active.
    """
    a, b, batched = _paired(delta, delta_ref)
    B = a.shape[0]
    slices = patch_slices(a.shape[1], a.shape[2], patch)
    grad = np.zeros_like(a)
    for rs, cs in slices:
        block = a[:, rs, cs]
        n = block.shape[1] * block.shape[2]
        flat = block.reshape(B, -1)
        ref = b[:, rs, cs].reshape(B, -1)
        floor = _patch_floor(ref, rel_floor)
        mu1, var1, floored = _moments(flat, floor)
        mu2, var2, _ = _moments(ref, floor)
        spread = np.where(floored, 0.0, 1.0 / var2 - 1.0 / var1)
        g = ((mu1 - mu2) / var2)[:, None] + spread[:, None] * (flat - mu1[:, None])
        grad[:, rs, cs] = (g / n).reshape(block.shape)
    grad /= len(slices)
    return rewrap(delta, grad if batched else grad[0])


def to_noise_prediction(v: ArrayLike, x_orig: ArrayLike) -> ArrayLike:
    """Noise estimate implied by a velocity: eps = x_orig - v."""
    va, xa = as_array(v), as_array(x_orig)
    if va.shape != xa.shape:
        raise shape_mismatch("x_orig", va.shape, xa.shape)
    return rewrap(v, xa - va)


def from_noise_prediction(eps: ArrayLike, x_orig: ArrayLike) -> ArrayLike:
    """Velocity implied by a noise estimate: v = x_orig - eps."""
    ea, xa = as_array(eps), as_array(x_orig)
    if ea.shape != xa.shape:
        raise shape_mismatch("x_orig", ea.shape, xa.shape)
    return rewrap(eps, xa - ea)


def resolve_inversion_condition(
    field: VelocityField,
    c_orig: Condition,
    cond_mode: CondMode
) -> Tuple[VelocityField, Condition]:
    """
    Field and condition used while inverting.

    Null mode (or a null original condition) drops any guidance wrapper,
    since guidance is undefined without a condition.
    """
    if cond_mode == CondMode.NULL or c_orig.is_null:
        return unwrap(field), Condition.null()
    return field, c_orig


def inversion_nfe_per_step(cfg: InversionConfig, field: Optional[VelocityField] = None) -> int:
    """Field evaluations of one outer step: K iterates plus one reference per weighted iterate."""
    per_call = 1 if field is None else field.nfe_per_call
    return per_call * (cfg.K + sum(1 for w in cfg.w if w > 0))


def equal_nfe_ddim_steps(cfg: InversionConfig) -> int:
    """DDIM step count spending the same evaluations as a regularized inversion."""
    return cfg.S * inversion_nfe_per_step(cfg)


def reconstruction_solver(cfg: InversionConfig, num_steps: Optional[int] = None) -> SolverConfig:
    """Euler sampler on the inversion grid (cfg.S steps unless num_steps is given)."""
    return SolverConfig(method=SolverMethod.EULER, num_steps=cfg.S if num_steps is None else num_steps)


def bounded_correction(correction: np.ndarray, gap: np.ndarray) -> np.ndarray:
    """
    Scale each item's correction down to at most the norm of its gap.

    Norms run over the trailing (L, d) axes.
    """
    axes = (-2, -1)
    size = np.sqrt(np.sum(correction ** 2, axis=axes, keepdims=True))
    limit = np.sqrt(np.sum(gap ** 2, axis=axes, keepdims=True))
    scale = np.divide(limit, size, out=np.ones_like(size), where=size > limit)
    return correction * scale


def _kl_step(delta: np.ndarray, delta_ref: np.ndarray, xa: np.ndarray, cfg: InversionConfig) -> np.ndarray:
    """Prediction after one bounded KL step in the configured prediction space."""
    lam = cfg.lambda_kl
    if cfg.pred_space == PredSpace.NOISE:
        # eps-space step eps <- eps - lam * grad, mapped back through v = x - eps
        grad = as_array(patch_kl_grad(xa - delta, xa - delta_ref, cfg.patch, cfg.kl_floor))
        return delta + bounded_correction(lam * grad, delta - delta_ref)
    grad = as_array(patch_kl_grad(delta, delta_ref, cfg.patch, cfg.kl_floor))
    return delta - bounded_correction(lam * grad, delta - delta_ref)


def regularized_invert(
    field: VelocityField,
    x: ArrayLike,
    c: ConditionArg,
    cfg: InversionConfig,
    rng: np.random.Generator,
    counter: Optional[NfeCounter] = None
) -> ArrayLike:
    """
    Regularized flow-matching inversion of x down to cfg.t_edit.

    Args:
        field: Velocity field (guided fields guide the inversion too)
        x: Clean latent, single sequence or (B, L, d) batch
        c: Inversion condition, already resolved for cfg.cond_mode
        cfg: Steps, iterates, weights, KL strength and prediction space
        rng: Source of the reference noise, one fresh draw per weighted iterate
        counter: Optional NFE counter

    Returns:
        Noisy latent at t_edit with the wrapper type of x
    """
    weights = np.asarray(cfg.w, dtype=np.float64)
    w_sum = float(weights.sum())
    if w_sum <= 0.0:
        raise validation_error(
            ErrorCode.INVALID_CONFIG,
            "Iterate weights sum to zero",
            field="inversion.w",
            details={"w": list(cfg.w)},
            suggestion="Give at least one iterate a positive weight, e.g. --w 1 with --k 1"
        )
    xa = as_array(x)
    grid = time_grid(1.0, cfg.t_edit, cfg.S)
    z_t = xa.copy()

    for s in range(cfg.S):
        t, t_next = grid[s], grid[s + 1]
        dt = t - t_next
        tau = t if cfg.literal_mixture else t_next
        z_k = z_t
        acc = None
        for k in range(cfg.K):
            delta = field.eval(z_k, t_next, c, counter)
            if weights[k] > 0:
                eps = rng.standard_normal(xa.shape)
                delta_ref = field.eval(xa * tau + eps * (1.0 - tau), t_next, c, counter)
                if cfg.lambda_kl > 0:
                    delta = _kl_step(as_array(delta), as_array(delta_ref), xa, cfg)
            z_k = z_t - delta * dt
            acc = weights[k] * z_k if acc is None else acc + weights[k] * z_k
        z_t = acc / w_sum
        if not np.all(np.isfinite(z_t)):
            raise processing_error(
                ErrorCode.DIVERGENCE,
                f"Inversion state became non-finite at step {s} (t={t_next:.6g})",
                details={"step": s, "t": float(t_next)}
            )
    logger.debug(f"Regularized inversion to t={cfg.t_edit} in {cfg.S}x{cfg.K} iterates")
    return rewrap(x, z_t)
