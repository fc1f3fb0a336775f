"""
Flow-matching training for MlpField.

One step draws noise for the data batch, optionally re-pairs it with the
minibatch OT coupling, nulls conditions with probability dropout_p,
samples one flow step per item, backpropagates the (optionally weighted)
velocity regression loss and applies a decoupled-weight-decay Adam update
with global-norm clipping. EMA parameters follow every `interval` steps.
"""

from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import time

import numpy as np
import pandas as pd

from latentflow.config import FlowStepSampler, MlpConfig, TrainConfig
from latentflow.core import Batch, Condition, LatentSeq, make_rng
from latentflow.coupling import ot_couple, pair_cost
from latentflow.error_codes import ErrorCode, processing_error, shape_mismatch, validation_error
from latentflow.kinds import CouplingKind, FlowStepKind, LossWeighting
from latentflow.sampler import logit_normal_pdf, sample_flowsteps
from latentflow.velocity import MlpField, Params, VelocityField

logger = logging.getLogger(__name__)

# Smoothing of the logged training loss
LOSS_SMOOTHING = 0.99

LOG_COLUMNS = ["step", "loss", "pair_cost", "independent_cost", "ema_loss"]


@dataclass
class TrainState:
    """Parameters, EMA copy, optimizer moments, step counter and rng of a run."""

    field: MlpField
    m: Params
    v: Params
    rng: np.random.Generator
    step: int = 0
    ema_updates: int = 0
    ema_loss: Optional[float] = None
    last: Dict[str, Any] = dc_field(default_factory=dict)

    @classmethod
    def create(cls, field: MlpField, seed: int) -> "TrainState":
        if field.ema_params is None:
            field.ema_params = {k: p.copy() for k, p in field.params.items()}
        zeros = lambda: {k: np.zeros_like(p) for k, p in field.params.items()}
        return cls(field=field, m=zeros(), v=zeros(), rng=make_rng(seed))

    @property
    def params(self) -> Params:
        return self.field.params

    @property
    def ema(self) -> Params:
        return self.field.ema_params


def _as_batch_array(items: Union[Batch, np.ndarray, Sequence[LatentSeq]]) -> np.ndarray:
    if isinstance(items, Batch):
        return items.data
    if isinstance(items, np.ndarray):
        return np.asarray(items, dtype=np.float64)
    return np.stack([s.data for s in items])


def _loss_weights(t: np.ndarray, weighting: LossWeighting, sampler: Optional[FlowStepSampler]) -> np.ndarray:
    if weighting == LossWeighting.NONE:
        return np.ones_like(t)
    m, s = (0.0, 1.0) if sampler is None or sampler.kind == FlowStepKind.UNIFORM else (sampler.m, sampler.s)
    inside = np.clip(t, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return logit_normal_pdf(inside, m, s)


def fm_loss(
    field: VelocityField,
    batch: Batch,
    eps: Union[np.ndarray, Sequence[LatentSeq]],
    t: Union[np.ndarray, Sequence[float]],
    weighting: LossWeighting = LossWeighting.NONE,
    sampler: Optional[FlowStepSampler] = None
) -> float:
    """
    Mean over the batch of ||v(z_t, t, c) - (x - eps)||^2 / (L d).

    Args:
        field: Any velocity field
        batch: Data with conditions
        eps: Noise aligned with the batch
        t: One flow step per item
        weighting: Optional logit-normal density weighting per item
        sampler: Supplies (m, s) for the density weighting

    Returns:
        Scalar loss
    """
    x = batch.data
    e = _as_batch_array(eps)
    if e.shape != x.shape:
        raise shape_mismatch("eps", x.shape, e.shape)
    tt = np.asarray(t, dtype=np.float64).reshape(-1)
    if tt.size != batch.B:
        raise validation_error(ErrorCode.SHAPE_MISMATCH, f"Got {tt.size} flow steps for {batch.B} items", field="t")
    z = tt[:, None, None] * x + (1.0 - tt[:, None, None]) * e
    out = field.eval(z, tt, list(batch.conditions))
    per_item = np.sum((out - (x - e)) ** 2, axis=(1, 2)) / (batch.L * batch.d)
    return float(np.mean(per_item * _loss_weights(tt, weighting, sampler)))


def fm_loss_and_grad(
    field: MlpField,
    x: np.ndarray,
    eps: np.ndarray,
    t: np.ndarray,
    conds: List[Condition],
    weights: Optional[np.ndarray] = None
) -> Tuple[float, Params]:
    """Loss and parameter gradients of the weighted velocity regression."""
    B, L, d = x.shape
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    z = t[:, None, None] * x + (1.0 - t[:, None, None]) * eps
    out, cache = field.forward_with_cache(z, t, conds)
    resid = out - (x - eps)
    per_item = np.sum(resid * resid, axis=(1, 2)) / (L * d)
    loss = float(np.mean(per_item * w))
    dout = (2.0 / (B * L * d)) * w[:, None, None] * resid
    return loss, field.backward(cache, dout)


def _global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.optimizer.lr, constant afterwards."""
    opt = cfg.optimizer
    if opt.warmup_steps == 0:
        return opt.lr
    return opt.lr * min(1.0, (step + 1) / opt.warmup_steps)


def _adamw_update(state: TrainState, grads: Params, cfg: TrainConfig) -> None:
    opt = cfg.optimizer
    norm = _global_norm(grads)
    scale = min(1.0, opt.grad_clip / (norm + 1e-12))
    lr = learning_rate(state.step, cfg)
    k = state.step + 1
    bias1 = 1.0 - opt.beta1 ** k
    bias2 = 1.0 - opt.beta2 ** k
    for name, p in state.params.items():
        g = grads[name] * scale
        state.m[name] = opt.beta1 * state.m[name] + (1.0 - opt.beta1) * g
        state.v[name] = opt.beta2 * state.v[name] + (1.0 - opt.beta2) * g * g
        update = (state.m[name] / bias1) / (np.sqrt(state.v[name] / bias2) + opt.eps)
        if name.startswith("W"):
            update = update + opt.weight_decay * p
        p -= lr * update


def update_ema(state: TrainState, decay: float) -> None:
    """w_ema <- decay w_ema + (1 - decay) w"""
    for name, p in state.params.items():
        state.ema[name] = decay * state.ema[name] + (1.0 - decay) * p
    state.ema_updates += 1


def train_step(state: TrainState, data: Batch, cfg: TrainConfig) -> TrainState:
    """
    One optimizer step on a data batch.

    Args:
        state: Training state, updated in place
        data: Minibatch with class conditions
        cfg: Training configuration

    Returns:
        The same state; `state.last` holds loss, pair_cost, independent_cost
        and the processed conditions
    """
    rng = state.rng
    x = data.data
    eps = rng.standard_normal(x.shape)
    independent = pair_cost(x, eps)
    if cfg.coupling == CouplingKind.OT:
        eps = ot_couple(x, eps).apply(eps)
        paired = pair_cost(x, eps)
    else:
        paired = independent

    dropped = rng.random(data.B) < cfg.dropout_p
    conds = [Condition.null() if drop else c for drop, c in zip(dropped, data.conditions)]
    t = sample_flowsteps(cfg.sampler, rng, data.B)
    weights = _loss_weights(t, cfg.loss_weighting, cfg.sampler)

    loss, grads = fm_loss_and_grad(state.field, x, eps, t, conds, weights)
    if not all(np.all(np.isfinite(g)) for g in grads.values()) or not np.isfinite(loss):
        raise processing_error(
            ErrorCode.TRAINING_DIVERGED,
            f"Non-finite gradient at step {state.step}",
            details={"step": state.step, "loss": loss}
        )
    _adamw_update(state, grads, cfg)
    state.step += 1
    if state.step % cfg.ema.interval == 0:
        update_ema(state, cfg.ema.decay)

    state.ema_loss = loss if state.ema_loss is None else LOSS_SMOOTHING * state.ema_loss + (1.0 - LOSS_SMOOTHING) * loss
    state.last = {
        "loss": loss,
        "pair_cost": paired,
        "independent_cost": independent,
        "ema_loss": state.ema_loss,
        "conditions": conds,
    }
    return state


def _minibatch(data: Batch, size: int, rng: np.random.Generator) -> Batch:
    replace = size > data.B
    idx = rng.choice(data.B, size=size, replace=replace)
    return data.subset(idx)


def fit(
    data: Batch,
    model_cfg: MlpConfig,
    cfg: TrainConfig,
    field: Optional[MlpField] = None,
    progress: Optional[Callable[[int, Dict[str, float]], None]] = None
) -> Tuple[TrainState, pd.DataFrame]:
    """
    Train a network on a labeled dataset.

    Args:
        data: Training set
        model_cfg: Network shape (used when `field` is not given)
        cfg: Training configuration
        field: Optional network to continue training
        progress: Called with (step, stats) at every logged step

    Returns:
        Final state and the training log (step, loss, pair_cost,
        independent_cost, ema_loss)
    """
    start = time.time()
    field = field if field is not None else MlpField(model_cfg)
    state = TrainState.create(field, cfg.seed)
    logger.info(
        f"Training {field.num_params} parameters for {cfg.steps} steps "
        f"(batch {cfg.batch_size}, coupling {cfg.coupling.value}, sampler {cfg.sampler.kind.value})"
    )
    rows = []
    for _ in range(cfg.steps):
        train_step(state, _minibatch(data, cfg.batch_size, state.rng), cfg)
        if state.step % cfg.log_every == 0 or state.step == cfg.steps or state.step == 1:
            row = {"step": state.step, **{k: state.last[k] for k in LOG_COLUMNS[1:]}}
            rows.append(row)
            logger.debug(f"step {state.step}: loss={row['loss']:.4f} ema_loss={row['ema_loss']:.4f}")
            if progress is not None:
                progress(state.step, row)
    elapsed = time.time() - start
    logger.info(f"Training finished in {elapsed:.1f}s (smoothed loss {state.ema_loss})")
    return state, pd.DataFrame(rows, columns=LOG_COLUMNS)


def validation_loss(
    field: VelocityField,
    data: Batch,
    sampler: FlowStepSampler,
    rng: np.random.Generator,
    draws: int = 1
) -> float:
    """Flow-matching loss on held-out data with independent noise, averaged over draws."""
    losses = []
    for _ in range(draws):
        eps = rng.standard_normal(data.data.shape)
        t = sample_flowsteps(sampler, rng, data.B)
        losses.append(fm_loss(field, data, eps, t))
    return float(np.mean(losses))


def _fixed_draw(
    field: MlpField,
    data: Batch,
    seed: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[Condition]]:
    rng = make_rng(seed)
    eps = rng.standard_normal(data.data.shape)
    t = rng.uniform(0.05, 0.95, size=data.B)
    return data.data, eps, t, list(data.conditions)


def finite_difference_gradient(
    field: MlpField,
    data: Batch,
    entries: Sequence[Tuple[str, int]],
    h: float = 1e-5,
    seed: int = 0
) -> np.ndarray:
    """Central differences of the training loss for the given (param, flat index) entries."""
    x, eps, t, conds = _fixed_draw(field, data, seed)
    out = np.empty(len(entries))
    for i, (name, index) in enumerate(entries):
        flat = field.params[name].reshape(-1)
        orig = flat[index]
        flat[index] = orig + h
        plus, _ = fm_loss_and_grad(field, x, eps, t, conds)
        flat[index] = orig - h
        minus, _ = fm_loss_and_grad(field, x, eps, t, conds)
        flat[index] = orig
        out[i] = (plus - minus) / (2.0 * h)
    return out


def analytic_gradient(field: MlpField, data: Batch, entries: Sequence[Tuple[str, int]], seed: int = 0) -> np.ndarray:
    x, eps, t, conds = _fixed_draw(field, data, seed)
    _, grads = fm_loss_and_grad(field, x, eps, t, conds)
    return np.array([grads[name].reshape(-1)[index] for name, index in entries])


def sample_entries(field: MlpField, count: int, rng: np.random.Generator) -> List[Tuple[str, int]]:
    """Random (param, flat index) entries, uniform over all parameters."""
    names = list(field.params)
    sizes = np.array([field.params[n].size for n in names])
    flat = rng.choice(int(sizes.sum()), size=min(count, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    entries = []
    for f in np.sort(flat):
        k = int(np.searchsorted(bounds, f, side="right"))
        entries.append((names[k], int(f - (bounds[k - 1] if k else 0))))
    return entries


def grad_check(
    field: MlpField,
    data: Batch,
    num_params: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-3
) -> float:
    """
    Max relative error between backprop and central finite differences
    over a random parameter subset.

    Relative error is |a - n| / max(|a| + |n|, floor).
    """
    if field.num_params > 10_000:
        logger.warning(f"grad_check on {field.num_params} parameters; intended for small networks")
    entries = sample_entries(field, num_params, make_rng(seed))
    analytic = analytic_gradient(field, data, entries, seed)
    numeric = finite_difference_gradient(field, data, entries, h, seed)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(rel.max())
