"""
Velocity fields v(z, t, c).

Three implementations share the VelocityField interface:
- GaussianOracleField: exact marginal velocity for per-class Gaussian data
- MlpField: small fully connected network with hand-written backprop
- GuidedField: classifier-free guidance around another field

Fields are evaluated on batches of shape (B, L, d). A single (L, d)
sequence is treated as a batch of one. Every call adds the field's cost
to the caller's NfeCounter.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import json
import logging
import struct

import numpy as np
import pandas as pd
from scipy.special import expit

from latentflow.config import MlpConfig
from latentflow.core import (
    ArrayLike,
    Condition,
    FlowStep,
    LatentSeq,
    as_array,
    as_time,
    make_rng,
    rewrap,
)
from latentflow.error_codes import (
    ErrorCode,
    processing_error,
    resource_error,
    validation_error,
)
from latentflow.kinds import ConditionKind

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]
ConditionArg = Union[Condition, Sequence[Condition]]
TimeArg = Union[FlowStep, float, np.ndarray]


class NfeCounter:
    """Number of function evaluations spent by one solver context."""

    def __init__(self, count: int = 0):
        self.count = count

    def add(self, n: int) -> None:
        self.count += n

    def __int__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"NfeCounter({self.count})"


def _conditions(c: ConditionArg, size: int) -> List[Condition]:
    if isinstance(c, Condition):
        return [c] * size
    conds = list(c)
    if len(conds) != size:
        raise validation_error(
            ErrorCode.SHAPE_MISMATCH,
            f"Got {len(conds)} conditions for a batch of {size}",
            field="c"
        )
    return conds


def _times(t: TimeArg, size: int) -> np.ndarray:
    if isinstance(t, np.ndarray):
        tt = np.asarray(t, dtype=np.float64).reshape(-1)
        if tt.size == 1:
            tt = np.full(size, float(tt[0]))
        if tt.size != size:
            raise validation_error(
                ErrorCode.SHAPE_MISMATCH,
                f"Got {tt.size} flow steps for a batch of {size}",
                field="t"
            )
    else:
        tt = np.full(size, as_time(t))
    if np.any((tt < 0.0) | (tt > 1.0)):
        raise validation_error(ErrorCode.DOMAIN_ERROR, "Flow steps must lie in [0, 1]", field="t")
    return tt


class VelocityField(ABC):
    """
    Interface of an evaluable velocity model.

    Subclasses implement `_evaluate` on a (B, L, d) batch with per-item
    flow steps and conditions.
    """

    # Evaluations counted per call
    nfe_per_call: int = 1

    def eval(
        self,
        z: ArrayLike,
        t: TimeArg,
        c: ConditionArg,
        counter: Optional[NfeCounter] = None
    ) -> ArrayLike:
        """
        Evaluate the field.

        Args:
            z: LatentSeq, (L, d) array or (B, L, d) batch
            t: Flow step, or one flow step per batch item
            c: Condition, or one condition per batch item
            counter: Optional NFE counter to charge

        Returns:
            Velocity with the shape and wrapper type of `z`
        """
        arr = as_array(z)
        if arr.ndim not in (2, 3):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Field input must be (L, d) or (B, L, d), got {arr.shape}",
                field="z"
            )
        batched = arr.ndim == 3
        zb = arr if batched else arr[None]
        out = self._evaluate(zb, _times(t, zb.shape[0]), _conditions(c, zb.shape[0]))
        if counter is not None:
            counter.add(self.nfe_per_call)
        return rewrap(z, out if batched else out[0])

    @abstractmethod
    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        """Velocity for a (B, L, d) batch."""


class GaussianOracleField(VelocityField):
    """
    Exact velocity of the straight mixture path when class k data is
    N(mu_k, diag(sigma_k^2)), applied independently to every frame.

    v(z, t) = mu + (t sigma^2 - (1 - t)) (z - t mu) / (t^2 sigma^2 + (1 - t)^2)
    """

    def __init__(self, mu: np.ndarray, sigma: np.ndarray):
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        sigma = np.asarray(sigma, dtype=np.float64)
        sigma = np.broadcast_to(sigma if sigma.ndim == 2 else np.atleast_1d(sigma)[None], mu.shape).copy()
        if np.any(sigma <= 0) or not np.all(np.isfinite(mu)):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                "Oracle needs finite means and strictly positive sigmas",
                field="sigma"
            )
        self.mu = mu
        self.sigma = sigma

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def _class_moments(self, conds: List[Condition]) -> Tuple[np.ndarray, np.ndarray]:
        labels = []
        for c in conds:
            if c.kind != ConditionKind.CLASS_LABEL:
                raise validation_error(
                    ErrorCode.UNSUPPORTED_CONDITION,
                    f"Gaussian oracle is defined per class, got a {c.describe()} condition",
                    field="c",
                    suggestion="Pass Condition.of_label(k)"
                )
            if c.label >= self.num_classes:
                raise validation_error(
                    ErrorCode.INVALID_ARGUMENT,
                    f"Class {c.label} out of range for {self.num_classes} classes",
                    field="c"
                )
            labels.append(c.label)
        idx = np.asarray(labels, dtype=np.int64)
        return self.mu[idx][:, None, :], self.sigma[idx][:, None, :]

    def _check_width(self, z: np.ndarray) -> None:
        if z.shape[-1] != self.d:
            raise validation_error(
                ErrorCode.SHAPE_MISMATCH,
                f"Oracle has d={self.d}, input has d={z.shape[-1]}",
                field="z"
            )

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        self._check_width(z)
        mu, sigma = self._class_moments(conds)
        tt = t[:, None, None]
        var = sigma * sigma
        denom = tt * tt * var + (1.0 - tt) ** 2
        return mu + (tt * var - (1.0 - tt)) * (z - tt * mu) / denom

    def transport(
        self,
        z: ArrayLike,
        t_from: Union[FlowStep, float],
        t_to: Union[FlowStep, float],
        c: ConditionArg
    ) -> ArrayLike:
        """
        Closed-form flow map of the oracle ODE.

        z_to = t_to mu + s(t_to) / s(t_from) (z_from - t_from mu),
        s(t) = sqrt(t^2 sigma^2 + (1 - t)^2)
        """
        arr = as_array(z)
        zb = arr if arr.ndim == 3 else arr[None]
        self._check_width(zb)
        mu, sigma = self._class_moments(_conditions(c, zb.shape[0]))
        t0, t1 = as_time(t_from), as_time(t_to)
        var = sigma * sigma
        s0 = np.sqrt(t0 * t0 * var + (1.0 - t0) ** 2)
        s1 = np.sqrt(t1 * t1 * var + (1.0 - t1) ** 2)
        out = t1 * mu + (s1 / s0) * (zb - t0 * mu)
        return rewrap(z, out if arr.ndim == 3 else out[0])

    def sample_data(self, label: int, n: int, rng: np.random.Generator, L: int = 1) -> np.ndarray:
        """Draw n exact data samples of class `label` as an (n, L, d) array."""
        mu, sigma = self._class_moments([Condition.of_label(label)])
        return mu[0] + sigma[0] * rng.standard_normal((n, L, self.d))


def oracle_validate(
    field: GaussianOracleField,
    t: Union[FlowStep, float],
    num_samples: int,
    rng: np.random.Generator,
    bins: int = 20,
    label: int = 0
) -> float:
    """
    Monte-Carlo check of the oracle velocity.

    Draws (x, eps) pairs, forms z_t, bins each coordinate of z_t into
    quantile bins and compares the empirical mean of x - eps per bin with
    the mean oracle velocity over the same bin.

    Args:
        field: Oracle under test
        t: Flow step in the open interval (0, 1)
        num_samples: Monte-Carlo sample count
        rng: Generator for the draws
        bins: Quantile bins per coordinate
        label: Class whose moments are checked

    Returns:
        Largest absolute binned deviation over all coordinates
    """
    tt = as_time(t)
    if not 0.0 < tt < 1.0:
        raise validation_error(ErrorCode.DOMAIN_ERROR, f"Oracle check needs 0 < t < 1, got {tt}", field="t")
    x = field.sample_data(label, num_samples, rng)
    eps = rng.standard_normal(x.shape)
    z = tt * x + (1.0 - tt) * eps
    v = field.eval(z, tt, Condition.of_label(label))
    target = x - eps
    worst = 0.0
    for j in range(field.d):
        frame = pd.DataFrame({
            "z": z[:, 0, j],
            "target": target[:, 0, j],
            "oracle": v[:, 0, j],
        })
        frame["bin"] = pd.qcut(frame["z"], q=bins, labels=False, duplicates="drop")
        means = frame.groupby("bin")[["target", "oracle"]].mean()
        worst = max(worst, float((means["target"] - means["oracle"]).abs().max()))
    logger.debug(f"Oracle check t={tt} n={num_samples}: max binned deviation {worst:.4g}")
    return worst


def silu(a: np.ndarray) -> np.ndarray:
    return a * expit(a)


def silu_grad(a: np.ndarray) -> np.ndarray:
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


def time_features(t: np.ndarray, n_freqs: int) -> np.ndarray:
    """[t, sin(pi 2^k t), cos(pi 2^k t)] for k < n_freqs, one row per item."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if n_freqs == 0:
        return t
    freqs = np.pi * (2.0 ** np.arange(n_freqs))
    angles = t * freqs[None, :]
    return np.concatenate([t, np.sin(angles), np.cos(angles)], axis=1)


def param_names(cfg: MlpConfig) -> List[str]:
    """Canonical parameter order (also the checkpoint order)."""
    names = ["emb"]
    for i in range(cfg.hidden_layers + 1):
        names += [f"W{i}", f"b{i}"]
    return names


def param_shapes(cfg: MlpConfig) -> Dict[str, Tuple[int, ...]]:
    in_dim = cfg.L * cfg.d + 1 + 2 * cfg.n_freqs + cfg.emb_dim
    widths = [in_dim] + [cfg.width] * cfg.hidden_layers + [cfg.L * cfg.d]
    shapes: Dict[str, Tuple[int, ...]] = {"emb": (cfg.num_classes + 1, cfg.emb_dim)}
    for i in range(len(widths) - 1):
        shapes[f"W{i}"] = (widths[i], widths[i + 1])
        shapes[f"b{i}"] = (widths[i + 1],)
    return shapes


def init_params(cfg: MlpConfig, seed: Optional[int] = None) -> Params:
    """Xavier-uniform weights, zero biases, unit-normal embeddings."""
    rng = make_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "emb":
            params[name] = rng.standard_normal(shape)
        elif name.startswith("W"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


class MlpField(VelocityField):
    """
    Trainable velocity network.

    Input is the flattened sequence, sinusoidal features of t and a class
    embedding; hidden layers use SiLU. Row `num_classes` of the embedding
    table is the learned null embedding. An Embedding condition is fed to
    the network directly in place of a table row.
    """

    def __init__(self, cfg: MlpConfig, params: Optional[Params] = None, ema_params: Optional[Params] = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)
        self.ema_params = ema_params
        expected = param_shapes(cfg)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                got = None if name not in self.params else self.params[name].shape
                raise validation_error(
                    ErrorCode.INVALID_ARGUMENT,
                    f"Parameter {name} should have shape {shape}, got {got}",
                    field="params"
                )

    @property
    def null_index(self) -> int:
        return self.cfg.num_classes

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def with_ema(self) -> "MlpField":
        """Field evaluating the EMA parameters (raw ones when no EMA exists)."""
        source = self.ema_params if self.ema_params is not None else self.params
        return MlpField(self.cfg, {k: v.copy() for k, v in source.items()})

    def copy(self) -> "MlpField":
        ema = None if self.ema_params is None else {k: v.copy() for k, v in self.ema_params.items()}
        return MlpField(self.cfg, {k: v.copy() for k, v in self.params.items()}, ema)

    def embedding_of(self, c: Condition) -> np.ndarray:
        if c.kind == ConditionKind.EMBEDDING:
            vec = np.asarray(c.embedding, dtype=np.float64)
            if vec.shape != (self.cfg.emb_dim,):
                raise validation_error(
                    ErrorCode.INVALID_ARGUMENT,
                    f"Embedding has width {vec.size}, field expects {self.cfg.emb_dim}",
                    field="c"
                )
            return vec
        return self.params["emb"][self._table_index(c)]

    def _table_index(self, c: Condition) -> int:
        if c.kind == ConditionKind.NULL:
            return self.null_index
        if c.label >= self.cfg.num_classes:
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Class {c.label} out of range for {self.cfg.num_classes} classes",
                field="c"
            )
        return int(c.label)

    def _inputs(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> Tuple[np.ndarray, np.ndarray]:
        if z.shape[1:] != (self.cfg.L, self.cfg.d):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Network expects (L, d)=({self.cfg.L}, {self.cfg.d}), got {z.shape[1:]}",
                field="z"
            )
        # -1 marks items fed a raw embedding vector
        rows = np.array(
            [-1 if c.kind == ConditionKind.EMBEDDING else self._table_index(c) for c in conds],
            dtype=np.int64
        )
        emb = np.stack([self.embedding_of(c) for c in conds])
        h0 = np.concatenate([z.reshape(z.shape[0], -1), time_features(t, self.cfg.n_freqs), emb], axis=1)
        return h0, rows

    def forward_with_cache(
        self,
        z: np.ndarray,
        t: np.ndarray,
        conds: List[Condition]
    ) -> Tuple[np.ndarray, Dict[str, Any]]:
        """Forward pass keeping the activations needed by `backward`."""
        h, rows = self._inputs(z, t, conds)
        hs, pre = [h], []
        n = self.cfg.hidden_layers
        for i in range(n):
            a = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = silu(a)
            pre.append(a)
            hs.append(h)
        out = h @ self.params[f"W{n}"] + self.params[f"b{n}"]
        return out.reshape(z.shape), {"hs": hs, "pre": pre, "rows": rows}

    def backward(self, cache: Dict[str, Any], dout: np.ndarray) -> Params:
        """
        Parameter gradients given dLoss/dOutput.

        Args:
            cache: Activations from forward_with_cache
            dout: Gradient with respect to the (B, L, d) output

        Returns:
            Gradient for every parameter, keyed like `params`
        """
        hs, pre, rows = cache["hs"], cache["pre"], cache["rows"]
        n = self.cfg.hidden_layers
        g = dout.reshape(dout.shape[0], -1)
        grads: Params = {}
        for i in range(n, -1, -1):
            grads[f"W{i}"] = hs[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
            if i > 0:
                g = g * silu_grad(pre[i - 1])
        emb_grad = np.zeros_like(self.params["emb"])
        table = rows >= 0
        if np.any(table):
            np.add.at(emb_grad, rows[table], g[table, -self.cfg.emb_dim:])
        grads["emb"] = emb_grad
        return grads

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        out, _ = self.forward_with_cache(z, t, conds)
        return out


class GuidedField(VelocityField):
    """Classifier-free guidance: v_null + gamma (v_c - v_null)."""

    def __init__(self, inner: VelocityField, gamma: float):
        if gamma < 0:
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                f"Guidance scale must be >= 0, got {gamma}",
                field="gamma"
            )
        self.inner = inner
        self.gamma = float(gamma)

    @property
    def nfe_per_call(self) -> int:
        return 2 * self.inner.nfe_per_call

    def _evaluate(self, z: np.ndarray, t: np.ndarray, conds: List[Condition]) -> np.ndarray:
        if any(c.is_null for c in conds):
            raise validation_error(
                ErrorCode.INVALID_ARGUMENT,
                "Guidance needs a non-null condition",
                field="c"
            )
        v_null = self.inner._evaluate(z, t, [Condition.null()] * len(conds))
        v_cond = self.inner._evaluate(z, t, conds)
        return v_null + self.gamma * (v_cond - v_null)


def unwrap(field: VelocityField) -> VelocityField:
    """Innermost field below any guidance wrappers."""
    while isinstance(field, GuidedField):
        field = field.inner
    return field


def blend_condition(field: VelocityField, a: Condition, b: Condition, alpha: float) -> Condition:
    """
    Embedding-interpolation condition (1 - alpha) e_a + alpha e_b.

    Args:
        field: Field owning an embedding table (possibly guided)
        a: First condition (label or null)
        b: Second condition (label or null)
        alpha: Mixing weight in [0, 1]

    Returns:
        Embedding condition the network consumes directly
    """
    if not 0.0 <= alpha <= 1.0:
        raise validation_error(ErrorCode.DOMAIN_ERROR, f"alpha must lie in [0, 1], got {alpha}", field="alpha")
    base = unwrap(field)
    if not isinstance(base, MlpField):
        raise validation_error(
            ErrorCode.UNSUPPORTED_CONDITION,
            f"{type(base).__name__} has no embedding table to blend",
            field="c"
        )
    vec = (1.0 - alpha) * base.embedding_of(a) + alpha * base.embedding_of(b)
    return Condition.of_embedding(vec.tolist())


# MLPF checkpoint: magic, version, then L, d, classes, layers, width, emb_dim, n_freqs
CHECKPOINT_MAGIC = b"MLPF"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sB7I")


def _pack(params: Params, cfg: MlpConfig) -> bytes:
    return b"".join(params[name].astype("<f4").tobytes(order="C") for name in param_names(cfg))


def _unpack(buf: bytes, offset: int, cfg: MlpConfig) -> Tuple[Params, int]:
    params: Params = {}
    shapes = param_shapes(cfg)
    for name in param_names(cfg):
        count = int(np.prod(shapes[name]))
        values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
        params[name] = values.reshape(shapes[name]).astype(np.float64)
        offset += 4 * count
    return params, offset


def save_checkpoint(path: Union[str, Path], field: MlpField, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write raw and EMA parameters side by side plus a JSON sidecar.

    Args:
        path: Checkpoint file
        field: Trained network
        metadata: Extra sidecar content (dataset, training config, ...)

    Returns:
        Path of the checkpoint file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = field.cfg
    header = _CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.L, cfg.d, cfg.num_classes, cfg.hidden_layers, cfg.width, cfg.emb_dim, cfg.n_freqs
    )
    ema = field.ema_params if field.ema_params is not None else field.params
    path.write_bytes(header + _pack(field.params, cfg) + _pack(ema, cfg))
    sidecar = {"model": cfg.model_dump(mode="json"), **(metadata or {})}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved checkpoint {path} ({field.num_params} parameters)")
    return path


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path: Union[str, Path], field_name: str = "--checkpoint") -> MlpField:
    """Read an MLPF checkpoint; the returned field carries both parameter sets."""
    path = Path(path)
    if not path.exists():
        raise resource_error(
            ErrorCode.CHECKPOINT_NOT_FOUND,
            f"Checkpoint not found: {path}",
            field=field_name
        )
    buf = path.read_bytes()
    if len(buf) < _CKPT_HEADER.size:
        raise validation_error(ErrorCode.INVALID_FORMAT, f"{path} is too short to be a checkpoint", field=field_name)
    magic, version, L, d, classes, layers, width, emb_dim, n_freqs = _CKPT_HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise validation_error(
            ErrorCode.INVALID_FORMAT,
            f"{path} is not an MLPF v{CHECKPOINT_VERSION} checkpoint",
            field=field_name
        )
    cfg = MlpConfig(
        L=L, d=d, num_classes=classes, hidden_layers=layers, width=width, emb_dim=emb_dim, n_freqs=n_freqs
    )
    expected = _CKPT_HEADER.size + 2 * 4 * sum(int(np.prod(s)) for s in param_shapes(cfg).values())
    if len(buf) != expected:
        raise validation_error(
            ErrorCode.INVALID_FORMAT,
            f"{path} has {len(buf)} bytes, header implies {expected}",
            field=field_name
        )
    raw, offset = _unpack(buf, _CKPT_HEADER.size, cfg)
    ema, _ = _unpack(buf, offset, cfg)
    for params in (raw, ema):
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise processing_error(ErrorCode.INVALID_FORMAT, f"{path} holds non-finite parameters")
    logger.info(f"Loaded checkpoint {path}")
    return MlpField(cfg, raw, ema)


def load_sidecar(path: Union[str, Path]) -> Dict[str, Any]:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    return json.loads(side.read_text(encoding="utf-8"))
