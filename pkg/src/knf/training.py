"""Three-term objective, Adam, the training loop and checkpoint IO."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, NumericError
from .evaluation import smape
from .model import KnfConfig, forecast, forecast_batch, forward_call, init_params
from .nets import wrap

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KNF1"


@dataclass
class LossBreakdown:
    rec: float
    back: float
    forw: float

    @property
    def total(self) -> float:
        return self.rec + self.back + self.forw


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    clip_norm: float | None = 5.0
    val_metric: str = "rmse"  # or "smape"
    patience: int | None = 10
    val_max_windows: int = 256

    def __post_init__(self):
        if not (1e-5 <= self.learning_rate <= 1e-1):
            raise ValueError("learning rate outside the supported [1e-5, 1e-1] range")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be positive, epochs nonnegative")
        if self.val_metric not in ("rmse", "smape"):
            raise ValueError(f"unknown validation metric {self.val_metric!r}")


# --------------------------------------------------------------------- loss


def _mse(a: Tensor, b: np.ndarray) -> Tensor:
    return ((a - ad.constant(b)) ** 2).mean()


def loss_terms(config: KnfConfig, params: dict, lookbacks, targets) -> dict:
    """Tensor-valued reconstruction / lookback / forecast terms.

    `lookbacks` is (B, d, q) or a single (d, q) window; means are taken
    over the whole batch.
    """
    lookbacks = np.asarray(lookbacks, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if lookbacks.ndim == 2:
        lookbacks = lookbacks[None]
        targets = targets[None]
    out = forward_call(config, params, lookbacks)
    k = config.k
    rec = _mse(out["recon"], lookbacks)
    back = _mse(out["back"][:, :, k:], lookbacks[:, :, k:])
    steps = min(config.h, config.segments_per_call * k)
    forw = _mse(out["forw"][:, :, :steps], targets[:, :, :steps])
    return {"rec": rec, "back": back, "forw": forw}


def loss(config: KnfConfig, params: dict, lookback, target) -> LossBreakdown:
    tensors = params if isinstance(next(iter(params.values())), Tensor) else wrap(params)
    terms = loss_terms(config, tensors, np.asarray(lookback), np.asarray(target))
    breakdown = LossBreakdown(
        rec=float(terms["rec"].data),
        back=float(terms["back"].data),
        forw=float(terms["forw"].data),
    )
    if not np.isfinite(breakdown.total):
        raise NumericError("loss overflow")
    return breakdown


def batch_loss(config: KnfConfig, tensors: dict, samples) -> tuple:
    """(total Tensor, mean LossBreakdown) over a list of WindowSamples."""
    lookbacks = np.stack([s.lookback for s in samples])
    targets = np.stack([s.target for s in samples])
    terms = loss_terms(config, tensors, lookbacks, targets)
    total = terms["rec"] + terms["back"] + terms["forw"]
    breakdown = LossBreakdown(
        rec=float(terms["rec"].data),
        back=float(terms["back"].data),
        forw=float(terms["forw"].data),
    )
    return total, breakdown


# ------------------------------------------------------------------- optim


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def clip_gradients(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


def optimizer_step(
    state: AdamState,
    params: dict,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float | None = None,
) -> bool:
    """In-place Adam update. Returns False (and skips) on non-finite grads."""
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        logger.warning("skipping optimizer step: non-finite gradients")
        return False
    if clip_norm is not None:
        grads = clip_gradients(grads, clip_norm)
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for key, g in grads.items():
        if key not in state.m:
            state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        params[key] = params[key] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


# ------------------------------------------------------------------- train


def _validation_score(config, params, windows, metric: str, limit: int) -> float:
    windows = windows[:limit]
    if not windows:
        return float("nan")
    lookbacks = np.stack([w.lookback for w in windows])
    targets = np.stack([w.target for w in windows])
    preds, _ = forecast_batch(config, params, lookbacks)
    if metric == "smape":
        scores = [smape(p.ravel(), t.ravel()) for p, t in zip(preds, targets)]
        return float(np.mean(scores))
    return float(
        np.mean(np.sqrt(np.mean((preds - targets) ** 2, axis=(1, 2))))
    )


def train(
    config: KnfConfig,
    train_config: TrainConfig,
    windows,
    val_windows=None,
    initial_params: dict | None = None,
):
    """Epoch loop over shuffled mini-batches; deterministic per seed.

    Returns (best params, history) where history rows are dicts with the
    per-epoch mean loss terms and validation score. Best = lowest
    validation score, or the final parameters when there is no validation
    set.
    """
    if not windows:
        raise ValueError("empty training window set")
    rng = np.random.default_rng(train_config.seed)
    if initial_params is None:
        params = init_params(config, rng)
    else:
        params = {k: v.copy() for k, v in initial_params.items()}
    state = AdamState()
    history = []
    best_score = float("inf")
    best_params = {k: v.copy() for k, v in params.items()}
    stale = 0
    order = np.arange(len(windows))
    for epoch in range(train_config.epochs):
        rng.shuffle(order)
        epoch_terms = np.zeros(3)
        batches = 0
        for lo in range(0, len(order), train_config.batch_size):
            batch = [windows[i] for i in order[lo : lo + train_config.batch_size]]
            tensors = wrap(params, requires_grad=True)
            total, breakdown = batch_loss(config, tensors, batch)
            if not np.isfinite(breakdown.total):
                raise NumericError(f"training diverged at epoch {epoch}")
            total.backward()
            grads = {k: t.grad for k, t in tensors.items() if t.grad is not None}
            optimizer_step(
                state,
                params,
                grads,
                train_config.learning_rate,
                clip_norm=train_config.clip_norm,
            )
            epoch_terms += [breakdown.rec, breakdown.back, breakdown.forw]
            batches += 1
        rec, back, forw = epoch_terms / max(batches, 1)
        row = {
            "epoch": epoch,
            "rec": rec,
            "back": back,
            "forw": forw,
            "total": rec + back + forw,
            "val": float("nan"),
        }
        if val_windows:
            row["val"] = _validation_score(
                config,
                params,
                val_windows,
                train_config.val_metric,
                train_config.val_max_windows,
            )
            if row["val"] < best_score:
                best_score = row["val"]
                best_params = {k: v.copy() for k, v in params.items()}
                stale = 0
            else:
                stale += 1
        history.append(row)
        logger.info(
            "epoch %d: rec %.5g back %.5g forw %.5g val %.5g",
            epoch, rec, back, forw, row["val"],
        )
        if val_windows and train_config.patience and stale >= train_config.patience:
            logger.info("early stop at epoch %d", epoch)
            break
    if not val_windows:
        best_params = params
    return best_params, history


# -------------------------------------------------------------- checkpoints


def save_checkpoint(params: dict, path) -> None:
    """Magic | u64 count | per tensor: name, rank, dims, float64 LE values."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(params)))
        for name in sorted(params):
            value = np.ascontiguousarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", value.ndim))
            for dim in value.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(value.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic bytes at offset 0")
    offset = 4

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(data):
            raise FormatError(f"{path}: truncated at offset {offset}")
        chunk = data[offset : offset + count]
        offset += count
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape)
        params[name] = values.astype(np.float64).copy()
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return params


# ---------------------------------------------------------------- ensemble


def ensemble_forecast(
    members: list, config: KnfConfig, lookback, aggregate: str = "mean"
) -> np.ndarray:
    """Elementwise mean (or median) of member forecasts."""
    if not members:
        raise ValueError("ensemble needs at least one member")
    keys = set(members[0])
    if any(set(m) != keys for m in members):
        raise ValueError("ensemble members have mismatched parameter sets")
    preds = np.stack([forecast(config, m, lookback)[0] for m in members])
    if aggregate == "mean":
        return preds.mean(axis=0)
    if aggregate == "median":
        return np.median(preds, axis=0)
    raise ValueError(f"unknown aggregate {aggregate!r}")
