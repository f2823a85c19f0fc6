"""Neural primitives: MLPs, a single-head attention encoder, gradients.

Parameters live in a flat dict mapping names to float64 arrays. Forward
functions take the same dict with values wrapped as autodiff Tensors, so
one code path serves both inference and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input, hidden..., output); relu on hidden layers only."""

    widths: tuple
    activation: str = "relu"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class AttentionStackSpec:
    model_width: int
    layers: int = 1
    ff_width: int | None = None  # defaults to 2x model width
    heads: int = 1

    def __post_init__(self):
        if self.heads != 1:
            raise ValueError("only single-head attention is supported")
        if self.model_width < 1 or self.layers < 1:
            raise ValueError("model width and layer count must be positive")

    @property
    def ff(self) -> int:
        return self.ff_width if self.ff_width is not None else 2 * self.model_width


# ---------------------------------------------------------------------- init


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(
    prefix: str,
    spec: MlpSpec,
    rng: np.random.Generator,
    zero_final: bool = False,
) -> dict:
    """Glorot-uniform weights, zero biases. ``zero_final`` zeroes the last layer."""
    params = {}
    widths = spec.widths
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if zero_final and last:
            params[f"{prefix}.w{i}"] = np.zeros((w_in, w_out))
        else:
            params[f"{prefix}.w{i}"] = glorot(rng, w_in, w_out)
        params[f"{prefix}.b{i}"] = np.zeros(w_out)
    return params


def init_attention(
    prefix: str,
    spec: AttentionStackSpec,
    token_width: int,
    rng: np.random.Generator,
) -> dict:
    dm = spec.model_width
    params = {
        f"{prefix}.in.w": glorot(rng, token_width, dm),
        f"{prefix}.in.b": np.zeros(dm),
    }
    for layer in range(spec.layers):
        p = f"{prefix}.{layer}"
        for name in ("wq", "wk", "wv"):
            params[f"{p}.{name}"] = glorot(rng, dm, dm)
        params[f"{p}.ff.w0"] = glorot(rng, dm, spec.ff)
        params[f"{p}.ff.b0"] = np.zeros(spec.ff)
        params[f"{p}.ff.w1"] = glorot(rng, spec.ff, dm)
        params[f"{p}.ff.b1"] = np.zeros(dm)
    return params


def wrap(params: dict, requires_grad: bool = False) -> dict:
    """Wrap a numpy parameter dict into autodiff Tensors."""
    ctor = ad.parameter if requires_grad else ad.constant
    return {k: ctor(v) for k, v in params.items()}


# ------------------------------------------------------------------- forward


def mlp_forward(spec: MlpSpec, params: dict, prefix: str, x: Tensor) -> Tensor:
    """Affine-then-activation composition; the last layer has no activation."""
    if x.shape[-1] != spec.widths[0]:
        raise DimensionError(
            f"mlp input width {x.shape[-1]} != spec input width {spec.widths[0]}"
        )
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite MLP input")
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        x = x @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"]
        if i < n_layers - 1 and spec.activation == "relu":
            x = x.relu()
    return x


def attention_weights(
    spec: AttentionStackSpec, params: dict, prefix: str, tokens: Tensor
) -> Tensor:
    """Single-head attention matrix of the final layer over `tokens`.

    `tokens` is (count, width) or batched (B, count, width); the result is a
    (count, count) row-stochastic matrix per instance. Each layer applies
    attention and a position-wise MLP, both with residual connections.
    """
    if tokens.ndim not in (2, 3) or tokens.shape[-2] < 1:
        raise ValueError("tokens must be a nonempty (count, width) array")
    x = tokens @ params[f"{prefix}.in.w"] + params[f"{prefix}.in.b"]
    scale = 1.0 / np.sqrt(spec.model_width)
    attn = None
    for layer in range(spec.layers):
        p = f"{prefix}.{layer}"
        q = x @ params[f"{p}.wq"]
        k = x @ params[f"{p}.wk"]
        v = x @ params[f"{p}.wv"]
        attn = ((q @ k.mT) * scale).softmax(axis=-1)
        x = x + attn @ v
        h = (x @ params[f"{p}.ff.w0"] + params[f"{p}.ff.b0"]).relu()
        x = x + h @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"]
    return attn


# ------------------------------------------------------------------ gradient


def gradient(loss_fn, params: dict) -> tuple[float, dict]:
    """Evaluate `loss_fn` on Tensor-wrapped params and return (loss, grads).

    `loss_fn` must return a scalar Tensor. Gradients come back as numpy
    arrays keyed like `params`; parameters the loss never touches get zeros.
    """
    tensors = wrap(params, requires_grad=True)
    loss = loss_fn(tensors)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    loss.backward()
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }
    return value, grads
