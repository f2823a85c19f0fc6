"""The full forecaster: encoder, operators, feedback loop, rollout.

Observations are encoded segment-by-segment into measurement vectors of
width m. A trainable global matrix, an attention-derived local matrix and
a diagonal adjustment produced from lookback prediction error propagate
those measurements; the decoder maps them back to observation segments.

All internal computation is batched over windows: blocks are (B, d, q),
measurement vectors (B, m), operators (B, m, m). The public per-window
operations wrap a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError
from .measurements import MeasurementSpec, apply_measurements_t, latent_matrix_t
from .nets import (
    AttentionStackSpec,
    MlpSpec,
    attention_weights,
    init_attention,
    init_mlp,
    mlp_forward,
    wrap,
)


@dataclass(frozen=True)
class KnfConfig:
    d: int
    k: int
    q: int
    h: int
    spec: MeasurementSpec
    encoder: MlpSpec
    decoder: MlpSpec
    attention: AttentionStackSpec
    feedback: MlpSpec
    segments_per_call: int = 1
    revin: bool = True
    dictionary_mode: str = "predefined"  # or "learned"
    use_global: bool = True
    use_local: bool = True
    use_feedback: bool = True
    feedback_refresh: bool = True  # recompute the adjustment every call

    def __post_init__(self):
        if self.q % self.k != 0 or self.q < 2 * self.k:
            raise ValueError("lookback q must be a multiple of k, at least 2k")
        if self.h < 1 or self.segments_per_call < 1:
            raise ValueError("h and segments_per_call must be positive")
        if self.dictionary_mode not in ("predefined", "learned"):
            raise ValueError(f"unknown dictionary_mode {self.dictionary_mode!r}")
        if not (self.use_global or self.use_local):
            raise ValueError("at least one of the global/local operators is required")
        if (self.spec.d, self.spec.k) != (self.d, self.k):
            raise ValueError("measurement spec disagrees with d/k")
        enc_out = self.m if self.dictionary_mode == "learned" else self.spec.n * self.d * self.k
        if self.encoder.widths[0] != self.d * self.k or self.encoder.widths[-1] != enc_out:
            raise ValueError("encoder widths must map d*k -> coefficient count")
        if self.decoder.widths[0] != self.m or self.decoder.widths[-1] != self.d * self.k:
            raise ValueError("decoder widths must map m -> d*k")
        if self.feedback.widths[0] != self.d * self.q or self.feedback.widths[-1] != self.m:
            raise ValueError("feedback widths must map d*q -> m")

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def segments(self) -> int:
        return self.q // self.k


@dataclass
class OperatorSet:
    """The per-call operator triple acting on measurement vectors."""

    global_op: np.ndarray  # (m, m)
    local: np.ndarray  # (m, m)
    adjustment: np.ndarray  # (m,) diagonal entries

    @property
    def combined(self) -> np.ndarray:
        return self.global_op + self.local + np.diag(self.adjustment)


def init_params(config: KnfConfig, rng: np.random.Generator) -> dict:
    """Fresh parameter dict; the feedback net's final layer starts at zero
    so training begins from the no-feedback model."""
    params = {}
    params.update(init_mlp("encoder", config.encoder, rng))
    if config.dictionary_mode == "predefined":
        # start the coefficients near 1/k so the dictionary begins at its
        # canonical measurement functions (V ~ the segment feature means)
        last = len(config.encoder.widths) - 2
        bias = params[f"encoder.b{last}"]
        params[f"encoder.b{last}"] = np.full_like(bias, 1.0 / config.k)
    params.update(init_mlp("decoder", config.decoder, rng))
    params.update(init_mlp("feedback", config.feedback, rng, zero_final=True))
    params.update(init_attention("attn", config.attention, config.segments, rng))
    # with no local operator the global matrix carries all propagation;
    # identity keeps initial rollouts bounded, zeros otherwise
    if config.use_local:
        params["global_op"] = np.zeros((config.m, config.m))
    else:
        params["global_op"] = np.eye(config.m)
    params["revin.scale"] = np.ones(config.d)
    params["revin.shift"] = np.zeros(config.d)
    return params


# ----------------------------------------------------------- batched pieces


def _encode_batch(config: KnfConfig, params: dict, segments: Tensor):
    """Segments (B, d, k) -> (latent (B, n, d) or None, measurements (B, m))."""
    b = segments.shape[0]
    flat = segments.reshape(b, config.d * config.k)
    if config.dictionary_mode == "learned":
        return None, mlp_forward(config.encoder, params, "encoder", flat)
    coeffs = mlp_forward(config.encoder, params, "encoder", flat).reshape(
        b, config.spec.n, config.d, config.k
    )
    v = latent_matrix_t(coeffs, segments)
    return v, apply_measurements_t(config.spec, v)


def _decode_batch(config: KnfConfig, params: dict, measurements: Tensor) -> Tensor:
    b = measurements.shape[0]
    return mlp_forward(config.decoder, params, "decoder", measurements).reshape(
        b, config.d, config.k
    )


def _apply(operator: Tensor, g: Tensor) -> Tensor:
    """(B, m, m) @ (B, m) -> (B, m)."""
    b, m = g.shape
    return (operator @ g.reshape(b, m, 1)).reshape(b, m)


def _rollout(config, params, operator, g0, count, skip_first=False):
    blocks = []
    g = g0
    if not skip_first:
        blocks.append(_decode_batch(config, params, g))
    for _ in range(count - 1 if not skip_first else count):
        g = _apply(operator, g)
        blocks.append(_decode_batch(config, params, g))
    return blocks


def _diag(vector: Tensor) -> Tensor:
    b, m = vector.shape
    return ad.constant(np.eye(m)) * vector.reshape(b, m, 1)


class _Revin:
    """Instance normalization tied to one batch of lookbacks, autodiff-aware."""

    def __init__(self, config, params, lookbacks: np.ndarray):
        self.enabled = config.revin
        self.mean = lookbacks.mean(axis=-1, keepdims=True)
        self.std = lookbacks.std(axis=-1, keepdims=True) + 1e-5
        self.scale = params["revin.scale"].reshape(config.d, 1)
        self.shift = params["revin.shift"].reshape(config.d, 1)

    def normalize(self, block: Tensor) -> Tensor:
        if not self.enabled:
            return block
        z = (block - ad.constant(self.mean)) / ad.constant(self.std)
        return z * self.scale + self.shift

    def denormalize(self, block: Tensor) -> Tensor:
        if not self.enabled:
            return block
        z = (block - self.shift) / self.scale
        return z * ad.constant(self.std) + ad.constant(self.mean)


def forward_call(config: KnfConfig, params: dict, lookbacks: np.ndarray, fixed_kc=None):
    """One autoregressive call over a batch. Returns a dict of Tensors:

    - recon: per-segment reconstructions, (B, d, q), raw scale
    - back: lookback rollout from the first segment, (B, d, q), raw scale
    - forw: segments_per_call predicted segments, (B, d, spc*k), raw scale
    - kc: adjustment diagonal (B, m) or None
    - k_back: global+local propagation matrix (B, m, m)
    - measurements: list of per-segment (B, m) vectors

    `params` values must already be Tensors (see nets.wrap); `lookbacks`
    is (B, d, q) (a single (d, q) window is promoted to a batch of one).
    """
    lookbacks = np.asarray(lookbacks, dtype=np.float64)
    if lookbacks.ndim == 2:
        lookbacks = lookbacks[None]
    if lookbacks.shape[1:] != (config.d, config.q):
        raise DimensionError(
            f"lookback shape {lookbacks.shape[1:]} != ({config.d}, {config.q})"
        )
    b = lookbacks.shape[0]
    m = config.m
    rev = _Revin(config, params, lookbacks)
    xn = rev.normalize(ad.constant(lookbacks))
    segments = [xn[:, :, i * config.k : (i + 1) * config.k] for i in range(config.segments)]
    gs = [_encode_batch(config, params, seg)[1] for seg in segments]

    k_local = None
    k_back = ad.constant(np.zeros((1, m, m)))
    if config.use_global:
        k_back = k_back + params["global_op"]
    if config.use_local:
        tokens = ad.stack(gs, axis=1).mT  # (B, m, segments)
        k_local = attention_weights(config.attention, params, "attn", tokens)
        k_back = k_back + k_local

    recon = ad.concatenate([_decode_batch(config, params, g) for g in gs], axis=2)
    back = ad.concatenate(
        _rollout(config, params, k_back, gs[0], config.segments), axis=2
    )

    kc = None
    k_forw = k_back
    if config.use_feedback:
        kc = fixed_kc
        if kc is None:
            err = (back - xn).reshape(b, config.d * config.q)
            kc = mlp_forward(config.feedback, params, "feedback", err)
        k_forw = k_back + _diag(kc)
    forw = ad.concatenate(
        _rollout(config, params, k_forw, gs[-1], config.segments_per_call, skip_first=True),
        axis=2,
    )

    return {
        "recon": rev.denormalize(recon),
        "back": rev.denormalize(back),
        "forw": rev.denormalize(forw),
        "kc": kc,
        "k_back": k_back,
        "measurements": gs,
    }


# -------------------------------------------------------- per-window surface


def encode(config: KnfConfig, params: dict, segment):
    """Segment (d, k) -> (latent matrix or None, measurement vector)."""
    tensors = _ensure_wrapped(params)
    seg = segment if isinstance(segment, Tensor) else ad.constant(segment)
    if seg.shape != (config.d, config.k):
        raise DimensionError(f"segment shape {seg.shape} != ({config.d}, {config.k})")
    v, g = _encode_batch(config, tensors, seg.reshape(1, config.d, config.k))
    return (None if v is None else v[0]), g[0]


def reconstruct(config: KnfConfig, params: dict, measurement) -> Tensor:
    tensors = _ensure_wrapped(params)
    g = measurement if isinstance(measurement, Tensor) else ad.constant(measurement)
    if g.shape != (config.m,):
        raise DimensionError(f"measurement length {g.shape} != ({config.m},)")
    return _decode_batch(config, tensors, g.reshape(1, config.m))[0]


def local_operator(config: KnfConfig, params: dict, measurements: list) -> Tensor:
    """Row-stochastic (m, m) attention over measurement-coordinate
    trajectories across the lookback segments."""
    if len(measurements) != config.segments:
        raise DimensionError(
            f"expected {config.segments} measurement vectors, got {len(measurements)}"
        )
    tensors = _ensure_wrapped(params)
    gs = [g if isinstance(g, Tensor) else ad.constant(g) for g in measurements]
    for g in gs:
        if g.shape != (config.m,):
            raise DimensionError(f"measurement length {g.shape} != ({config.m},)")
    tokens = ad.stack(gs, axis=0).T  # (m, segments)
    return attention_weights(config.attention, tensors, "attn", tokens)


def feedback_operator(config: KnfConfig, params: dict, predicted, observed) -> Tensor:
    """Diagonal adjustment entries from the lookback prediction error."""
    tensors = _ensure_wrapped(params)
    pred = predicted if isinstance(predicted, Tensor) else ad.constant(predicted)
    obs = observed if isinstance(observed, Tensor) else ad.constant(observed)
    if pred.shape != obs.shape:
        raise DimensionError("predicted/observed lookback shapes differ")
    err = (pred - obs).ravel()
    return mlp_forward(config.feedback, tensors, "feedback", err)


def lookback_predict(config: KnfConfig, params: dict, window: np.ndarray) -> np.ndarray:
    """Rollout of the global+local operator from the first segment's
    measurements across the lookback window (raw scale)."""
    if config.segments < 2:
        raise ValueError("lookback rollout needs at least two segments")
    return forward_call(config, _ensure_wrapped(params), window)["back"].data[0]


def forecast_batch(config: KnfConfig, params: dict, lookbacks, horizon=None):
    """Autoregressive forecast for a batch of lookbacks.

    Returns ((B, d, h) array, per-call trace list). Each trace entry holds
    the batched local operators (B, m, m) and adjustments (B, m).
    """
    h = config.h if horizon is None else int(horizon)
    if h < 1:
        raise ValueError("horizon must be positive")
    tensors = _ensure_wrapped(params)
    window = np.asarray(lookbacks, dtype=np.float64)
    if window.ndim == 2:
        window = window[None]
    b = window.shape[0]
    m = config.m
    global_op = tensors["global_op"].data.copy() if config.use_global else np.zeros((m, m))
    chunks, traces = [], []
    emitted = 0
    call_index = 0
    fixed_kc = None
    while emitted < h:
        out = forward_call(config, tensors, window, fixed_kc=fixed_kc)
        pred = out["forw"].data
        if not np.all(np.isfinite(pred)):
            raise NumericError(f"non-finite prediction at call {call_index}")
        if config.use_feedback and not config.feedback_refresh:
            fixed_kc = out["kc"]
        local = (
            (out["k_back"].data - global_op) if config.use_local else np.zeros((b, m, m))
        )
        kc = out["kc"].data if out["kc"] is not None else np.zeros((b, m))
        traces.append((np.broadcast_to(local, (b, m, m)), kc))
        chunks.append(pred)
        window = np.concatenate([window, pred], axis=2)[:, :, -config.q :]
        emitted += pred.shape[2]
        call_index += 1
    return np.concatenate(chunks, axis=2)[:, :, :h], traces


def forecast(config: KnfConfig, params: dict, lookback: np.ndarray, horizon=None):
    """Single-window h-step forecast: ((d, h) array, OperatorSet list)."""
    lookback = np.asarray(lookback, dtype=np.float64)
    if lookback.ndim != 2:
        raise DimensionError("forecast expects a single (d, q) lookback")
    preds, traces = forecast_batch(config, params, lookback[None], horizon)
    m = config.m
    global_op = (
        np.asarray(_ensure_wrapped(params)["global_op"].data)
        if config.use_global
        else np.zeros((m, m))
    )
    ops = [
        OperatorSet(global_op=global_op.copy(), local=local[0].copy(), adjustment=kc[0].copy())
        for local, kc in traces
    ]
    return preds[0], ops


def _ensure_wrapped(params: dict) -> dict:
    if isinstance(next(iter(params.values())), Tensor):
        return params
    return wrap(params)


def parameter_count(params: dict) -> int:
    return int(sum(v.size for v in params.values()))
