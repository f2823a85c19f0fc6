"""Time-series ingestion, windowing, instance normalization, synthesis."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

logger = logging.getLogger(__name__)

REVIN_EPS = 1e-5


@dataclass
class TimeSeries:
    values: np.ndarray  # (T, d)
    id: str
    weight: float = 1.0
    frequency: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] < 1:
            raise ValueError("a series needs at least one step")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"series {self.id!r} contains non-finite values")
        if self.weight < 0:
            raise ValueError("series weight must be nonnegative")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSample:
    lookback: np.ndarray  # (d, q)
    target: np.ndarray  # (d, h)
    source_id: str
    start: int


# ----------------------------------------------------------------------- io


def load_csv(path) -> TimeSeries:
    """One header row of feature names, one row per step, '.' decimals."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    d = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d:
            raise ParseError(f"{path}: line {lineno}: expected {d} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return TimeSeries(values=np.array(rows), id=path.stem)


def save_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    d = series.d
    header = ",".join(f"x{j}" for j in range(d))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in series.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_manifest(path) -> list:
    """One `path,weight` line per series; '#' comments; paths relative to it."""
    path = Path(path)
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (1, 2):
                raise ParseError(f"{path}: line {lineno}: expected `path[,weight]`")
            weight = 1.0
            if len(parts) == 2:
                try:
                    weight = float(parts[1])
                except ValueError:
                    raise ParseError(
                        f"{path}: line {lineno}: bad weight {parts[1]!r}"
                    ) from None
            series_path = Path(parts[0])
            if not series_path.is_absolute():
                series_path = path.parent / series_path
            series = load_csv(series_path)
            series.weight = weight
            out.append(series)
    return out


def write_manifest(path, entries) -> None:
    """`entries` is a list of (relative path, weight) pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# path,weight\n")
        for rel, weight in entries:
            fh.write(f"{rel},{weight}\n")


# ------------------------------------------------------------------ windows


def sliding_windows(series: TimeSeries, q: int, h: int, stride: int = 1) -> list:
    """Samples at starts 0, stride, 2*stride, ... with start + q + h <= T."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    samples = []
    values = series.values.T  # (d, T)
    for start in range(0, series.length - q - h + 1, stride):
        samples.append(
            WindowSample(
                lookback=values[:, start : start + q].copy(),
                target=values[:, start + q : start + q + h].copy(),
                source_id=series.id,
                start=start,
            )
        )
    return samples


def split(series_list, fractions=(0.8, 0.1, 0.1), min_length: int = 1):
    """Temporal per-series split; remainder steps go to the test slice.

    Slices shorter than `min_length` are dropped from that split with a
    warning (typically min_length = q + h).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    train, val, test = [], [], []
    for series in series_list:
        t = series.length
        n_train = int(np.floor(fractions[0] * t))
        n_val = int(np.floor(fractions[1] * t))
        bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, t)]
        for (lo, hi), bucket, name in zip(bounds, (train, val, test), ("train", "val", "test")):
            if hi - lo >= min_length:
                bucket.append(
                    TimeSeries(
                        values=series.values[lo:hi],
                        id=series.id,
                        weight=series.weight,
                        frequency=series.frequency,
                    )
                )
            else:
                warnings.warn(
                    f"series {series.id!r}: {name} slice of {hi - lo} steps "
                    f"is shorter than {min_length}; skipped"
                )
    return train, val, test


# -------------------------------------------------------------------- revin


@dataclass
class RevinState:
    """Per-feature lookback statistics plus a learnable affine map."""

    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,)
    eps: float = REVIN_EPS
    scale: np.ndarray | None = None
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.scale is None:
            self.scale = np.ones_like(self.mean)
        if self.shift is None:
            self.shift = np.zeros_like(self.mean)


def revin_stats(lookback: np.ndarray, scale=None, shift=None) -> RevinState:
    """Population statistics of a (d, q) lookback block."""
    return RevinState(
        mean=lookback.mean(axis=1),
        std=lookback.std(axis=1),
        scale=None if scale is None else np.asarray(scale, dtype=np.float64),
        shift=None if shift is None else np.asarray(shift, dtype=np.float64),
    )


def revin_normalize(state: RevinState, block: np.ndarray) -> np.ndarray:
    z = (block - state.mean[:, None]) / (state.std[:, None] + state.eps)
    return z * state.scale[:, None] + state.shift[:, None]


def revin_denormalize(state: RevinState, block: np.ndarray) -> np.ndarray:
    z = (block - state.shift[:, None]) / state.scale[:, None]
    return z * (state.std[:, None] + state.eps) + state.mean[:, None]


# --------------------------------------------------------------- oscillator


@dataclass(frozen=True)
class OscillatorParams:
    """Two-state system: dx1/dt = mu*x1, dx2/dt = lam*(x2 - x1^2)."""

    mu: float = -0.1
    lam: float = -1.0
    dt: float = 0.1
    steps: int = 200
    count: int = 36
    init_low: float = -1.0
    init_high: float = 1.0

    def __post_init__(self):
        if abs(self.mu - self.lam / 2.0) < 1e-12:
            raise ValueError("mu == lam/2 makes the closed-form solution singular")
        if self.dt <= 0 or self.steps < 1 or self.count < 1:
            raise ValueError("dt, steps and count must be positive")


def oscillator_generate(params: OscillatorParams, seed: int, prefix: str = "osc") -> list:
    """Closed-form trajectories from initial values uniform on the init box.

    x1(t) = x1(0) e^{mu t}
    x2(t) = (x2(0) - c x1(0)^2) e^{lam t} + c x1(0)^2 e^{2 mu t},
    with c = lam / (lam - 2 mu).
    """
    rng = np.random.default_rng(seed)
    c = params.lam / (params.lam - 2.0 * params.mu)
    t = np.arange(params.steps) * params.dt
    out = []
    for i in range(params.count):
        x10, x20 = rng.uniform(params.init_low, params.init_high, size=2)
        x1 = x10 * np.exp(params.mu * t)
        x2 = (x20 - c * x10**2) * np.exp(params.lam * t) + c * x10**2 * np.exp(
            2.0 * params.mu * t
        )
        out.append(TimeSeries(values=np.stack([x1, x2], axis=1), id=f"{prefix}{i:03d}"))
    return out
