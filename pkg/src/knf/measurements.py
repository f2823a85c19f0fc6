"""The predefined measurement-function dictionary and its evaluation.

A dictionary is an ordered list of scalar function descriptors applied
per feature to a latent matrix produced from learned coefficients, plus
optional pairwise product interactions between features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError

#: recognized descriptors: poly1..poly4, exp, sin
POLY_MAX = 4
EXP_GUARD = 700.0


def _check_descriptor(name: str) -> None:
    if name in ("exp", "sin"):
        return
    if name.startswith("poly"):
        order = int(name[4:])
        if 1 <= order <= POLY_MAX:
            return
    raise ValueError(f"unknown measurement descriptor {name!r}")


@dataclass(frozen=True)
class MeasurementSpec:
    """Ordered per-feature descriptors plus feature interaction pairs."""

    functions: tuple  # descriptor names, length n, shared by all features
    d: int
    k: int
    interactions: tuple = ()  # unordered feature index pairs (0-based)

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("d and k must be positive")
        if not self.functions:
            raise ValueError("at least one measurement function is required")
        for f in self.functions:
            _check_descriptor(f)
        for a, b in self.interactions:
            if a == b or not (0 <= a < self.d and 0 <= b < self.d):
                raise ValueError(f"bad interaction pair ({a}, {b})")
        if self.interactions and self.d < 2:
            raise ValueError("interactions need at least two features")

    @property
    def n(self) -> int:
        return len(self.functions)

    @property
    def m(self) -> int:
        return self.n * self.d + len(self.interactions)


def default_dictionary(d: int, k: int, interactions: bool = True) -> MeasurementSpec:
    """Polynomials up to order four, one exp, k sines; all feature pairs."""
    funcs = tuple(f"poly{p}" for p in range(1, POLY_MAX + 1)) + ("exp",) + ("sin",) * k
    pairs = tuple(combinations(range(d), 2)) if (interactions and d >= 2) else ()
    return MeasurementSpec(functions=funcs, d=d, k=k, interactions=pairs)


def dictionary_from_counts(
    d: int,
    k: int,
    poly_order: int = POLY_MAX,
    exp_count: int = 1,
    sin_count: int | None = None,
    interactions: bool = True,
) -> MeasurementSpec:
    """Build a dictionary from per-family counts (config-file surface)."""
    if sin_count is None:
        sin_count = k
    funcs = (
        tuple(f"poly{p}" for p in range(1, poly_order + 1))
        + ("exp",) * exp_count
        + ("sin",) * sin_count
    )
    pairs = tuple(combinations(range(d), 2)) if (interactions and d >= 2) else ()
    return MeasurementSpec(functions=funcs, d=d, k=k, interactions=pairs)


def measurement_index(spec: MeasurementSpec, feature: int, descriptor: int) -> int:
    """Flat index of descriptor `i` on feature `j` (both 1-based, row-major)."""
    if not (1 <= descriptor <= spec.n and 1 <= feature <= spec.d):
        raise ValueError(
            f"descriptor {descriptor} / feature {feature} out of range "
            f"for n={spec.n}, d={spec.d}"
        )
    return (descriptor - 1) * spec.d + (feature - 1)


def measurement_labels(spec: MeasurementSpec) -> list:
    """Human-readable label per flat measurement slot."""
    labels = [f"{f}(x{j})" for f in spec.functions for j in range(spec.d)]
    labels += [f"x{a}*x{b}" for a, b in spec.interactions]
    return labels


# --------------------------------------------------------------- evaluation


def latent_matrix_t(coeffs: Tensor, segment: Tensor) -> Tensor:
    """V[i, j] = sum_l coeffs[i, j, l] * segment[j, l] (autodiff path).

    Accepts an optional leading batch axis on both arguments.
    """
    if coeffs.ndim not in (3, 4) or coeffs.ndim != segment.ndim + 1:
        raise DimensionError(
            f"coefficient shape {coeffs.shape} incompatible with segment "
            f"shape {segment.shape}"
        )
    if coeffs.ndim == 3:
        if coeffs.shape[1:] != segment.shape:
            raise DimensionError(
                f"coefficient shape {coeffs.shape} incompatible with segment "
                f"shape {segment.shape}"
            )
        return (coeffs * segment.reshape(1, *segment.shape)).sum(axis=2)
    if coeffs.shape[2:] != segment.shape[1:] or coeffs.shape[0] != segment.shape[0]:
        raise DimensionError(
            f"coefficient shape {coeffs.shape} incompatible with segment "
            f"shape {segment.shape}"
        )
    b, d, k = segment.shape
    return (coeffs * segment.reshape(b, 1, d, k)).sum(axis=3)


def latent_matrix(coeffs: np.ndarray, segment: np.ndarray) -> np.ndarray:
    return latent_matrix_t(ad.constant(coeffs), ad.constant(segment)).data


def _apply_descriptor(name: str, row: Tensor) -> Tensor:
    if name.startswith("poly"):
        order = int(name[4:])
        return row if order == 1 else row**order
    if name == "exp":
        bad = np.abs(row.data) > EXP_GUARD
        if np.any(bad):
            idx = tuple(int(v) for v in np.argwhere(bad)[0])
            raise NumericError(f"exp input out of range at index {idx}")
        return row.exp()
    return row.sin()


def apply_measurements_t(spec: MeasurementSpec, v: Tensor) -> Tensor:
    """Flattened G(V): descriptor i applied to row i, interactions appended.

    `v` is (n, d) or batched (B, n, d); the result is (m,) or (B, m).
    """
    if v.shape[-2:] != (spec.n, spec.d):
        raise DimensionError(f"latent matrix shape {v.shape} != ({spec.n}, {spec.d})")
    if v.ndim == 2:
        rows = [_apply_descriptor(f, v[i]) for i, f in enumerate(spec.functions)]
        parts = [ad.stack(rows, axis=0).ravel()]
        if spec.interactions:
            inter = [
                (v[:, a] * v[:, b]).mean().reshape(1) for a, b in spec.interactions
            ]
            parts.append(ad.concatenate(inter))
        return ad.concatenate(parts) if len(parts) > 1 else parts[0]
    batch = v.shape[0]
    rows = [_apply_descriptor(f, v[:, i]) for i, f in enumerate(spec.functions)]
    parts = [ad.stack(rows, axis=1).reshape(batch, spec.n * spec.d)]
    if spec.interactions:
        inter = [
            (v[:, :, a] * v[:, :, b]).mean(axis=1).reshape(batch, 1)
            for a, b in spec.interactions
        ]
        parts.append(ad.concatenate(inter, axis=1))
    return ad.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


def apply_measurements(spec: MeasurementSpec, v: np.ndarray) -> np.ndarray:
    return apply_measurements_t(spec, ad.constant(v)).data
