"""Eigen-analysis of learned operators and per-eigenfunction traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .model import KnfConfig, forward_call, reconstruct
from .nets import wrap

RANK_TOL = 1e-10


@dataclass
class Spectrum:
    eigenvalues: np.ndarray  # complex, sorted by descending modulus
    eigenvectors: np.ndarray  # (m, m), column j pairs with eigenvalue j
    residuals: np.ndarray  # per-pair ||K v - lambda v||

    def __len__(self):
        return len(self.eigenvalues)

    def rows(self):
        """CSV rows: index, re, im, modulus, residual."""
        return [
            (j, lam.real, lam.imag, abs(lam), float(res))
            for j, (lam, res) in enumerate(zip(self.eigenvalues, self.residuals))
        ]


def eigendecompose(matrix: np.ndarray) -> Spectrum:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(matrix)):
        raise NumericError("non-finite operator entries")
    try:
        values, vectors = np.linalg.eig(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from None
    order = np.argsort(-np.abs(values), kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    residuals = np.linalg.norm(matrix @ vectors - vectors * values, axis=0)
    norm = np.linalg.norm(matrix)
    if norm > 0 and np.any(residuals > 1e-8 * norm):
        raise NumericError("eigenpair residuals exceed tolerance")
    return Spectrum(eigenvalues=values, eigenvectors=vectors, residuals=residuals)


def eigencomponents(spectrum: Spectrum, g: np.ndarray) -> list:
    """Express g in the eigenbasis; component j is c_j * v_j and the
    components sum back to g."""
    v = spectrum.eigenvectors
    smallest = np.linalg.svd(v, compute_uv=False)[-1]
    if smallest < RANK_TOL:
        raise NumericError(
            f"eigenbasis is numerically rank-deficient (sigma_min={smallest:.2e})"
        )
    coeffs = np.linalg.solve(v, np.asarray(g, dtype=np.complex128))
    return [coeffs[j] * v[:, j] for j in range(v.shape[1])]


def conjugate_partner(eigenvalues: np.ndarray, j: int, tol: float = 1e-9) -> int | None:
    """Index of the conjugate-pair partner of eigenvalue j, if any."""
    lam = eigenvalues[j]
    if abs(lam.imag) < tol:
        return None
    dist = np.abs(eigenvalues - np.conj(lam))
    partner = int(np.argmin(dist))
    return partner if partner != j and dist[partner] < tol else None


def eigenfunction_reconstruction(
    config: KnfConfig,
    params: dict,
    lookback: np.ndarray,
    component: int,
    merge_conjugates: bool = True,
):
    """Decode the lookback trace carried by a single eigenfunction.

    The operator decomposed is the same global+local sum used on the
    lookback rollout of this window. Returns ((d, q) block, Spectrum).
    """
    tensors = wrap(params)
    out = forward_call(config, tensors, np.asarray(lookback, dtype=np.float64))
    spectrum = eigendecompose(out["k_back"].data[0])
    if not (0 <= component < len(spectrum)):
        raise ValueError(f"component {component} out of range for m={len(spectrum)}")
    g0 = out["measurements"][0].data[0]
    comps = eigencomponents(spectrum, g0)
    lam = spectrum.eigenvalues[component]
    vec = comps[component]
    partner = conjugate_partner(spectrum.eigenvalues, component) if merge_conjugates else None
    blocks = []
    for i in range(config.segments):
        g_i = lam**i * vec
        if partner is not None:
            g_i = g_i + spectrum.eigenvalues[partner] ** i * comps[partner]
        decoded = reconstruct(config, tensors, _real_tensor(g_i))
        blocks.append(decoded.data)
    return np.concatenate(blocks, axis=1), spectrum


def _real_tensor(g: np.ndarray):
    from . import autodiff as ad

    return ad.constant(np.real(g))


def match_eigenvalues(learned, truth, tol: float) -> list:
    """For each true eigenvalue: (nearest learned value, distance, pass flag)."""
    learned_values = (
        learned.eigenvalues if isinstance(learned, Spectrum) else np.asarray(learned)
    )
    if len(learned_values) == 0 or len(truth) == 0:
        raise ValueError("both eigenvalue lists must be nonempty")
    out = []
    for true_value in truth:
        dist = np.abs(learned_values - true_value)
        best = int(np.argmin(dist))
        out.append((learned_values[best], float(dist[best]), bool(dist[best] <= tol)))
    return out
