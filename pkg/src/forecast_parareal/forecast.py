"""Gappy-POD forecasting over time-evolution bases.

A time-evolution basis ``Theta`` has one row per fine time instance after the
anchor instance: row ``k - 1`` describes the centered value at offset ``k``
(the anchor itself, offset 0, is always zero after centering). Forecasting fits
``Theta`` to ``alpha`` consecutive centered samples by least squares and reads
the fitted curve at the requested offset.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .timegrid import TimeGrid

__all__ = [
    "RankDeficientSample",
    "UnderdeterminedFit",
    "TimeEvolutionBasis",
    "LocalBasis",
    "SampleWindow",
    "sampled_pinv",
    "gappy_fit",
    "global_forecast",
    "global_forecast_weights",
    "local_basis",
    "local_bases",
    "local_forecast",
    "forecast_weights",
    "energy_truncation",
    "stability_constant",
]

RANK_TOL = 1e-12


class RankDeficientSample(UserWarning):
    """Sampled basis rows are numerically rank deficient; SVD pseudoinverse used."""


class UnderdeterminedFit(UserWarning):
    """Fewer samples than basis vectors."""


def _orthonormality_error(A: np.ndarray) -> float:
    if A.shape[1] == 0:
        return 0.0
    return float(np.abs(A.T @ A - np.eye(A.shape[1])).max())


@dataclass(frozen=True)
class TimeEvolutionBasis:
    """Global basis, ``n_fine x a`` with orthonormal columns."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[1] > m.shape[0]:
            raise ValueError(f"basis dimension {m.shape[1]} exceeds number of rows {m.shape[0]}")
        if _orthonormality_error(m) > 1e-10:
            raise ValueError("time-evolution basis columns are not orthonormal")
        object.__setattr__(self, "matrix", m)

    @property
    def a(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_fine(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class LocalBasis:
    """Basis of locally centered evolution on one coarse interval, ``m_bar x b``."""

    matrix: np.ndarray
    interval: int
    zero_block: bool = False

    @property
    def b(self) -> int:
        return self.matrix.shape[1]

    @property
    def m_bar(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SampleWindow:
    """``alpha`` consecutive samples at offsets ``start+1 .. start+alpha``."""

    start: int
    memory: int

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.start < 0:
            raise ValueError("window start must be >= 0")

    def check(self, rows: int):
        if self.start + self.memory > rows:
            raise ValueError(
                f"sample window {self.start + 1}..{self.start + self.memory} exceeds {rows} basis rows")


def sampled_pinv(basis: np.ndarray, window: SampleWindow) -> np.ndarray:
    """Pseudoinverse of the sampled rows ``basis[start:start+alpha]`` (shape ``cols x alpha``).

    Thin QR for full-rank blocks; SVD with cutoff ``1e-12 * sigma_max`` otherwise.
    """
    basis = np.atleast_2d(basis)
    window.check(basis.shape[0])
    block = basis[window.start:window.start + window.memory]
    b = block.shape[1]
    if b == 0:
        return np.zeros((0, window.memory))
    if window.memory < b:
        warnings.warn(f"memory {window.memory} < basis dimension {b}: underdetermined fit",
                      UnderdeterminedFit, stacklevel=3)
    if window.memory >= b:
        Q, R = la.qr(block, mode="economic")
        d = np.abs(np.diag(R))
        if d.min() > RANK_TOL * max(d.max(), np.finfo(float).tiny):
            return la.solve_triangular(R, Q.T)
    U, s, Vt = la.svd(block, full_matrices=False)
    cutoff = RANK_TOL * (s[0] if s.size else 0.0)
    if window.memory >= b:
        warnings.warn("sampled basis rows are rank deficient; using SVD pseudoinverse",
                      RankDeficientSample, stacklevel=3)
    keep = s > cutoff
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def gappy_fit(basis, window: SampleWindow, samples, anchor: float) -> np.ndarray:
    """Centered least-squares reconstruction over all basis rows.

    Returns ``Theta @ argmin_d ||Theta[window] d - (samples - anchor)||``.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (window.memory,):
        raise ValueError(f"expected {window.memory} samples, got shape {samples.shape}")
    coeffs = sampled_pinv(basis, window) @ (samples - anchor)
    return basis @ coeffs


def global_forecast(theta, y0: float, samples, i: int, k: int) -> float:
    """Forecast the value at fine index ``k`` from samples at ``i+1 .. i+alpha``."""
    mat = theta.matrix if isinstance(theta, TimeEvolutionBasis) else np.atleast_2d(theta)
    samples = np.asarray(samples, dtype=float)
    n_fine = mat.shape[0]
    if not 0 <= k <= n_fine:
        raise IndexError(f"forecast index {k} outside 0..{n_fine}")
    if not 0 <= i <= n_fine - samples.size:
        raise IndexError(f"sampling offset {i} outside 0..{n_fine - samples.size}")
    if k == 0:
        return float(y0)
    fit = gappy_fit(mat, SampleWindow(i, samples.size), samples, y0)
    return float(y0 + fit[k - 1])


def global_forecast_weights(theta, memory: int, targets) -> np.ndarray:
    """Weights ``gamma[t, i] = e_{k_t}^T Theta [P_{0,alpha} Theta]^+ e_i`` (zero row for ``k=0``)."""
    mat = theta.matrix if isinstance(theta, TimeEvolutionBasis) else np.atleast_2d(theta)
    pinv = sampled_pinv(mat, SampleWindow(0, memory))
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    out = np.zeros((targets.size, memory))
    nz = targets > 0
    out[nz] = mat[targets[nz] - 1] @ pinv
    return out


def energy_truncation(singular_values, upsilon: float) -> int:
    """Smallest ``i >= 0`` with ``sum(s[:i]) / sum(s) >= upsilon`` (plain, unsquared sums).

    Singular values below ``1e-13 * sum(s)`` never count toward reaching the
    threshold, so ``upsilon = 1`` drops numerically null directions.
    """
    s = np.asarray(singular_values, dtype=float)
    if not 0.0 <= upsilon <= 1.0:
        raise ValueError(f"energy criterion must lie in [0, 1], got {upsilon}")
    total = s.sum()
    if s.size == 0 or total <= 0.0 or upsilon <= 0.0:
        return 0
    frac = np.cumsum(s) / total
    hits = np.nonzero(frac >= upsilon - 1e-13)[0]
    return int(hits[0] + 1) if hits.size else s.size


def local_basis(theta, n: int, upsilon: float, grid: TimeGrid) -> LocalBasis:
    """Locally centered, SVD-truncated basis for coarse interval ``n``.

    Rows ``m_bar*n+1 .. m_bar*(n+1)`` of the global basis minus row ``m_bar*n``
    (a zero row for ``n = 0``).
    """
    mat = theta.matrix if isinstance(theta, TimeEvolutionBasis) else np.atleast_2d(theta)
    if not 0 <= n < grid.M:
        raise IndexError(f"coarse interval {n} outside 0..{grid.M - 1}")
    if not 0.0 <= upsilon <= 1.0:
        raise ValueError(f"energy criterion must lie in [0, 1], got {upsilon}")
    if mat.shape[0] != grid.n_fine:
        raise ValueError(f"basis has {mat.shape[0]} rows, grid has {grid.n_fine} fine steps")
    start = grid.m_bar * n
    block = mat[start:start + grid.m_bar].copy()
    if n > 0:
        block -= mat[start - 1]
    scale = max(1.0, np.abs(mat).max(initial=0.0))
    if block.size == 0 or np.abs(block).max(initial=0.0) <= 1e-14 * scale:
        return LocalBasis(np.zeros((grid.m_bar, 0)), n, zero_block=True)
    U, s, _ = la.svd(block, full_matrices=False)
    b = energy_truncation(s, upsilon)
    return LocalBasis(U[:, :b], n)


def local_bases(theta, upsilon: float, grid: TimeGrid) -> list:
    return [local_basis(theta, n, upsilon, grid) for n in range(grid.M)]


def _local_matrix(basis) -> np.ndarray:
    return basis.matrix if isinstance(basis, LocalBasis) else np.atleast_2d(basis)


def local_forecast(basis, y_at_Tn: float, samples, k_offset: int) -> float:
    """Forecast at offset ``k_offset`` (0..m_bar) into the interval from the first ``alpha`` samples."""
    mat = _local_matrix(basis)
    samples = np.asarray(samples, dtype=float)
    m_bar = mat.shape[0]
    if samples.size > m_bar:
        raise ValueError(f"memory {samples.size} exceeds interval length {m_bar}")
    if not 0 <= k_offset <= m_bar:
        raise IndexError(f"forecast offset {k_offset} outside 0..{m_bar}")
    if k_offset == 0:
        return float(y_at_Tn)
    fit = gappy_fit(mat, SampleWindow(0, samples.size), samples, y_at_Tn)
    return float(y_at_Tn + fit[k_offset - 1])


def forecast_weights(basis, memory: int, target_offset: int) -> np.ndarray:
    """``gamma_i = e_target^T Theta [P_{0,alpha} Theta]^+ e_i``, ``i = 1..alpha``.

    Then ``forecast = anchor + sum_i gamma_i (sample_i - anchor)``.
    """
    mat = _local_matrix(basis)
    if memory < 1:
        raise ValueError("memory must be >= 1")
    if not 0 <= target_offset <= mat.shape[0]:
        raise IndexError(f"target offset {target_offset} outside 0..{mat.shape[0]}")
    if target_offset == 0:
        return np.zeros(memory)
    return mat[target_offset - 1] @ sampled_pinv(mat, SampleWindow(0, memory))


def stability_constant(basis, memory: int) -> float:
    """``1 / sigma_min`` of the first ``memory`` rows of ``basis``."""
    mat = _local_matrix(basis)
    s = la.svdvals(mat[:memory])
    if s.size < mat.shape[1] or s.min() == 0.0:
        return np.inf
    return float(1.0 / s.min())
