"""Closed-form speedup, stability, and convergence evaluators plus diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from .forecast import forecast_weights, stability_constant

__all__ = [
    "SpeedupInputs",
    "StabilityConstants",
    "speedup_local",
    "speedup_global",
    "speedup_fine_coarse",
    "speedup_newton_forecast",
    "denominator_local",
    "denominator_global",
    "denominator_fine_coarse",
    "stability_constants",
    "random_orthonormal",
    "stability_scaling_experiment",
    "lf_eigenvalue",
    "contraction_factor",
    "convergence_bound",
    "toeplitz_bound",
    "coarse_error_bound",
    "projection_diagnostics",
]


@dataclass(frozen=True)
class SpeedupInputs:
    """``n`` fine steps split into ``M`` intervals, memory ``alpha``, ``K`` iterations.

    ``tau_r`` is the cost of a residual evaluation relative to a full
    nonlinear solve (forecast Newton guesses only).
    """

    n: int
    M: int
    alpha: int
    K: int = 0
    tau_r: Optional[float] = None

    def __post_init__(self):
        if self.n < 1 or self.M < 1:
            raise ValueError("n and M must be positive")
        if self.n % self.M:
            raise ValueError(f"M={self.M} does not divide n={self.n}")
        if not 0 <= self.K <= self.M - 1:
            raise ValueError(f"K={self.K} outside 0..{self.M - 1}")
        if not 0 <= self.alpha <= self.m_bar:
            raise ValueError(f"alpha={self.alpha} outside 0..{self.m_bar}")
        if self.tau_r is not None and not 0 < self.tau_r <= 1:
            raise ValueError("tau_r must lie in (0, 1]")

    @property
    def m_bar(self) -> int:
        return self.n // self.M


def _ratio(n, den):
    if not den > 0:
        raise ValueError(f"nonpositive cost denominator {den}")
    return n / den


def denominator_local(p: SpeedupInputs) -> float:
    return (p.alpha * (p.M - p.K / 2) + p.m_bar) * (p.K + 1) - p.alpha * (p.K + 1)


def denominator_global(p: SpeedupInputs) -> float:
    a, K = p.alpha, p.K
    return a * (1 + (K > 0)) + a * K * (p.M - (1 + K) / 2) + (K + 1) * p.m_bar - a * K


def denominator_fine_coarse(p: SpeedupInputs) -> float:
    return (p.M + p.m_bar - p.K / 2) * (p.K + 1)


def speedup_local(p: SpeedupInputs) -> float:
    """Local-forecast initialization with the local-forecast coarse propagator."""
    return _ratio(p.n, denominator_local(p))


def speedup_global(p: SpeedupInputs) -> float:
    """Global-forecast initialization with the local-forecast coarse propagator."""
    return _ratio(p.n, denominator_global(p))


def speedup_fine_coarse(p: SpeedupInputs) -> float:
    """Coarse propagator = fine integrator with step ``H``, coarse step costing one fine step."""
    return _ratio(p.n, denominator_fine_coarse(p))


def speedup_newton_forecast(kind: str, p: SpeedupInputs) -> float:
    """Ideal-case speedup with forecast Newton guesses (converged after initialization)."""
    if p.tau_r is None:
        raise ValueError("tau_r is required")
    if kind == "local":
        return _ratio(p.n, (p.M - 1) * p.alpha + (p.m_bar - p.alpha) * p.tau_r)
    if kind == "global":
        return _ratio(p.n, p.alpha + p.tau_r * p.m_bar)
    raise ValueError(f"kind must be 'local' or 'global', got {kind!r}")


@dataclass(frozen=True)
class StabilityConstants:
    beta_small: float
    beta: float
    alpha_stab: float
    C_stab: float
    memory: int

    @property
    def beta_sqrt_alpha(self) -> float:
        return self.beta * math.sqrt(self.memory)


def stability_constants(gamma, memory: int, m_bar: int) -> StabilityConstants:
    """Constants of the local-forecast stability estimate from forecast weights ``gamma``."""
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != memory:
        raise ValueError(f"expected {memory} weights, got {gamma.size}")
    beta_small = abs(1.0 - gamma.sum())
    beta = float(np.linalg.norm(gamma))
    bsa = beta * math.sqrt(memory)
    alpha_stab = beta_small + bsa
    C = (memory / m_bar) * bsa / alpha_stab if alpha_stab > 0 else math.nan
    return StabilityConstants(beta_small, beta, alpha_stab, C, memory)


def random_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Haar-distributed orthonormal columns: QR of a Gaussian matrix with sign-fixed ``R``."""
    Q, R = la.qr(rng.standard_normal((rows, cols)), mode="economic")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def stability_scaling_experiment(H: float, sampling_fraction: float, m_bars: Sequence[int],
                                 trials: int = 50, seed: int = 0, basis_dim: int = 3) -> list:
    """Average stability constants over random orthonormal interval bases.

    For each ``m_bar``, the memory is ``round(sampling_fraction * m_bar)`` and
    the forecast targets the interval end. Trial ``t`` at ``m_bar`` draws from
    a generator seeded with ``(seed, m_bar, t)``.

    Returns
    -------
    list of dict
        Keys ``m_bar, h, alpha, beta_small, beta, sqrt_alpha,
        beta_sqrt_alpha, alpha_stab, C_stab``.
    """
    if not 0 < sampling_fraction <= 1:
        raise ValueError("sampling_fraction must lie in (0, 1]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for m_bar in m_bars:
        m_bar = int(m_bar)
        alpha = max(1, int(round(sampling_fraction * m_bar)))
        acc = np.zeros(5)
        for t in range(trials):
            rng = np.random.default_rng([seed, m_bar, t])
            basis = random_orthonormal(rng, m_bar, basis_dim)
            sc = stability_constants(forecast_weights(basis, alpha, m_bar), alpha, m_bar)
            acc += (sc.beta_small, sc.beta, sc.beta_sqrt_alpha, sc.alpha_stab, sc.C_stab)
        acc /= trials
        b_small, beta, bsa, a_stab, c_stab = map(float, acc)
        rows.append(dict(m_bar=m_bar, h=H / m_bar, alpha=alpha, beta_small=b_small, beta=beta,
                         sqrt_alpha=math.sqrt(alpha), beta_sqrt_alpha=bsa,
                         alpha_stab=a_stab, C_stab=c_stab))
    return rows


def lf_eigenvalue(lam_F: float, gamma) -> float:
    """Amplification of the local-forecast coarse step for ``dx/dt = a x``."""
    gamma = np.asarray(gamma, dtype=float).ravel()
    powers = lam_F ** np.arange(1, gamma.size + 1)
    return float(1.0 + gamma @ (powers - 1.0))


def contraction_factor(lam_F: float, gamma, m_bar: int) -> float:
    return abs(lam_F ** m_bar - lf_eigenvalue(lam_F, gamma))


def convergence_bound(lam_F: float, gamma, m_bar: int, M: int, K: int,
                      initial_error: float) -> float:
    """Superlinear bound ``rho^K * prod_{j<=K}(M-j) / K! * e0``."""
    rho = contraction_factor(lam_F, gamma, m_bar)
    if K == 0:
        return float(initial_error)
    comb = math.prod(M - j for j in range(1, K + 1)) / math.factorial(K)
    return float(rho ** K * comb * initial_error)


def toeplitz_bound(lam_F: float, gamma, m_bar: int, M: int, K: int,
                   initial_error: float) -> float:
    """``rho^K ||T^K||_inf e0`` with ``T`` lower Toeplitz, first column ``(0, 1, lam, lam^2, ...)``."""
    lam = lf_eigenvalue(lam_F, gamma)
    rho = contraction_factor(lam_F, gamma, m_bar)
    col = np.zeros(M)
    col[1:] = lam ** np.arange(M - 1)
    T = la.toeplitz(col, np.zeros(M))
    TK = np.linalg.matrix_power(T, K)
    return float(rho ** K * np.abs(TK).sum(axis=1).max() * initial_error)


def coarse_error_bound(basis, memory: int, centered_restricted) -> dict:
    """Gappy constant and projection residual of one restricted component on one interval.

    ``centered_restricted`` holds the fine values at offsets ``1..m_bar``
    minus the anchor. The product bounds that component's forecast error.
    """
    mat = basis.matrix if hasattr(basis, "matrix") else np.atleast_2d(basis)
    h = np.asarray(centered_restricted, dtype=float)
    kappa = stability_constant(mat, memory)
    residual = float(np.linalg.norm(h - mat @ (mat.T @ h)))
    return dict(kappa=kappa, projection_residual=residual, bound=kappa * residual)


def projection_diagnostics(thetas: Sequence, trajectory) -> list:
    """Per component ``(eps_j, m_j)`` of a reduced trajectory against its time-evolution basis.

    ``trajectory`` has ``n_fine + 1`` rows (row 0 is the initial state); the
    centered unroll of component ``j`` is ``trajectory[1:, j] - trajectory[0, j]``.
    """
    traj = np.asarray(trajectory, dtype=float)
    H = traj[1:] - traj[0]
    total = np.linalg.norm(H)
    out = []
    for j, th in enumerate(thetas):
        mat = th.matrix if hasattr(th, "matrix") else np.atleast_2d(th)
        h = H[:, j]
        nh = np.linalg.norm(h)
        eps = float(np.linalg.norm(h - mat @ (mat.T @ h)) / nh) if nh > 0 else 0.0
        out.append((eps, float(nh / total) if total > 0 else 0.0))
    return out
