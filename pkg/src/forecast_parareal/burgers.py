"""Parameterized inviscid Burgers' equation with an exponential source.

    u_t + (u^2/2)_x = 0.02 exp(mu2 x),   x in [0, L],   u(0, t) = mu1,   u(x, 0) = 1

semi-discretized by a first-order Godunov finite-volume scheme.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .odecore import DynamicalSystem

__all__ = ["BurgersProblem", "godunov_flux", "godunov_flux_derivatives",
           "burgers_velocity", "burgers_jacobian", "PARAM_DOMAIN"]

PARAM_DOMAIN = ((1.5, 2.0), (0.02, 0.025))


def _f(u):
    return 0.5 * u * u


def godunov_flux(uL, uR):
    """Exact Riemann-solver flux for ``f(u) = u^2/2`` (scalar or array)."""
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    fL, fR = _f(uL), _f(uR)
    rarefaction = np.where(
        (uL <= 0.0) & (uR >= 0.0), 0.0, np.minimum(fL, fR)
    )
    flux = np.where(uL <= uR, rarefaction, np.maximum(fL, fR))
    return flux[()] if flux.ndim == 0 else flux


def godunov_flux_derivatives(uL, uR):
    """Partial derivatives ``(dF/duL, dF/duR)`` of :func:`godunov_flux`.

    At branch ties the left-state branch wins.
    """
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    dL = np.zeros(np.broadcast(uL, uR).shape)
    dR = np.zeros_like(dL)
    uL_b = np.broadcast_to(uL, dL.shape)
    uR_b = np.broadcast_to(uR, dL.shape)

    expand = uL_b <= uR_b
    # minimum of f over [uL, uR]: attained at uL if uL >= 0, at uR if uR <= 0, else at 0
    left_min = expand & (uL_b >= 0.0)
    right_min = expand & (uR_b <= 0.0) & ~left_min
    dL[left_min] = uL_b[left_min]
    dR[right_min] = uR_b[right_min]

    shock = ~expand
    take_left = shock & (_f(uL_b) >= _f(uR_b))
    take_right = shock & ~take_left
    dL[take_left] = uL_b[take_left]
    dR[take_right] = uR_b[take_right]
    return dL, dR


class BurgersProblem(DynamicalSystem):
    """Godunov finite-volume Burgers' model on ``cells`` uniform cells.

    Parameters
    ----------
    mu1 : float
        Inflow boundary value ``u(0, t)``.
    mu2 : float
        Exponential rate of the source term.
    cells : int
        Number of control volumes (state dimension).
    length : float
        Domain length.
    """

    def __init__(self, mu1: float, mu2: float, cells: int = 500, length: float = 100.0,
                 source_amplitude: float = 0.02, initial_value: float = 1.0):
        (lo1, hi1), (lo2, hi2) = PARAM_DOMAIN
        if not (lo1 <= mu1 <= hi1 and lo2 <= mu2 <= hi2):
            warnings.warn(f"mu=({mu1}, {mu2}) lies outside the reference domain {PARAM_DOMAIN}",
                          stacklevel=2)
        self.mu1 = float(mu1)
        self.mu2 = float(mu2)
        self.cells = int(cells)
        self.length = float(length)
        self.dx = self.length / self.cells
        self.x = (np.arange(self.cells) + 0.5) * self.dx
        self.source = source_amplitude * np.exp(self.mu2 * self.x)
        self.dim = self.cells
        self.initial_state = np.full(self.cells, float(initial_value))
        self._inflow_flux = float(_f(self.mu1))

    @property
    def mu(self):
        return (self.mu1, self.mu2)

    def velocity(self, x, t=0.0):
        return burgers_velocity(self, x, t)

    def jacobian(self, x, t=0.0):
        return burgers_jacobian(self, x, t)

    def _sparse_jac(self) -> bool:
        return True


def _interface_fluxes(problem: BurgersProblem, u):
    # F_{1/2} is the inflow flux, F_{N+1/2} the zero-gradient outflow flux
    F = np.empty(problem.cells + 1)
    F[0] = problem._inflow_flux
    F[1:-1] = godunov_flux(u[:-1], u[1:])
    F[-1] = _f(u[-1])
    return F


def burgers_velocity(problem: BurgersProblem, u, t=0.0):
    u = np.asarray(u, dtype=float)
    if u.shape != (problem.cells,):
        raise ValueError(f"state has shape {u.shape}, expected ({problem.cells},)")
    F = _interface_fluxes(problem, u)
    return -(F[1:] - F[:-1]) / problem.dx + problem.source


def burgers_jacobian(problem: BurgersProblem, u, t=0.0):
    """Tridiagonal Jacobian of :func:`burgers_velocity` as a CSR matrix."""
    u = np.asarray(u, dtype=float)
    n = problem.cells
    dL, dR = godunov_flux_derivatives(u[:-1], u[1:])
    # interface k+1/2 (k=1..n-1) couples cells k-1 and k (0-based)
    diag = np.zeros(n)
    # outgoing flux F_{i+1/2}: depends on u_i (left) and u_{i+1} (right)
    diag[:-1] -= dL
    diag[-1] -= u[-1]
    # incoming flux F_{i-1/2}: depends on u_{i-1} (left) and u_i (right)
    diag[1:] += dR
    upper = -dR  # d(-F_{i+1/2})/du_{i+1}
    lower = dL  # d(+F_{i-1/2})/du_{i-1}
    J = sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="csr")
    return J / problem.dx
