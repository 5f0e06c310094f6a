"""Dynamical systems, Newton's method, and one-step implicit integrators.

Every implicit step solved here has the residual

    r(w) = w - xi - dt * (theta * g(w; t_next) + (1 - theta) * g(xi; t_prev))

with ``theta = 1`` for backward Euler and ``theta = 1/2`` for Crank-Nicolson.
Systems may override :meth:`DynamicalSystem.implicit_solve` (the LSPG reduced
model does) as long as they keep the same call signature.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .timegrid import TimeGrid

__all__ = [
    "NewtonConfig",
    "NewtonResult",
    "NonConvergence",
    "SingularJacobian",
    "DynamicalSystem",
    "LinearSystem",
    "CallableSystem",
    "StepStats",
    "PropagatorKind",
    "newton_solve",
    "linear_solve",
    "be_step",
    "coarse_integrator_step",
    "fine_propagate",
    "fd_jacobian",
]


class NonConvergence(RuntimeError):
    """Newton's method hit ``max_iters`` without meeting the tolerance."""


class SingularJacobian(RuntimeError):
    """The Newton linear system could not be solved."""


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iters: int = 25

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


DEFAULT_NEWTON = NewtonConfig()


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float

    @property
    def exited_at_guess(self) -> bool:
        return self.iterations == 0


class PropagatorKind(str, enum.Enum):
    BE = "BE"
    CN = "CN"
    LF = "LF"
    GF = "GF"
    FINE = "FineAsCoarse"

    @classmethod
    def parse(cls, value) -> "PropagatorKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for kind in cls:
            if text.lower() in (kind.value.lower(), kind.name.lower()):
                return kind
        if text.lower() in ("fine", "fine_as_coarse", "fineascoarse", "f"):
            return cls.FINE
        raise ValueError(f"unknown propagator kind {value!r}")


def linear_solve(A, b):
    """Solve ``A x = b`` by LU with partial pivoting (dense or sparse ``A``)."""
    try:
        if sp.issparse(A):
            with np.errstate(all="raise"):
                x = spla.spsolve(sp.csc_matrix(A), b)
        else:
            lu, piv = la.lu_factor(A, check_finite=True)
            if np.any(np.abs(np.diag(lu)) == 0.0):
                raise la.LinAlgError("exactly singular matrix")
            x = la.lu_solve((lu, piv), b)
    except (la.LinAlgError, ValueError, FloatingPointError, RuntimeError) as exc:
        raise SingularJacobian(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularJacobian("linear solve produced non-finite values")
    return x


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    residual_jacobian: Callable[[np.ndarray], object],
    guess,
    cfg: NewtonConfig = DEFAULT_NEWTON,
) -> NewtonResult:
    """Solve ``residual(w) = 0`` starting from ``guess``.

    Converged when ``||r|| <= abs_tol`` or ``||r|| <= rel_tol * ||r(guess)||``.
    A guess that already satisfies ``abs_tol`` is returned unchanged with zero
    iterations.
    """
    w = np.array(guess, dtype=float, copy=True)
    if not np.all(np.isfinite(w)):
        raise ValueError("Newton initial guess is not finite")
    r = np.atleast_1d(residual(w))
    r0 = np.linalg.norm(r)
    if r0 <= cfg.abs_tol:
        return NewtonResult(w, 0, r0)
    rnorm = r0
    for it in range(1, cfg.max_iters + 1):
        J = residual_jacobian(w)
        if np.ndim(J) == 0:
            J = np.atleast_2d(J)
        dw = linear_solve(J, -r)
        w = w + dw.reshape(w.shape)
        r = np.atleast_1d(residual(w))
        rnorm = np.linalg.norm(r)
        if not np.isfinite(rnorm):
            raise NonConvergence(f"residual became non-finite at iteration {it}")
        if rnorm <= cfg.abs_tol or rnorm <= cfg.rel_tol * r0:
            return NewtonResult(w, it, rnorm)
    raise NonConvergence(f"no convergence in {cfg.max_iters} iterations (||r||={rnorm:.3e})")


@dataclass
class StepStats:
    """Accumulated solver work; shared by the propagators of one run."""

    steps: int = 0
    newton_iters: int = 0
    zero_iter_steps: int = 0
    seconds: float = 0.0
    # per-step (iterations, seconds, guided); only filled when ``record`` is set
    record: bool = False
    history: list = field(default_factory=list)

    def add(self, iters: int, seconds: float, guided: bool = False):
        self.steps += 1
        self.newton_iters += iters
        self.zero_iter_steps += iters == 0
        self.seconds += seconds
        if self.record:
            self.history.append((iters, seconds, guided))

    def merge(self, other: "StepStats"):
        self.steps += other.steps
        self.newton_iters += other.newton_iters
        self.zero_iter_steps += other.zero_iter_steps
        self.seconds += other.seconds
        if self.record:
            self.history.extend(other.history)


class DynamicalSystem:
    """``dx/dt = g(x; t)``, ``x(0) = x0``.

    Subclasses implement :meth:`velocity` and :meth:`jacobian`. The Jacobian
    may be a dense array or a scipy sparse matrix.
    """

    dim: int
    initial_state: np.ndarray

    def velocity(self, x, t):
        raise NotImplementedError

    def jacobian(self, x, t):
        raise NotImplementedError

    def implicit_solve(
        self,
        xi,
        t_prev: float,
        t_next: float,
        dt: float,
        theta: float = 1.0,
        guess=None,
        cfg: NewtonConfig = DEFAULT_NEWTON,
    ) -> NewtonResult:
        xi = np.asarray(xi, dtype=float)
        explicit = xi.copy()
        if theta != 1.0:
            explicit = explicit + dt * (1.0 - theta) * self.velocity(xi, t_prev)
        c = dt * theta
        eye = sp.identity(self.dim, format="csr") if self._sparse_jac() else np.eye(self.dim)

        def res(w):
            return w - explicit - c * self.velocity(w, t_next)

        def jac(w):
            return eye - c * self.jacobian(w, t_next)

        return newton_solve(res, jac, xi if guess is None else guess, cfg)

    def _sparse_jac(self) -> bool:
        return False


class CallableSystem(DynamicalSystem):
    """Wrap plain callables ``g(x, t)`` and ``dg/dx(x, t)``."""

    def __init__(self, velocity, jacobian, x0, sparse_jacobian: bool = False):
        self._g = velocity
        self._J = jacobian
        self.initial_state = np.atleast_1d(np.asarray(x0, dtype=float))
        self.dim = self.initial_state.size
        self._sparse = sparse_jacobian

    def velocity(self, x, t):
        return np.atleast_1d(np.asarray(self._g(x, t), dtype=float))

    def jacobian(self, x, t):
        J = self._J(x, t)
        return J if sp.issparse(J) else np.atleast_2d(np.asarray(J, dtype=float))

    def _sparse_jac(self) -> bool:
        return self._sparse


class LinearSystem(DynamicalSystem):
    """``g(x) = A x`` (time independent)."""

    def __init__(self, A, x0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.initial_state = np.atleast_1d(np.asarray(x0, dtype=float))
        self.dim = self.initial_state.size
        if self.A.shape != (self.dim, self.dim):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.dim, self.dim)}")

    def velocity(self, x, t):
        return self.A @ x

    def jacobian(self, x, t):
        return self.A


def fd_jacobian(sys: DynamicalSystem, x, t) -> np.ndarray:
    """Central finite-difference Jacobian, step ``1e-6 * (1 + |x_i|)``. Testing only."""
    x = np.asarray(x, dtype=float)
    J = np.empty((sys.dim, x.size))
    for i in range(x.size):
        d = 1e-6 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += d
        xm[i] -= d
        J[:, i] = (sys.velocity(xp, t) - sys.velocity(xm, t)) / (2 * d)
    return J


def _timed_solve(sys, xi, t_prev, t_next, dt, theta, guess, cfg, stats):
    t0 = time.perf_counter()
    res = sys.implicit_solve(xi, t_prev, t_next, dt, theta=theta, guess=guess, cfg=cfg)
    if stats is not None:
        stats.add(res.iterations, time.perf_counter() - t0, guided=guess is not None)
    return res


def be_step(sys: DynamicalSystem, xi, t_next: float, dt: float, guess=None,
            cfg: NewtonConfig = DEFAULT_NEWTON, stats: Optional[StepStats] = None) -> np.ndarray:
    """One backward-Euler step: solve ``w - xi - dt*g(w; t_next) = 0``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _timed_solve(sys, xi, t_next - dt, t_next, dt, 1.0, guess, cfg, stats).x


def coarse_integrator_step(kind, sys: DynamicalSystem, xi, T_n: float, H: float,
                           cfg: NewtonConfig = DEFAULT_NEWTON,
                           stats: Optional[StepStats] = None) -> np.ndarray:
    """One coarse step of size ``H`` with backward Euler or Crank-Nicolson."""
    kind = PropagatorKind.parse(kind)
    if not H > 0:
        raise ValueError("H must be positive")
    if kind is PropagatorKind.BE:
        theta = 1.0
    elif kind is PropagatorKind.CN:
        theta = 0.5
    else:
        raise ValueError(f"{kind.value} is not a coarse time integrator")
    return _timed_solve(sys, xi, T_n, T_n + H, H, theta, None, cfg, stats).x


def fine_propagate(sys: DynamicalSystem, grid: TimeGrid, xi, i: int, j: int,
                   cfg: NewtonConfig = DEFAULT_NEWTON, stats: Optional[StepStats] = None,
                   guesses: Optional[Callable[[int], Optional[np.ndarray]]] = None) -> np.ndarray:
    """Backward-Euler trajectory over fine indices ``i..j``; row 0 is ``xi``.

    ``guesses(k)`` may return a Newton initial guess for the state at fine
    index ``k`` (``None`` falls back to the previous state).
    """
    if not 0 <= i <= j <= grid.n_fine:
        raise IndexError(f"need 0 <= i <= j <= {grid.n_fine}, got i={i}, j={j}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    traj = np.empty((j - i + 1, xi.size))
    traj[0] = xi
    h = grid.h
    for row, k in enumerate(range(i + 1, j + 1), start=1):
        guess = guesses(k) if guesses is not None else None
        traj[row] = be_step(sys, traj[row - 1], k * h, h, guess=guess, cfg=cfg, stats=stats)
    return traj
