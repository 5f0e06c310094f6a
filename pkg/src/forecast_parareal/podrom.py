"""Snapshot POD with time-evolution bases, and the LSPG reduced-order model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la

from .coarseprop import RestrictionPair
from .forecast import TimeEvolutionBasis, energy_truncation, local_bases
from .odecore import DEFAULT_NEWTON, DynamicalSystem, NewtonConfig, NewtonResult, NonConvergence
from .odecore import fine_propagate
from .timegrid import TimeGrid

__all__ = [
    "EmptyTruncation",
    "SnapshotSet",
    "PodModel",
    "RomSystem",
    "ForecastAssets",
    "collect_snapshots",
    "pod",
    "orthonormal_span",
    "build_rom",
    "rom_temporal_bases",
    "forecast_assets_for_rom",
]


class EmptyTruncation(ValueError):
    """The energy criterion kept no POD modes."""


@dataclass
class SnapshotSet:
    """Centered snapshot matrices, one ``N x n_fine`` block per training parameter."""

    matrices: list
    params: list

    def __post_init__(self):
        if not self.matrices:
            raise ValueError("empty snapshot set")
        shapes = {m.shape for m in self.matrices}
        if len(shapes) != 1:
            raise ValueError(f"snapshot matrices disagree in shape: {sorted(shapes)}")

    @property
    def N(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def n_fine(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def n_train(self) -> int:
        return len(self.matrices)

    def concatenated(self) -> np.ndarray:
        return np.hstack(self.matrices)


def collect_snapshots(fom_factory: Callable, grid: TimeGrid, params: Sequence,
                      cfg: NewtonConfig = DEFAULT_NEWTON) -> SnapshotSet:
    """Serial fine solve at each parameter; column ``k-1`` holds ``x(t_k) - x0``.

    ``fom_factory(mu)`` must return a :class:`DynamicalSystem`.
    """
    params = list(params)
    if not params:
        raise ValueError("no training parameters given")
    mats = []
    for mu in params:
        sys = fom_factory(mu)
        try:
            traj = fine_propagate(sys, grid, sys.initial_state, 0, grid.n_fine, cfg=cfg)
        except (NonConvergence, ArithmeticError) as exc:
            raise RuntimeError(f"snapshot solve failed at mu={mu}: {exc}") from exc
        mats.append((traj[1:] - traj[0]).T.copy())
    return SnapshotSet(mats, params)


def orthonormal_span(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``range(A)`` via column-pivoted thin QR, rank-truncated."""
    A = np.atleast_2d(A)
    if A.shape[1] == 0:
        return A.copy()
    Q, R, _ = la.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros((A.shape[0], 0))
    rank = int(np.sum(d > rtol * d[0]))
    return Q[:, :rank]


@dataclass
class PodModel:
    """Spatial POD basis plus one time-evolution basis per kept mode."""

    U: np.ndarray
    singular_values: np.ndarray
    thetas: list
    n_fine: int
    params: list = field(default_factory=list)
    upsilon: Optional[float] = None

    @property
    def n_hat(self) -> int:
        return self.U.shape[1]

    def truncated(self, n_hat: int) -> "PodModel":
        if not 1 <= n_hat <= self.n_hat:
            raise ValueError(f"cannot truncate {self.n_hat} modes to {n_hat}")
        return PodModel(self.U[:, :n_hat], self.singular_values, self.thetas[:n_hat],
                        self.n_fine, self.params, self.upsilon)


def pod(snapshots: SnapshotSet, upsilon: Optional[float] = None,
        n_hat: Optional[int] = None) -> PodModel:
    """POD of the concatenated snapshots with temporal bases from right singular vectors.

    An explicit ``n_hat`` overrides ``upsilon``.
    """
    W = snapshots.concatenated()
    U, s, Vt = la.svd(W, full_matrices=False)
    if n_hat is None:
        if upsilon is None:
            raise ValueError("give either upsilon or n_hat")
        n_hat = energy_truncation(s, upsilon)
        if n_hat == 0:
            raise EmptyTruncation(f"energy criterion {upsilon} keeps no modes")
    n_hat = int(n_hat)
    if not 1 <= n_hat <= s.size:
        raise EmptyTruncation(f"n_hat={n_hat} outside 1..{s.size}")
    nf, nt = snapshots.n_fine, snapshots.n_train
    thetas = []
    for j in range(n_hat):
        blocks = Vt[j].reshape(nt, nf).T
        thetas.append(TimeEvolutionBasis(orthonormal_span(blocks)))
    return PodModel(U[:, :n_hat], s, thetas, nf, list(snapshots.params), upsilon)


_MIN_DAMPING = 2.0 ** -20
_STEP_TOL = 1e-12


class RomSystem(DynamicalSystem):
    """LSPG reduced model ``x ~ x0 + Phi xhat`` of a full-order system.

    Implicit steps minimize the full-order time-discrete residual over the
    trial subspace by Gauss-Newton; each linearization is the Petrov-Galerkin
    projection with test basis ``(I - dt*theta*dg/dx) Phi``. Steps are damped
    by Armijo backtracking on ``||r||^2``. Convergence is measured on the
    projected residual ``Psi^T r``, or declared when the damped step falls
    below ``1e-12 * (1 + ||w||)`` (a stationary point at roundoff level), or
    when backtracking finds no descent (a nonsmooth local minimum).
    """

    def __init__(self, fom: DynamicalSystem, Phi: np.ndarray):
        self.fom = fom
        self.Phi = np.asarray(Phi, dtype=float)
        if self.Phi.shape[0] != fom.dim:
            raise ValueError("trial basis row count does not match the full-order dimension")
        self.reference = np.asarray(fom.initial_state, dtype=float).copy()
        self.dim = self.Phi.shape[1]
        self.initial_state = np.zeros(self.dim)

    def lift(self, xhat):
        return self.reference + self.Phi @ xhat

    def velocity(self, xhat, t):
        # Galerkin reduced velocity; the time integrators use implicit_solve instead
        return self.Phi.T @ self.fom.velocity(self.lift(xhat), t)

    def jacobian(self, xhat, t):
        return self.Phi.T @ (self.fom.jacobian(self.lift(xhat), t) @ self.Phi)

    def implicit_solve(self, xi, t_prev, t_next, dt, theta=1.0, guess=None,
                       cfg: NewtonConfig = DEFAULT_NEWTON) -> NewtonResult:
        xi = np.asarray(xi, dtype=float)
        Phi = self.Phi
        base = Phi @ xi
        if theta != 1.0:
            base = base + dt * (1.0 - theta) * self.fom.velocity(self.lift(xi), t_prev)
        c = dt * theta
        w = np.array(xi if guess is None else guess, dtype=float, copy=True)

        def linearize(w):
            x = self.lift(w)
            r = Phi @ w - base - c * self.fom.velocity(x, t_next)
            Psi = Phi - c * (self.fom.jacobian(x, t_next) @ Phi)
            return r, np.asarray(Psi)

        r, Psi = linearize(w)
        g0 = np.linalg.norm(Psi.T @ r)
        if g0 <= cfg.abs_tol:
            return NewtonResult(w, 0, g0)
        gnorm = g0
        for it in range(1, cfg.max_iters + 1):
            Q, R = la.qr(Psi, mode="economic")
            qr_ = Q.T @ r
            step = la.solve_triangular(R, -qr_)
            # Armijo backtracking on ||r||^2 along the Gauss-Newton direction
            f0, lam = r @ r, 1.0
            while True:
                r_new, Psi_new = linearize(w + lam * step)
                f_new = r_new @ r_new
                if f_new <= f0 - 2e-4 * lam * (qr_ @ qr_):
                    break
                if lam <= _MIN_DAMPING:
                    # no descent along the Gauss-Newton direction: w sits on a
                    # flux kink where ||r|| is locally minimal but not smooth
                    return NewtonResult(w, it, gnorm)
                lam *= 0.5
            w, r, Psi = w + lam * step, r_new, Psi_new
            gnorm = np.linalg.norm(Psi.T @ r)
            if not np.isfinite(gnorm):
                raise NonConvergence(f"LSPG residual became non-finite at iteration {it}")
            if gnorm <= cfg.abs_tol or gnorm <= cfg.rel_tol * g0:
                return NewtonResult(w, it, gnorm)
            # nonzero-residual minimum: the projected residual floors at roundoff
            if lam * np.linalg.norm(step) <= _STEP_TOL * (1.0 + np.linalg.norm(w)):
                return NewtonResult(w, it, gnorm)
        raise NonConvergence(f"LSPG Gauss-Newton: no convergence in {cfg.max_iters} iterations "
                             f"(||Psi^T r||={gnorm:.3e})")


def build_rom(model: PodModel, fom: DynamicalSystem) -> RomSystem:
    return RomSystem(fom, model.U)


def rom_temporal_bases(rom_factory: Callable, grid: TimeGrid, params: Sequence, n_y: int,
                       cfg: NewtonConfig = DEFAULT_NEWTON) -> list:
    """Time-evolution bases of the first ``n_y`` reduced coordinates, from reduced-model runs.

    ``rom_factory(mu)`` returns a :class:`RomSystem`. For each coordinate the
    centered trajectories of all training runs are orthonormalized.
    """
    trajs = []
    for mu in params:
        rom = rom_factory(mu)
        trajs.append(fine_propagate(rom, grid, rom.initial_state, 0, grid.n_fine, cfg=cfg))
    out = []
    for j in range(n_y):
        cols = np.column_stack([tr[1:, j] - tr[0, j] for tr in trajs])
        out.append(TimeEvolutionBasis(orthonormal_span(cols)))
    return out


@dataclass
class ForecastAssets:
    """Everything the forecast-based initializers and coarse propagator need."""

    restriction: RestrictionPair
    global_bases: list
    local_bases: list  # [j][n] -> LocalBasis
    upsilon_local: float

    @property
    def n_y(self) -> int:
        return len(self.global_bases)


def forecast_assets_for_rom(model: PodModel, n_y: int, upsilon_local: float, grid: TimeGrid,
                            thetas: Optional[list] = None) -> ForecastAssets:
    """Selector restriction on the first ``n_y`` reduced coordinates plus their bases."""
    if not 1 <= n_y <= model.n_hat:
        raise ValueError(f"n_y={n_y} outside 1..{model.n_hat}")
    thetas = list(model.thetas[:n_y] if thetas is None else thetas[:n_y])
    if len(thetas) != n_y:
        raise ValueError(f"need {n_y} time-evolution bases, got {len(thetas)}")
    restriction = RestrictionPair.selector(model.n_hat, n_y)
    locs = [local_bases(th, upsilon_local, grid) for th in thetas]
    return ForecastAssets(restriction, thetas, locs, upsilon_local)
