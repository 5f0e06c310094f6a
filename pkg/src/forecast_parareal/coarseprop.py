"""Restriction operators, the local-forecast coarse propagator, and initializers.

The local-forecast propagator advances a state across one coarse interval by
taking ``alpha`` fine steps, then extrapolating each restricted component to
the end of the interval with its local time-evolution basis. Components
outside the range of the prolongation are dropped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .forecast import SampleWindow, TimeEvolutionBasis, local_forecast, sampled_pinv
from .odecore import (DEFAULT_NEWTON, DynamicalSystem, NewtonConfig, PropagatorKind, StepStats,
                      coarse_integrator_step, fine_propagate)
from .timegrid import TimeGrid

__all__ = [
    "RestrictionPair",
    "ForecastCoarseConfig",
    "GlobalForecastConfig",
    "CoarseResult",
    "lf_coarse_propagate",
    "lf_coarse_direct",
    "coarse_propagate",
    "initialize_sequential",
    "initialize_global_forecast",
    "newton_guess_from_forecast",
    "local_guess_function",
    "global_guess_function",
]


@dataclass(frozen=True)
class RestrictionPair:
    """Restriction ``R`` (``n_y x N``) and prolongation ``P`` (``N x n_y``).

    The optional complements satisfy ``P R + P_perp R_perp = I``.
    """

    R: np.ndarray
    P: np.ndarray
    R_perp: Optional[np.ndarray] = None
    P_perp: Optional[np.ndarray] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape != (R.shape[1], R.shape[0]):
            raise ValueError(f"R is {R.shape} but P is {P.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)
        if (self.R_perp is None) != (self.P_perp is None):
            raise ValueError("give both complements or neither")
        if self.R_perp is not None:
            Rp = np.atleast_2d(np.asarray(self.R_perp, dtype=float)).reshape(-1, R.shape[1])
            Pp = np.atleast_2d(np.asarray(self.P_perp, dtype=float)).reshape(R.shape[1], -1)
            object.__setattr__(self, "R_perp", Rp)
            object.__setattr__(self, "P_perp", Pp)

    @classmethod
    def identity(cls, N: int) -> "RestrictionPair":
        eye = np.eye(N)
        return cls(eye, eye.copy(), np.zeros((0, N)), np.zeros((N, 0)))

    @classmethod
    def selector(cls, N: int, n_y: int) -> "RestrictionPair":
        """Keep the first ``n_y`` coordinates."""
        if not 1 <= n_y <= N:
            raise ValueError(f"n_y={n_y} outside 1..{N}")
        eye = np.eye(N)
        return cls(eye[:n_y], eye[:, :n_y].copy(), eye[n_y:], eye[:, n_y:].copy())

    @property
    def n_y(self) -> int:
        return self.R.shape[0]

    @property
    def N(self) -> int:
        return self.R.shape[1]

    def restrict(self, x):
        return self.R @ x

    def prolong(self, y):
        return self.P @ y


def _component_pinvs(bases: Sequence, memory: int) -> list:
    out = []
    for B in bases:
        mat = B.matrix if hasattr(B, "matrix") else np.atleast_2d(B)
        out.append((mat, sampled_pinv(mat, SampleWindow(0, memory))))
    return out


@dataclass
class ForecastCoarseConfig:
    """Local-forecast coarse propagator setup.

    ``bases[j][n]`` is the :class:`LocalBasis` of restricted component ``j`` on
    coarse interval ``n``.
    """

    memory: int
    bases: list
    restriction: RestrictionPair
    grid: TimeGrid
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.memory <= self.grid.m_bar:
            raise ValueError(f"memory {self.memory} outside 1..{self.grid.m_bar}")
        if len(self.bases) != self.restriction.n_y:
            raise ValueError(f"{len(self.bases)} basis collections for n_y={self.restriction.n_y}")
        for j, col in enumerate(self.bases):
            if len(col) != self.grid.M:
                raise ValueError(f"component {j}: {len(col)} local bases for M={self.grid.M}")

    def interval_weights(self, n: int) -> list:
        """Per component, ``(Theta, Theta [P_{0,alpha} Theta]^+)``: row ``k-1`` holds the offset-``k`` weights."""
        if n not in self._cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pairs = _component_pinvs([col[n] for col in self.bases], self.memory)
            self._cache[n] = [mat @ pinv for mat, pinv in pairs]
        return self._cache[n]

    def end_weights(self, n: int) -> np.ndarray:
        """``n_y x alpha`` weights to the interval end (the diagonal entries of ``E_i``)."""
        return np.array([W[self.grid.m_bar - 1] for W in self.interval_weights(n)])


@dataclass
class GlobalForecastConfig:
    """Global time-evolution bases per restricted component, with one cached fit each."""

    memory: int
    bases: list
    restriction: RestrictionPair
    grid: TimeGrid
    _weights: Optional[list] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.memory <= self.grid.n_fine:
            raise ValueError(f"memory {self.memory} outside 1..{self.grid.n_fine}")
        if len(self.bases) != self.restriction.n_y:
            raise ValueError(f"{len(self.bases)} global bases for n_y={self.restriction.n_y}")
        for B in self.bases:
            rows = B.n_fine if isinstance(B, TimeEvolutionBasis) else np.shape(B)[0]
            if rows != self.grid.n_fine:
                raise ValueError(f"global basis has {rows} rows, grid has {self.grid.n_fine}")

    def weights(self) -> list:
        """Per component ``Theta [P_{0,alpha} Theta]^+`` (``n_fine x alpha``)."""
        if self._weights is None:
            self._weights = [mat @ pinv for mat, pinv in _component_pinvs(self.bases, self.memory)]
        return self._weights


@dataclass
class CoarseResult:
    state: np.ndarray
    # fine states at offsets 1..alpha from the seed (LF only)
    samples: Optional[np.ndarray] = None


def _forecast_from(weights: Sequence[np.ndarray], row: int, restriction: RestrictionPair,
                   anchor_state, sample_states) -> np.ndarray:
    anchors = restriction.restrict(anchor_state)
    centered = sample_states @ restriction.R.T - anchors  # alpha x n_y
    y = anchors.copy()
    if row > 0:
        for j, W in enumerate(weights):
            y[j] += W[row - 1] @ centered[:, j]
    return restriction.prolong(y)


def lf_coarse_propagate(cfg: ForecastCoarseConfig, sys: DynamicalSystem, xi, n: int,
                        newton: NewtonConfig = DEFAULT_NEWTON,
                        stats: Optional[StepStats] = None,
                        samples: Optional[np.ndarray] = None) -> CoarseResult:
    """Local-forecast coarse step across interval ``n``.

    Runs ``alpha`` fine steps on the full state (unless ``samples`` already
    holds them), forecasts each restricted component to the interval end, and
    prolongs. Returns the new state and the ``alpha`` fine states for reuse.
    """
    grid = cfg.grid
    if not 0 <= n < grid.M:
        raise IndexError(f"coarse interval {n} outside 0..{grid.M - 1}")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (cfg.restriction.N,):
        raise ValueError(f"state has shape {xi.shape}, expected ({cfg.restriction.N},)")
    start = grid.m_bar * n
    if samples is None:
        samples = fine_propagate(sys, grid, xi, start, start + cfg.memory, cfg=newton, stats=stats)[1:]
    state = _forecast_from(cfg.interval_weights(n), grid.m_bar, cfg.restriction, xi, samples)
    return CoarseResult(state, samples)


def lf_coarse_direct(cfg: ForecastCoarseConfig, xi, samples, n: int) -> np.ndarray:
    """Same forecast as :func:`lf_coarse_propagate`, one gappy fit per component.

    Slower reference path that never forms the weights.
    """
    R = cfg.restriction.R
    anchors = R @ xi
    restricted = np.asarray(samples) @ R.T
    y = np.array([local_forecast(cfg.bases[j][n], anchors[j], restricted[:, j], cfg.grid.m_bar)
                  for j in range(cfg.restriction.n_y)])
    return cfg.restriction.prolong(y)


def coarse_propagate(kind, sys: DynamicalSystem, xi, n: int, grid: TimeGrid,
                     lf: Optional[ForecastCoarseConfig] = None,
                     newton: NewtonConfig = DEFAULT_NEWTON,
                     stats: Optional[StepStats] = None) -> CoarseResult:
    """One coarse propagation across interval ``n`` with any coarse kind."""
    kind = PropagatorKind.parse(kind)
    if kind in (PropagatorKind.BE, PropagatorKind.CN):
        T_n = grid.coarse_time(n)
        return CoarseResult(coarse_integrator_step(kind, sys, xi, T_n, grid.H, newton, stats))
    if kind is PropagatorKind.LF:
        if lf is None:
            raise ValueError("local-forecast coarse propagation needs a ForecastCoarseConfig")
        return lf_coarse_propagate(lf, sys, xi, n, newton, stats)
    if kind is PropagatorKind.FINE:
        start = grid.m_bar * n
        traj = fine_propagate(sys, grid, xi, start, start + grid.m_bar, cfg=newton, stats=stats)
        return CoarseResult(traj[-1], traj[1:])
    raise ValueError(f"{kind.value} cannot be used as a coarse propagator")


def initialize_sequential(kind, sys: DynamicalSystem, x0, grid: TimeGrid,
                          lf: Optional[ForecastCoarseConfig] = None,
                          newton: NewtonConfig = DEFAULT_NEWTON,
                          stats: Optional[StepStats] = None):
    """``x_{n+1} = G(x_n)`` for ``n = 0..M-1``.

    Returns ``(states, samples)`` where ``states`` has ``M + 1`` rows (row 0 is
    ``x0``) and ``samples[n]`` holds the reusable fine states of interval ``n``
    (``None`` for the time integrators).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    states = np.empty((grid.M + 1, x0.size))
    states[0] = x0
    samples = []
    for n in range(grid.M):
        res = coarse_propagate(kind, sys, states[n], n, grid, lf, newton, stats)
        states[n + 1] = res.state
        samples.append(res.samples)
    return states, samples


def initialize_global_forecast(gf: GlobalForecastConfig, sys: DynamicalSystem, x0,
                               newton: NewtonConfig = DEFAULT_NEWTON,
                               stats: Optional[StepStats] = None,
                               samples: Optional[np.ndarray] = None):
    """Forecast every coarse instance from ``alpha`` fine steps taken once from ``t_0``.

    Returns ``(states, samples)`` with ``states`` of ``M + 1`` rows and the
    ``alpha`` fine states after ``x0``.
    """
    grid = gf.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if samples is None:
        samples = fine_propagate(sys, grid, x0, 0, gf.memory, cfg=newton, stats=stats)[1:]
    weights = gf.weights()
    states = np.empty((grid.M + 1, x0.size))
    states[0] = x0
    for n in range(grid.M):
        states[n + 1] = _forecast_from(weights, grid.m_bar * (n + 1), gf.restriction, x0, samples)
    return states, samples


def newton_guess_from_forecast(kind: str, config, anchor_state, samples, i: int,
                               n: int = 0) -> np.ndarray:
    """Forecast of the full state at fine index ``i``, for use as a Newton guess.

    ``kind="local"`` uses ``config`` (a :class:`ForecastCoarseConfig`) on
    interval ``n`` with ``anchor_state`` at ``T_n``; ``kind="global"`` uses a
    :class:`GlobalForecastConfig` anchored at ``t_0``.
    """
    if kind == "local":
        start = config.grid.m_bar * n
        offset = i - start
        if not 0 <= offset <= config.grid.m_bar:
            raise IndexError(f"fine index {i} outside interval {n}")
        return _forecast_from(config.interval_weights(n), offset, config.restriction,
                              anchor_state, samples)
    if kind == "global":
        if not 0 <= i <= config.grid.n_fine:
            raise IndexError(f"fine index {i} outside 0..{config.grid.n_fine}")
        return _forecast_from(config.weights(), i, config.restriction, anchor_state, samples)
    raise ValueError(f"unknown forecast kind {kind!r}")


def local_guess_function(cfg: ForecastCoarseConfig, n: int, anchor_state,
                         samples) -> Callable[[int], Optional[np.ndarray]]:
    """Guess callback for :func:`fine_propagate` past the sampled window of interval ``n``."""
    last_sampled = cfg.grid.m_bar * n + cfg.memory

    def guess(k: int):
        if k <= last_sampled:
            return None
        return newton_guess_from_forecast("local", cfg, anchor_state, samples, k, n)

    return guess


def global_guess_function(gf: GlobalForecastConfig, x0, samples) -> Callable[[int], Optional[np.ndarray]]:
    def guess(k: int):
        if k <= gf.memory:
            return None
        return newton_guess_from_forecast("global", gf, x0, samples, k)

    return guess
