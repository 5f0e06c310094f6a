"""The parareal iteration with pluggable initializer and coarse propagator.

Cost accounting follows the critical path of an idealized parallel machine:
serial stages add up, parallel stages cost as much as their slowest task.
One fine step counts one unit; a time-integrator coarse step counts one
coarse unit. Fine states already computed from the same seed (the ``alpha``
samples of a local-forecast coarse step) are reused instead of recomputed,
and a coarse propagation whose input equals an input already propagated is
not repeated.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .coarseprop import (ForecastCoarseConfig, GlobalForecastConfig, coarse_propagate,
                         global_guess_function, initialize_global_forecast,
                         initialize_sequential, local_guess_function)
from .odecore import (DEFAULT_NEWTON, DynamicalSystem, NewtonConfig, PropagatorKind, StepStats,
                      fine_propagate)
from .timegrid import TimeGrid

__all__ = [
    "PararealConfig",
    "PararealTrace",
    "IterationRecord",
    "NonConvergenceAtCap",
    "run_parareal",
    "error_metric",
    "relative_change",
    "serial_reference",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("k", "e_k", "fine_steps_cum", "coarse_steps_cum", "newton_iters_cum", "wall_seconds")
NORM_FLOOR = 1e-14

_INITS = (PropagatorKind.BE, PropagatorKind.CN, PropagatorKind.LF, PropagatorKind.GF,
          PropagatorKind.FINE)
_COARSE = (PropagatorKind.BE, PropagatorKind.CN, PropagatorKind.LF, PropagatorKind.FINE)


class NonConvergenceAtCap(RuntimeError):
    """The iteration cap was reached before the tolerance was met."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PararealConfig:
    init: PropagatorKind = PropagatorKind.GF
    coarse: PropagatorKind = PropagatorKind.LF
    epsilon: float = 0.0
    max_iterations: Optional[int] = None
    worker_count: int = 1
    newton: NewtonConfig = DEFAULT_NEWTON
    # forecast-based Newton guesses inside fine propagation: None, "local" or "global"
    newton_guess: Optional[str] = None

    def __post_init__(self):
        init = PropagatorKind.parse(self.init)
        coarse = PropagatorKind.parse(self.coarse)
        if init not in _INITS:
            raise ValueError(f"{init.value} is not an initializer")
        if coarse not in _COARSE:
            raise ValueError(f"{coarse.value} is not a coarse propagator")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "coarse", coarse)
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.newton_guess not in (None, "local", "global"):
            raise ValueError(f"newton_guess must be None, 'local' or 'global', got {self.newton_guess!r}")

    def cap(self, grid: TimeGrid) -> int:
        full = grid.M - 1
        return full if self.max_iterations is None else min(self.max_iterations, full)


@dataclass
class IterationRecord:
    """State of iteration ``k`` after its fine stage, plus cumulative costs."""

    k: int
    x: np.ndarray  # (M+1) x N iterates
    f: np.ndarray  # fine values, row m = F(x_{m-1}); row 0 unused (NaN)
    q: np.ndarray  # coarse values, row m = G(x_{m-1}); NaN where not computed
    error: float
    fine_steps: int
    coarse_steps: int
    newton_iters: int
    fine_work: int
    critical_seconds: float
    wall_seconds: float


@dataclass
class PararealTrace:
    grid: TimeGrid
    config: PararealConfig
    records: List[IterationRecord] = field(default_factory=list)
    solution: Optional[np.ndarray] = None
    converged: bool = False
    zero_iteration_steps: int = 0
    step_history: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.records[-1].k

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    def record(self, k: int) -> IterationRecord:
        for r in self.records:
            if r.k == k:
                return r
        raise KeyError(f"iteration {k} not in trace (K={self.K})")

    def rows(self):
        for r in self.records:
            yield (r.k, r.error, r.fine_steps, r.coarse_steps, r.newton_iters, r.wall_seconds)

    def to_csv(self, include_wall: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows():
            k, e, fs, cs, ni, wall = row
            w.writerow([k, repr(float(e)), fs, cs, ni, repr(float(wall)) if include_wall else ""])
        return buf.getvalue()


def relative_change(f: np.ndarray, x: np.ndarray, indices) -> float:
    """``max_m ||f_m - x_m|| / ||f_m||``; absolute difference where ``||f_m|| < 1e-14``; 0 if empty."""
    worst = 0.0
    for m in indices:
        diff = np.linalg.norm(f[m] - x[m])
        den = np.linalg.norm(f[m])
        worst = max(worst, diff / den if den >= NORM_FLOOR else diff)
    return float(worst)


def error_metric(trace: PararealTrace, k: int) -> float:
    """Termination quantity of iteration ``k`` from the stored fine values."""
    r = trace.record(k)
    return relative_change(r.f, r.x, range(k + 1, trace.grid.M))


def serial_reference(sys: DynamicalSystem, grid: TimeGrid, x0=None,
                     cfg: NewtonConfig = DEFAULT_NEWTON, stats: Optional[StepStats] = None) -> np.ndarray:
    """Backward-Euler solution at every fine instance (``n_fine + 1`` rows)."""
    x0 = sys.initial_state if x0 is None else x0
    return fine_propagate(sys, grid, x0, 0, grid.n_fine, cfg=cfg, stats=stats)


@dataclass
class _TaskResult:
    state: np.ndarray
    samples: Optional[np.ndarray]
    fine_steps: int
    coarse_steps: int
    stats: StepStats


class _Engine:
    def __init__(self, cfg, sys, grid, x0, lf, gf, record_steps):
        self.cfg, self.sys, self.grid = cfg, sys, grid
        self.x0 = np.atleast_1d(np.asarray(sys.initial_state if x0 is None else x0, dtype=float))
        self.lf, self.gf = lf, gf
        self.record_steps = record_steps
        self.fine_steps = 0
        self.coarse_steps = 0
        self.fine_work = 0
        self.newton_iters = 0
        self.zero_iter = 0
        self.seconds = 0.0
        self.history = []
        self.gf_samples = None

    # cost bookkeeping
    def _absorb(self, results, parallel: bool):
        if not results:
            return
        for r in results:
            self.newton_iters += r.stats.newton_iters
            self.zero_iter += r.stats.zero_iter_steps
            self.fine_work += r.fine_steps
            if self.record_steps:
                self.history.extend(r.stats.history)
        if parallel:
            self.fine_steps += max(r.fine_steps for r in results)
            self.coarse_steps += max(r.coarse_steps for r in results)
            self.seconds += max(r.stats.seconds for r in results)
        else:
            self.fine_steps += sum(r.fine_steps for r in results)
            self.coarse_steps += sum(r.coarse_steps for r in results)
            self.seconds += sum(r.stats.seconds for r in results)

    def _stats(self):
        return StepStats(record=self.record_steps)

    def _map(self, fn, items):
        items = list(items)
        if self.cfg.worker_count == 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.cfg.worker_count) as pool:
            return list(pool.map(fn, items))

    # propagators
    def coarse(self, seed, n) -> _TaskResult:
        stats = self._stats()
        kind = self.cfg.coarse
        res = coarse_propagate(kind, self.sys, seed, n, self.grid, self.lf, self.cfg.newton, stats)
        if kind in (PropagatorKind.BE, PropagatorKind.CN):
            return _TaskResult(res.state, None, 0, 1, stats)
        return _TaskResult(res.state, res.samples, stats.steps, 0, stats)

    def fine(self, seed, n, reuse=None) -> _TaskResult:
        grid, sys, newton = self.grid, self.sys, self.cfg.newton
        stats = self._stats()
        start = grid.m_bar * n
        stop = start + grid.m_bar
        head = reuse if reuse is not None else np.empty((0, seed.size))
        mode = self.cfg.newton_guess
        guesses = None
        if mode == "local":
            if head.shape[0] < self.lf.memory:
                more = fine_propagate(sys, grid, head[-1] if head.shape[0] else seed,
                                      start + head.shape[0], start + self.lf.memory,
                                      cfg=newton, stats=stats)[1:]
                head = np.vstack([head, more])
            guesses = local_guess_function(self.lf, n, seed, head[:self.lf.memory])
        elif mode == "global":
            guesses = global_guess_function(self.gf, self.x0, self._global_samples())
        prev = head[-1] if head.shape[0] else seed
        tail = fine_propagate(sys, grid, prev, start + head.shape[0], stop, cfg=newton,
                              stats=stats, guesses=guesses)
        return _TaskResult(tail[-1], None, stats.steps, 0, stats)

    def _global_samples(self):
        if self.gf_samples is None:
            raise RuntimeError("global Newton guesses need the global-forecast samples")
        return self.gf_samples

    def initialize(self):
        cfg, grid = self.cfg, self.grid
        M = grid.M
        reuse = [None] * M
        if cfg.newton_guess == "global":
            if self.gf is None:
                raise ValueError("global Newton guesses need global forecast assets")
            stats = self._stats()
            self.gf_samples = fine_propagate(self.sys, grid, self.x0, 0, self.gf.memory,
                                             cfg=cfg.newton, stats=stats)[1:]
            self._absorb([_TaskResult(None, None, stats.steps, 0, stats)], parallel=False)
        if cfg.init is PropagatorKind.GF:
            if self.gf is None:
                raise ValueError("global-forecast initialization needs global forecast assets")
            stats = self._stats()
            states, samples = initialize_global_forecast(self.gf, self.sys, self.x0, cfg.newton,
                                                         stats, samples=self.gf_samples)
            self.gf_samples = samples
            reuse[0] = samples[:grid.m_bar]
            self._absorb([_TaskResult(None, None, stats.steps, 0, stats)], parallel=False)
            return states, reuse
        if cfg.init is PropagatorKind.LF and self.lf is None:
            raise ValueError("local-forecast initialization needs local forecast assets")
        stats = self._stats()
        states, samples = initialize_sequential(cfg.init, self.sys, self.x0, grid, self.lf,
                                                cfg.newton, stats)
        coarse_units = M if cfg.init in (PropagatorKind.BE, PropagatorKind.CN) else 0
        fine_units = stats.steps if coarse_units == 0 else 0
        self._absorb([_TaskResult(None, None, fine_units, coarse_units, stats)], parallel=False)
        return states, list(samples)

    def run(self, raise_on_cap: bool) -> PararealTrace:
        cfg, grid = self.cfg, self.grid
        M = grid.M
        N = self.x0.size
        t_start = time.perf_counter()
        trace = PararealTrace(grid, cfg)
        cap = cfg.cap(grid)

        x, reuse = self.initialize()
        x[0] = self.x0
        f = np.full((M + 1, N), np.nan)
        q = np.full((M + 1, N), np.nan)
        same_as_init = cfg.init is cfg.coarse
        if same_as_init:
            # the initializer already applied G to every seed
            q[1:] = x[1:]

        results = self._map(lambda m: self.fine(x[m], m, reuse[m]), range(M))
        self._absorb(results, parallel=True)
        for m, r in enumerate(results):
            f[m + 1] = r.state

        k = 0
        e = relative_change(f, x, range(k + 1, M))
        self._log(trace, k, x, f, q, e, t_start)
        while e > cfg.epsilon and k < cap:
            if k == 0 and not same_as_init:
                seeds = list(range(1, M))
                results = self._map(lambda m: self.coarse(x[m], m), seeds)
                self._absorb(results, parallel=True)
                for m, r in zip(seeds, results):
                    q[m + 1] = r.state
                    reuse[m] = r.samples
            x_new = x.copy()
            q_new = q.copy()
            # G(x_k^{k+1}) = G(x_k^k) = q_{k+1}^k, so x_{k+1}^{k+1} = f_{k+1}^k
            x_new[k + 1] = f[k + 1]
            sweep = []
            for m in range(k + 1, M):
                r = self.coarse(x_new[m], m)
                sweep.append(r)
                q_new[m + 1] = r.state
                reuse[m] = r.samples
                x_new[m + 1] = r.state + f[m + 1] - q[m + 1]
            self._absorb(sweep, parallel=False)
            x, q = x_new, q_new

            # f_{k+1}^{k+1} = F(x_k^k) is unchanged
            f_new = f.copy()
            tasks = list(range(k + 1, M))
            results = self._map(lambda m: self.fine(x[m], m, reuse[m]), tasks)
            self._absorb(results, parallel=True)
            for m, r in zip(tasks, results):
                f_new[m + 1] = r.state
            f = f_new
            k += 1
            e = relative_change(f, x, range(k + 1, M))
            self._log(trace, k, x, f, q, e, t_start)

        solution = x.copy()
        solution[k + 1:] = f[k + 1:]
        trace.solution = solution
        trace.converged = e <= cfg.epsilon or k >= M - 1
        trace.zero_iteration_steps = self.zero_iter
        trace.step_history = self.history
        if not trace.converged and raise_on_cap:
            raise NonConvergenceAtCap(
                f"parareal stopped at the iteration cap {cap} with e={e:.3e} > {cfg.epsilon:g}", trace)
        return trace

    def _log(self, trace, k, x, f, q, e, t_start):
        trace.records.append(IterationRecord(
            k=k, x=x.copy(), f=f.copy(), q=q.copy(), error=e,
            fine_steps=self.fine_steps, coarse_steps=self.coarse_steps,
            newton_iters=self.newton_iters, fine_work=self.fine_work,
            critical_seconds=self.seconds, wall_seconds=time.perf_counter() - t_start))


def run_parareal(cfg: PararealConfig, sys: DynamicalSystem, grid: TimeGrid, x0=None,
                 lf: Optional[ForecastCoarseConfig] = None,
                 gf: Optional[GlobalForecastConfig] = None,
                 raise_on_cap: bool = True, record_steps: bool = False) -> PararealTrace:
    """Run parareal and return the full per-iteration trace.

    Parameters
    ----------
    cfg : PararealConfig
        Initializer, coarse propagator, tolerance, cap, and worker count.
    sys : DynamicalSystem
        The system integrated by backward Euler on the fine grid.
    x0 : array_like, optional
        Initial state; defaults to ``sys.initial_state``.
    lf, gf : optional
        Local and global forecast assets, required by the matching kinds.
    raise_on_cap : bool
        Raise :class:`NonConvergenceAtCap` (carrying the trace) when the cap
        stops the iteration early. Otherwise return with ``converged=False``.
    record_steps : bool
        Keep per-step ``(newton_iterations, seconds, guided)`` in ``step_history``;
        ``guided`` marks steps that started from a forecast Newton guess.

    Notes
    -----
    ``fine_steps_cum`` and ``coarse_steps_cum`` count the critical path;
    ``newton_iters_cum`` is the total over all tasks.
    """
    if cfg.coarse is PropagatorKind.LF and lf is None:
        raise ValueError("local-forecast coarse propagation needs local forecast assets")
    if cfg.newton_guess == "local" and lf is None:
        raise ValueError("local Newton guesses need local forecast assets")
    return _Engine(cfg, sys, grid, x0, lf, gf, record_steps).run(raise_on_cap)
