"""Assembly of the Burgers reduced-model experiments: training, assets, runs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

from .burgers import BurgersProblem
from .coarseprop import ForecastCoarseConfig, GlobalForecastConfig
from .odecore import DEFAULT_NEWTON, NewtonConfig
from .parareal import PararealConfig, PararealTrace, run_parareal
from .podrom import PodModel, RomSystem, build_rom, collect_snapshots, forecast_assets_for_rom, pod
from .timegrid import TimeGrid, build_grid

__all__ = ["Setup", "burgers_factory", "grid_for", "train_model", "prepare", "ideal_setup", "run_case"]

N_FINE = 250
T_FINAL = 25.0


def grid_for(M: int, t_final: float = T_FINAL, n_fine: int = N_FINE) -> TimeGrid:
    """``M`` coarse intervals with ``round(n_fine / M)`` fine steps each over ``[0, t_final]``."""
    return build_grid(t_final, M, max(1, round(n_fine / M)))


def burgers_factory(cells: int):
    """``mu -> BurgersProblem`` without out-of-domain warnings."""

    def make(mu):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return BurgersProblem(mu[0], mu[1], cells=cells)
    return make


def train_model(training_points: Sequence, grid: TimeGrid, n_hat: Optional[int] = None,
                upsilon: Optional[float] = None, cells: int = 500,
                newton: NewtonConfig = DEFAULT_NEWTON) -> PodModel:
    snaps = collect_snapshots(burgers_factory(cells), grid, [tuple(p) for p in training_points], newton)
    if n_hat is not None:
        n_hat = min(n_hat, min(snaps.N, snaps.n_fine * snaps.n_train))
    return pod(snaps, upsilon=upsilon, n_hat=n_hat)


@dataclass
class Setup:
    grid: TimeGrid
    model: PodModel
    rom: RomSystem
    lf: ForecastCoarseConfig
    gf: GlobalForecastConfig
    mu: tuple

    def run(self, init, coarse, epsilon, **kw) -> PararealTrace:
        return run_case(self, init, coarse, epsilon, **kw)


def prepare(model: PodModel, mu, grid: TimeGrid, n_y: int, memory: int,
            upsilon_local: float = 1.0, cells: int = 500) -> Setup:
    """Reduced model at ``mu`` with local and global forecast assets on the first ``n_y`` coordinates."""
    fom = burgers_factory(cells)(mu)
    rom = build_rom(model, fom)
    assets = forecast_assets_for_rom(model, n_y, upsilon_local, grid)
    lf = ForecastCoarseConfig(memory, assets.local_bases, assets.restriction, grid)
    gf = GlobalForecastConfig(memory, assets.global_bases, assets.restriction, grid)
    return Setup(grid, model, rom, lf, gf, tuple(mu))


def ideal_setup(mu, M: int, memory: int = 8, n_hat: int = 100, cells: int = 500) -> Setup:
    """Train on ``mu`` alone and forecast every reduced coordinate without truncation."""
    grid = grid_for(M)
    model = train_model([mu], grid, n_hat=n_hat, cells=cells)
    return prepare(model, mu, grid, model.n_hat, min(memory, grid.m_bar), 1.0, cells)


def run_case(setup: Setup, init, coarse, epsilon: float, workers: int = 1,
             max_iterations: Optional[int] = None, newton_guess: Optional[str] = None,
             raise_on_cap: bool = False, record_steps: bool = False,
             newton: NewtonConfig = DEFAULT_NEWTON) -> PararealTrace:
    cfg = PararealConfig(init, coarse, epsilon, max_iterations, workers, newton, newton_guess)
    return run_parareal(cfg, setup.rom, setup.grid, lf=setup.lf, gf=setup.gf,
                        raise_on_cap=raise_on_cap, record_steps=record_steps)
