"""Command-line harness: training, serial solves, parareal runs, sweeps, and tables.

Exit codes: 0 success or convergence, 2 iteration cap reached, 1 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .experiments import burgers_factory, grid_for, prepare, run_case, train_model
from .io import (ONLINE_POINTS, ConfigError, dump_config, grid_from_config, load_config,
                 load_model, save_model, validate_config, write_matrix)
from .parareal import TRACE_COLUMNS, serial_reference

log = logging.getLogger("forecast_parareal")

EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


# flag -> (section, key, type)
_OVERRIDES = {
    "mu1": ("problem", "mu1", float),
    "mu2": ("problem", "mu2", float),
    "cells": ("problem", "cells", int),
    "t_final": ("grid", "t_final", float),
    "coarse_intervals": ("grid", "coarse_intervals", int),
    "fine_per_coarse": ("grid", "fine_per_coarse", int),
    "n_hat": ("rom", "n_hat", int),
    "init": ("parareal", "init", str),
    "coarse": ("parareal", "coarse", str),
    "epsilon": ("parareal", "epsilon", float),
    "memory": ("parareal", "memory", int),
    "n_y": ("parareal", "n_y", int),
    "upsilon_local": ("parareal", "upsilon_local", float),
    "workers": ("parareal", "workers", int),
    "max_iterations": ("parareal", "max_iterations", int),
    "newton_guess": ("parareal", "newton_guess", str),
    "artifacts": ("paths", "artifacts", str),
}


def _add_config_flags(p):
    p.add_argument("--config", help="TOML experiment configuration")
    p.add_argument("--online", choices=sorted(ONLINE_POINTS), help="use a reference online point")
    p.add_argument("--seed", type=int)
    for flag, (_, _, typ) in _OVERRIDES.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)


def _config(args) -> dict:
    cfg = load_config(args.config)
    if getattr(args, "online", None):
        cfg["problem"]["mu1"], cfg["problem"]["mu2"] = ONLINE_POINTS[args.online]
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for flag, (sect, key, _) in _OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg.setdefault(sect, {})[key] = val
    validate_config(cfg)
    return cfg


def _mu(cfg):
    return (cfg["problem"]["mu1"], cfg["problem"]["mu2"])


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _train(cfg, grid):
    rom = cfg["rom"]
    return train_model(rom["training_points"], grid, n_hat=rom.get("n_hat"),
                       upsilon=rom.get("upsilon"), cells=cfg["problem"]["cells"])


def cmd_train(args) -> int:
    cfg = _config(args)
    grid = grid_from_config(cfg)
    try:
        model = _train(cfg, grid)
    except RuntimeError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = args.out or cfg["paths"]["artifacts"]
    save_model(out, model, grid, extra={"cells": cfg["problem"]["cells"]})
    (Path(out) / "config.toml").write_text(dump_config(cfg), encoding="utf-8")
    log.info("wrote %d modes to %s", model.n_hat, out)
    return EXIT_OK


def cmd_fom_solve(args) -> int:
    cfg = _config(args)
    grid = grid_from_config(cfg)
    fom = burgers_factory(cfg["problem"]["cells"])(_mu(cfg))
    traj = serial_reference(fom, grid)
    write_matrix(args.out, traj, "fom_trajectory")
    return EXIT_OK


def _load_assets(cfg):
    trained = load_model(cfg["paths"]["artifacts"])
    grid = grid_from_config(cfg)
    if grid != trained.grid:
        raise ConfigError(f"configured grid {grid.to_dict()} differs from the trained grid "
                          f"{trained.grid.to_dict()}")
    cells = trained.manifest.get("cells", cfg["problem"]["cells"])
    if cells != cfg["problem"]["cells"]:
        raise ConfigError(f"configured cells={cfg['problem']['cells']} but the model was trained with {cells}")
    return trained


def _setup(cfg, model, grid):
    par = cfg["parareal"]
    n_y = min(par["n_y"], model.n_hat)
    return prepare(model, _mu(cfg), grid, n_y, par["memory"], par["upsilon_local"],
                   cfg["problem"]["cells"])


def cmd_rom_solve(args) -> int:
    cfg = _config(args)
    trained = _load_assets(cfg)
    setup = _setup(cfg, trained.model, trained.grid)
    traj = serial_reference(setup.rom, trained.grid)
    write_matrix(args.out, traj, "rom_trajectory")
    if args.lifted:
        write_matrix(args.lifted, np.array([setup.rom.lift(r) for r in traj]), "rom_lifted")
    return EXIT_OK


def _run(cfg, setup):
    par = cfg["parareal"]
    guess = None if par["newton_guess"] == "none" else par["newton_guess"]
    return run_case(setup, par["init"], par["coarse"], par["epsilon"], workers=par["workers"],
                    max_iterations=par.get("max_iterations"), newton_guess=guess)


def cmd_parareal(args) -> int:
    cfg = _config(args)
    trained = _load_assets(cfg)
    trace = _run(cfg, _setup(cfg, trained.model, trained.grid))
    _emit(trace.to_csv(), args.out)
    log.info("K=%d e(K)=%.3e converged=%s", trace.K, trace.errors[-1], trace.converged)
    return EXIT_OK if trace.converged else EXIT_CAP


def cmd_sweep(args) -> int:
    cfg = _config(args)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((args.vary,) + TRACE_COLUMNS)
    status = EXIT_OK
    trained = None if args.vary == "M" else _load_assets(cfg)
    for value in args.values:
        run_cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
        if args.vary == "M":
            grid = grid_for(int(value), cfg["grid"]["t_final"])
            model = _train(cfg, grid)
        else:
            grid, model = trained.grid, trained.model
            run_cfg["parareal"][args.vary] = int(value)
        trace = _run(run_cfg, _setup(run_cfg, model, grid))
        for row in trace.rows():
            k, e, fs, cs, ni, wall = row
            w.writerow([value, k, repr(float(e)), fs, cs, ni, repr(float(wall))])
        if not trace.converged:
            status = EXIT_CAP
    _emit(buf.getvalue(), args.out)
    return status


_FORMULAS = {
    "local": analysis.speedup_local,
    "global": analysis.speedup_global,
    "fine-coarse": analysis.speedup_fine_coarse,
    "newton-local": lambda p: analysis.speedup_newton_forecast("local", p),
    "newton-global": lambda p: analysis.speedup_newton_forecast("global", p),
}


def cmd_speedup(args) -> int:
    fn = _FORMULAS[args.formula]
    taus = args.tau_r if args.formula.startswith("newton") else [None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("M", "K", "alpha", "tau_r", "speedup"))
    for M in args.M:
        for K in args.K:
            for alpha in args.alpha:
                for tau in taus:
                    try:
                        s = repr(fn(analysis.SpeedupInputs(args.n, M, alpha, K, tau)))
                    except ValueError as exc:
                        log.warning("M=%s K=%s alpha=%s: %s", M, K, alpha, exc)
                        s = "nan"
                    w.writerow([M, K, alpha, "" if tau is None else repr(tau), s])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_stability(args) -> int:
    rows = analysis.stability_scaling_experiment(args.H, args.fraction, args.m_bar, args.trials,
                                                 args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("m_bar", "beta_small", "beta_sqrt_alpha", "alpha_stab", "C_stab"))
    for r in rows:
        w.writerow([r["m_bar"]] + [repr(float(r[k])) for k in
                                   ("beta_small", "beta_sqrt_alpha", "alpha_stab", "C_stab")])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="forecast-parareal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="collect snapshots and write the POD model")
    _add_config_flags(s)
    s.add_argument("--out", help="artifact directory (defaults to paths.artifacts)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fom-solve", help="serial full-order solve at one parameter")
    _add_config_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fom_solve)

    s = sub.add_parser("rom-solve", help="serial reduced-order solve with a trained model")
    _add_config_flags(s)
    s.add_argument("--out", required=True)
    s.add_argument("--lifted", help="also write the full-order reconstruction")
    s.set_defaults(func=cmd_rom_solve)

    s = sub.add_parser("parareal", help="run parareal and write the iteration trace")
    _add_config_flags(s)
    s.add_argument("--out", help="trace CSV path (stdout if omitted)")
    s.set_defaults(func=cmd_parareal)

    s = sub.add_parser("sweep", help="parareal traces over a list of n_y, memory, or M values")
    _add_config_flags(s)
    s.add_argument("--vary", choices=("n_y", "memory", "M"), required=True)
    s.add_argument("--values", type=_csv_list(int), required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("speedup", help="tabulate a theoretical speedup formula")
    s.add_argument("--formula", choices=sorted(_FORMULAS), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--M", type=_csv_list(int), required=True)
    s.add_argument("--alpha", type=_csv_list(int), default=[1])
    s.add_argument("--K", type=_csv_list(int), default=[0])
    s.add_argument("--tau-r", dest="tau_r", type=_csv_list(float), default=[0.1])
    s.add_argument("--out")
    s.set_defaults(func=cmd_speedup)

    s = sub.add_parser("stability", help="stability constants over random interval bases")
    s.add_argument("--H", type=float, default=1.0)
    s.add_argument("--fraction", type=float, default=0.3)
    s.add_argument("--m-bar", dest="m_bar", type=_csv_list(int),
                   default=[10, 20, 50, 100, 200, 500, 1000])
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stability)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
