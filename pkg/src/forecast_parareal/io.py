"""Matrix text files, experiment configuration, and trained-model persistence."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .forecast import TimeEvolutionBasis
from .podrom import PodModel
from .timegrid import TimeGrid, build_grid

__all__ = [
    "ConfigError",
    "write_matrix",
    "read_matrix",
    "DEFAULT_CONFIG",
    "ONLINE_POINTS",
    "TRAINING_POINTS",
    "load_config",
    "parse_config",
    "dump_config",
    "validate_config",
    "grid_from_config",
    "save_model",
    "load_model",
    "TrainedModel",
]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def write_matrix(path, A, name: str = "matrix") -> None:
    """Write ``A`` as ``# rows cols name`` followed by rows of ``%.17g`` reals."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2:
        raise ValueError("only 2-D arrays can be written")
    if any(c.isspace() for c in name) or not name:
        raise ValueError(f"matrix name must be a non-empty token, got {name!r}")
    rows, cols = A.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {rows} {cols} {name}\n")
        for row in A:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns ``(array, name)``."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "#":
            raise ValueError(f"{path}: malformed matrix header")
        rows, cols, name = int(header[1]), int(header[2]), header[3]
        data = np.array(fh.read().split(), dtype=float)
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols), name


ONLINE_POINTS = {"1": (1.6603, 0.0229), "2": (1.5025, 0.0201)}
TRAINING_POINTS = [[1.5331, 0.0249], [1.6880, 0.0223], [1.9656, 0.0209], [1.8000, 0.0232]]

DEFAULT_CONFIG = {
    "seed": 0,
    "problem": {"cells": 500, "mu1": ONLINE_POINTS["1"][0], "mu2": ONLINE_POINTS["1"][1]},
    "grid": {"t_final": 25.0, "coarse_intervals": 10, "fine_per_coarse": 25},
    "rom": {"training_points": TRAINING_POINTS, "n_hat": 100},
    "parareal": {
        "init": "GF",
        "coarse": "LF",
        "epsilon": 5e-3,
        "memory": 8,
        "n_y": 8,
        "upsilon_local": 1.0,
        "workers": 1,
        "newton_guess": "none",
    },
    "paths": {"artifacts": "artifacts"},
}

_SECTIONS = {
    "problem": {"cells": int, "mu1": float, "mu2": float},
    "grid": {"t_final": float, "coarse_intervals": int, "fine_per_coarse": int},
    "rom": {"training_points": list, "n_hat": int, "upsilon": float},
    "parareal": {"init": str, "coarse": str, "epsilon": float, "memory": int, "n_y": int,
                 "upsilon_local": float, "workers": int, "newton_guess": str,
                 "max_iterations": int},
    "paths": {"artifacts": str},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_config(text: str, defaults: bool = True) -> dict:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    cfg = _merge(DEFAULT_CONFIG, raw) if defaults else raw
    validate_config(cfg)
    return cfg


def load_config(path: Optional[str] = None) -> dict:
    if path is None:
        cfg = copy.deepcopy(DEFAULT_CONFIG)
        validate_config(cfg)
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def validate_config(cfg: dict) -> None:
    """Check keys, types, and enumerations; coerces ints given where floats are expected."""
    for key in cfg:
        if key != "seed" and key not in _SECTIONS:
            raise ConfigError(f"unknown configuration section or key {key!r}")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    for sect, fields in _SECTIONS.items():
        block = cfg.get(sect, {})
        if not isinstance(block, dict):
            raise ConfigError(f"[{sect}] must be a table")
        for key, val in block.items():
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{sect}]")
            want = fields[key]
            if want is float and isinstance(val, int) and not isinstance(val, bool):
                block[key] = float(val)
            elif not isinstance(val, want) or isinstance(val, bool):
                raise ConfigError(f"[{sect}] {key} must be of type {want.__name__}")
    par = cfg.get("parareal", {})
    if par.get("init", "GF") not in ("BE", "CN", "LF", "GF", "FineAsCoarse"):
        raise ConfigError(f"unknown initializer {par.get('init')!r}")
    if par.get("coarse", "LF") not in ("BE", "CN", "LF", "FineAsCoarse"):
        raise ConfigError(f"unknown coarse propagator {par.get('coarse')!r}")
    if par.get("newton_guess", "none") not in ("none", "local", "global"):
        raise ConfigError("newton_guess must be none, local or global")
    if par.get("epsilon", 0.0) < 0:
        raise ConfigError("epsilon must be >= 0")
    rom = cfg.get("rom", {})
    pts = rom.get("training_points", [])
    if not pts:
        raise ConfigError("training point list is empty")
    for p in pts:
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) for v in p)):
            raise ConfigError(f"training point {p!r} is not a pair of numbers")
    if "n_hat" not in rom and "upsilon" not in rom:
        raise ConfigError("[rom] needs n_hat or upsilon")
    try:
        grid_from_config(cfg)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid [grid]: {exc}") from exc


def grid_from_config(cfg: dict) -> TimeGrid:
    g = cfg["grid"]
    return build_grid(g["t_final"], g["coarse_intervals"], g["fine_per_coarse"])


@dataclass
class TrainedModel:
    model: PodModel
    grid: TimeGrid
    manifest: dict


def save_model(directory, model: PodModel, grid: TimeGrid, extra: Optional[dict] = None) -> dict:
    """Write ``U``, the singular values, one file per time-evolution basis, and ``manifest.toml``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / "U.txt", model.U, "U")
    write_matrix(d / "sigma.txt", model.singular_values[None, :], "sigma")
    width = max(3, len(str(model.n_hat)))
    files = []
    for j, th in enumerate(model.thetas, start=1):
        fname = f"theta_{j:0{width}d}.txt"
        write_matrix(d / fname, th.matrix, f"theta_{j}")
        files.append(fname)
    manifest = {
        "training_points": [list(map(float, mu)) for mu in model.params],
        "n_hat": model.n_hat,
        "grid": grid.to_dict(),
        "theta_files": files,
    }
    if model.upsilon is not None:
        manifest["upsilon"] = float(model.upsilon)
    if extra:
        manifest.update(extra)
    (d / "manifest.toml").write_text(tomli_w.dumps(manifest), encoding="utf-8")
    return manifest


def load_model(directory) -> TrainedModel:
    d = Path(directory)
    if not (d / "manifest.toml").exists():
        raise FileNotFoundError(f"no trained model in {os.fspath(d)} (run 'train' first)")
    manifest = tomllib.loads((d / "manifest.toml").read_text(encoding="utf-8"))
    U, _ = read_matrix(d / "U.txt")
    sigma, _ = read_matrix(d / "sigma.txt")
    thetas = [TimeEvolutionBasis(read_matrix(d / f)[0]) for f in manifest["theta_files"]]
    grid = TimeGrid.from_dict(manifest["grid"])
    model = PodModel(U, sigma.ravel(), thetas, grid.n_fine,
                     [tuple(p) for p in manifest["training_points"]], manifest.get("upsilon"))
    return TrainedModel(model, grid, manifest)
