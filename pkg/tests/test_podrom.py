import numpy as np
import pytest

from forecast_parareal.burgers import BurgersProblem
from forecast_parareal.odecore import CallableSystem, LinearSystem, NewtonConfig, fine_propagate
from forecast_parareal.parareal import serial_reference
from forecast_parareal.podrom import (EmptyTruncation, PodModel, RomSystem, SnapshotSet, build_rom,
                                      collect_snapshots, forecast_assets_for_rom,
                                      orthonormal_span, pod, rom_temporal_bases)
from forecast_parareal.timegrid import build_grid


def test_snapshots_scalar_closed_form(decay):
    grid = build_grid(1.0, 2, 5)
    snaps = collect_snapshots(lambda mu: decay, grid, [(0,)])
    assert snaps.matrices[0].shape == (1, 10)
    assert np.allclose(snaps.matrices[0][0], (1 / 1.1) ** np.arange(1, 11) - 1, rtol=1e-13)


def test_snapshots_zero_velocity(still):
    snaps = collect_snapshots(lambda mu: still, build_grid(1.0, 1, 3), [0, 1])
    assert snaps.n_train == 2 and np.all(snaps.concatenated() == 0)


def test_snapshots_errors():
    with pytest.raises(ValueError):
        collect_snapshots(lambda mu: None, build_grid(1.0, 1, 1), [])
    blowup = CallableSystem(lambda x, t: x ** 2, lambda x, t: np.diag(2 * x), [1.0])
    with pytest.raises(RuntimeError, match="mu=7"):
        collect_snapshots(lambda mu: blowup, build_grid(10.0, 1, 1), [7])


def test_pod_diagonal_example():
    snaps = SnapshotSet([np.array([[2.0], [0.0]]), np.array([[0.0], [1.0]])], [1, 2])
    assert pod(snaps, upsilon=0.6).n_hat == 1
    model = pod(snaps, upsilon=1.0)
    assert model.n_hat == 2 and np.allclose(model.singular_values, [2, 1])
    with pytest.raises(EmptyTruncation):
        pod(snaps, upsilon=0.0)
    assert pod(snaps, upsilon=0.6, n_hat=2).n_hat == 2


def test_pod_rank_one_single_run():
    profile = np.array([1.0, 2.0, -1.0, 0.5])
    snaps = SnapshotSet([np.outer([3.0, 4.0], profile)], ["a"])
    model = pod(snaps, upsilon=1.0)
    assert model.n_hat == 1
    th = model.thetas[0].matrix[:, 0]
    assert abs(th @ profile) == pytest.approx(np.linalg.norm(profile))


def test_pod_duplicate_runs():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((6, 5))
    model = pod(SnapshotSet([W, W.copy()], [1, 1]), n_hat=3)
    for th in model.thetas:
        assert th.a == 1
        assert np.allclose(th.matrix.T @ th.matrix, np.eye(1), atol=1e-12)


def test_pod_orthonormality_and_reconstruction():
    rng = np.random.default_rng(1)
    snaps = SnapshotSet([rng.standard_normal((8, 6)) for _ in range(3)], [1, 2, 3])
    model = pod(snaps, upsilon=1.0)
    W = snaps.concatenated()
    assert np.allclose(model.U.T @ model.U, np.eye(model.n_hat), atol=1e-10)
    for th in model.thetas:
        assert np.allclose(th.matrix.T @ th.matrix, np.eye(th.a), atol=1e-10)
    assert np.linalg.norm(model.U @ (model.U.T @ W) - W) <= 1e-8 * np.linalg.norm(W)


def test_orthonormal_span_rank():
    A = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
    Q = orthonormal_span(A)
    assert Q.shape == (3, 1)
    assert orthonormal_span(np.zeros((3, 2))).shape == (3, 0)


def test_rom_full_basis_matches_fom():
    fom = BurgersProblem(1.6, 0.022, cells=30)
    grid = build_grid(2.0, 2, 5)
    rom = RomSystem(fom, np.eye(30))
    assert np.all(rom.initial_state == 0)
    ref = serial_reference(fom, grid)
    red = serial_reference(rom, grid)
    lifted = np.array([rom.lift(r) for r in red])
    assert np.allclose(lifted, ref, atol=1e-8)


def test_rom_linear_lspg_normal_equations():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 6)) - 4 * np.eye(6)
    x0 = rng.standard_normal(6)
    Phi = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    rom = RomSystem(LinearSystem(A, x0), Phi)
    h = 0.1
    xi = np.array([0.3, -0.2])
    w = rom.implicit_solve(xi, 0.0, h, h).x
    # minimize ||(I - hA)(x0 + Phi w) - (x0 + Phi xi)|| over w
    B = (np.eye(6) - h * A) @ Phi
    rhs = x0 + Phi @ xi - (np.eye(6) - h * A) @ x0
    expected = np.linalg.lstsq(B, rhs, rcond=None)[0]
    assert np.allclose(w, expected, atol=1e-10)


def test_ideal_case_trajectory_in_basis_range():
    mu = (1.6, 0.022)
    grid = build_grid(2.0, 2, 5)
    fom = BurgersProblem(*mu, cells=40)
    model = pod(collect_snapshots(lambda m: fom, grid, [mu]), n_hat=6)
    rom = build_rom(model, fom)
    traj = serial_reference(rom, grid)
    for j, th in enumerate(model.thetas):
        h = traj[1:, j] - traj[0, j]
        res = h - th.matrix @ (th.matrix.T @ h)
        assert np.linalg.norm(res) <= 1e-8 * max(1.0, np.linalg.norm(h))


def test_forecast_assets():
    rng = np.random.default_rng(3)
    snaps = SnapshotSet([rng.standard_normal((10, 8)) for _ in range(2)], [1, 2])
    model = pod(snaps, n_hat=5)
    grid = build_grid(1.0, 2, 4)
    full = forecast_assets_for_rom(model, 5, 1.0, grid)
    assert np.array_equal(full.restriction.R, np.eye(5)) and full.n_y == 5
    one = forecast_assets_for_rom(model, 1, 1.0, grid)
    assert one.n_y == 1 and len(one.local_bases[0]) == 2
    assert one.global_bases[0] is model.thetas[0]
    with pytest.raises(ValueError):
        forecast_assets_for_rom(model, 6, 1.0, grid)


def test_rom_temporal_bases():
    fom = BurgersProblem(1.6, 0.022, cells=20)
    grid = build_grid(1.0, 1, 4)
    model = pod(collect_snapshots(lambda m: fom, grid, [0]), n_hat=3)
    bases = rom_temporal_bases(lambda m: build_rom(model, fom), grid, [0], 2)
    assert len(bases) == 2 and all(b.a == 1 for b in bases)


def test_truncated_model():
    rng = np.random.default_rng(4)
    model = pod(SnapshotSet([rng.standard_normal((6, 4))], [0]), n_hat=3)
    t = model.truncated(2)
    assert t.n_hat == 2 and len(t.thetas) == 2
    with pytest.raises(ValueError):
        model.truncated(4)


@pytest.mark.parametrize("seed", range(5))
def test_lspg_damped_steps_never_increase_residual(seed):
    # large CN steps from sign-changing states hit the nonsmooth sonic-point flux
    rng = np.random.default_rng(seed)
    fom = BurgersProblem(1.7, 0.02, cells=40)
    Phi = np.linalg.qr(rng.standard_normal((40, 6)))[0]
    rom = RomSystem(fom, Phi)
    xi = rng.standard_normal(6) * 3.0
    dt, c = 2.5, 1.25
    base = Phi @ xi + (dt - c) * fom.velocity(rom.lift(xi), 0.0)

    def rnorm(w):
        return np.linalg.norm(Phi @ w - base - c * fom.velocity(rom.lift(w), dt))

    res = rom.implicit_solve(xi, 0.0, dt, dt, theta=0.5, cfg=NewtonConfig(max_iters=500))
    assert rnorm(res.x) <= rnorm(xi)
    assert np.all(np.isfinite(res.x))
