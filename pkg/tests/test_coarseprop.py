import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forecast_parareal.coarseprop import (ForecastCoarseConfig, RestrictionPair, coarse_propagate,
                                          initialize_global_forecast, initialize_sequential,
                                          lf_coarse_direct, lf_coarse_propagate,
                                          newton_guess_from_forecast)
from forecast_parareal.analysis import random_orthonormal
from forecast_parareal.forecast import LocalBasis
from forecast_parareal.odecore import LinearSystem, StepStats, be_step, fine_propagate
from forecast_parareal.timegrid import build_grid

from ideal import ideal_assets


def rotating_decay():
    A = np.array([[-0.3, 1.0, 0.0], [-1.0, -0.3, 0.0], [0.0, 0.0, -0.5]])
    return LinearSystem(A, [1.0, 0.0, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 3), st.integers(0, 2**31))
def test_complement_identity(N, drop, seed):
    n_y = max(1, N - drop)
    pair = RestrictionPair.selector(N, n_y)
    xi = np.random.default_rng(seed).standard_normal(N)
    back = pair.P @ (pair.R @ xi) + pair.P_perp @ (pair.R_perp @ xi)
    assert np.allclose(back, xi, atol=1e-10)
    assert np.array_equal(pair.R @ pair.P, np.eye(n_y))


def test_restriction_pair_checks():
    ident = RestrictionPair.identity(3)
    assert ident.n_y == ident.N == 3
    with pytest.raises(ValueError):
        RestrictionPair(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        RestrictionPair.selector(3, 0)
    with pytest.raises(ValueError):
        RestrictionPair(np.eye(2), np.eye(2), R_perp=np.zeros((0, 2)))


def test_lf_scalar_exact(decay):
    grid = build_grid(2.5, 4, 5)
    lf, _, traj = ideal_assets(decay, grid, memory=2)
    for n in range(grid.M):
        res = lf_coarse_propagate(lf, decay, traj[grid.m_bar * n], n)
        assert res.state[0] == pytest.approx(traj[grid.m_bar * (n + 1), 0], abs=1e-12)


def test_lf_ideal_vector_system():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    lf, _, traj = ideal_assets(sys, grid, memory=3)
    for n in range(grid.M):
        res = lf_coarse_propagate(lf, sys, traj[8 * n], n)
        assert np.allclose(res.state, traj[8 * (n + 1)], atol=1e-9)


def test_lf_interpolation_limit(decay):
    grid = build_grid(1.0, 2, 4)
    lf, _, traj = ideal_assets(decay, grid, memory=4)
    res = lf_coarse_propagate(lf, decay, traj[0], 0)
    assert res.state[0] == pytest.approx(res.samples[-1, 0], abs=1e-13)


def test_lf_output_in_range_of_prolongation():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    lf, _, traj = ideal_assets(sys, grid, memory=3, n_y=2)
    res = lf_coarse_propagate(lf, sys, traj[8], 1)
    assert np.all(lf.restriction.R_perp @ res.state == 0.0)


def test_lf_reuse_matches_fine():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    lf, _, _ = ideal_assets(sys, grid, memory=3)
    xi = np.array([0.4, -1.0, 0.2])
    res = lf_coarse_propagate(lf, sys, xi, 2)
    full = fine_propagate(sys, grid, xi, 16, 24)
    assert np.array_equal(res.samples, full[1:4])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(0, 2))
def test_weights_match_direct_path(seed, b, extra):
    rng = np.random.default_rng(seed)
    N, n_y, grid = 4, 3, build_grid(1.0, 2, 7)
    bases = [[LocalBasis(random_orthonormal(rng, 7, b), n) for n in range(2)] for _ in range(n_y)]
    cfg = ForecastCoarseConfig(b + extra, bases, RestrictionPair.selector(N, n_y), grid)
    xi = rng.standard_normal(N)
    samples = rng.standard_normal((b + extra, N))
    for n in range(2):
        via_weights = lf_coarse_propagate(cfg, None, xi, n, samples=samples).state
        direct = lf_coarse_direct(cfg, xi, samples, n)
        assert np.allclose(via_weights, direct, rtol=1e-12, atol=1e-12)


def test_config_validation():
    grid = build_grid(1.0, 2, 4)
    bases = [[LocalBasis(np.eye(4)[:, :1], n) for n in range(2)]]
    with pytest.raises(ValueError):
        ForecastCoarseConfig(5, bases, RestrictionPair.identity(1), grid)
    with pytest.raises(ValueError):
        ForecastCoarseConfig(2, bases[:1] * 2, RestrictionPair.identity(1), grid)
    with pytest.raises(ValueError):
        ForecastCoarseConfig(2, [bases[0][:1]], RestrictionPair.identity(1), grid)


def test_initialize_fine_as_coarse_is_serial():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    _, _, traj = ideal_assets(sys, grid, memory=3)
    states, _ = initialize_sequential("FineAsCoarse", sys, sys.initial_state, grid)
    assert np.array_equal(states, traj[::8])


@pytest.mark.parametrize("kind", ["BE", "CN"])
def test_initialize_zero_velocity(still, kind):
    grid = build_grid(3.0, 3, 2)
    states, samples = initialize_sequential(kind, still, still.initial_state, grid)
    assert np.all(states == still.initial_state)
    assert samples == [None] * 3


def test_initialize_lf_ideal():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    lf, _, traj = ideal_assets(sys, grid, memory=3)
    states, samples = initialize_sequential("LF", sys, sys.initial_state, grid, lf)
    assert np.allclose(states, traj[::8], atol=1e-9)
    assert all(s.shape == (3, 3) for s in samples)


def test_initialize_global_ideal():
    sys = rotating_decay()
    grid = build_grid(6.0, 4, 6)
    _, gf, traj = ideal_assets(sys, grid, memory=3)
    stats = StepStats()
    states, samples = initialize_global_forecast(gf, sys, sys.initial_state, stats=stats)
    assert np.allclose(states, traj[::6], atol=1e-9)
    assert stats.steps == 3 and np.array_equal(samples, traj[1:4])


def test_initialize_global_equilibrium_start():
    sys = rotating_decay()
    grid = build_grid(6.0, 4, 6)
    _, gf, _ = ideal_assets(sys, grid, memory=3, n_y=2)
    x0 = np.array([0.5, -0.5, 3.0])
    states, _ = initialize_global_forecast(gf, sys, x0, samples=np.tile(x0, (3, 1)))
    PR = gf.restriction.P @ gf.restriction.R
    assert np.allclose(states[1:], PR @ x0)


def test_coarse_propagate_kinds(decay):
    grid = build_grid(2.0, 2, 4)
    assert coarse_propagate("BE", decay, np.ones(1), 0, grid).state[0] == pytest.approx(0.5)
    res = coarse_propagate("FineAsCoarse", decay, np.ones(1), 1, grid)
    assert res.state[0] == pytest.approx(1 / 1.25 ** 4) and res.samples.shape == (4, 1)
    with pytest.raises(ValueError):
        coarse_propagate("LF", decay, np.ones(1), 0, grid)
    with pytest.raises(ValueError):
        coarse_propagate("GF", decay, np.ones(1), 0, grid)


def test_newton_guess_ideal_and_anchor():
    sys = rotating_decay()
    grid = build_grid(6.0, 3, 8)
    lf, gf, traj = ideal_assets(sys, grid, memory=3)
    anchor = traj[8]
    samples = traj[9:12]
    assert np.array_equal(newton_guess_from_forecast("local", lf, anchor, samples, 8, n=1), anchor)
    for i in range(12, 17):
        guess = newton_guess_from_forecast("local", lf, anchor, samples, i, n=1)
        stats = StepStats()
        w = be_step(sys, traj[i - 1], grid.fine_time(i), grid.h, guess=guess, stats=stats)
        assert stats.newton_iters == 0 and np.allclose(w, traj[i], atol=1e-9)
    g = newton_guess_from_forecast("global", gf, traj[0], traj[1:4], 20)
    assert np.allclose(g, traj[20], atol=1e-9)
    with pytest.raises(IndexError):
        newton_guess_from_forecast("local", lf, anchor, samples, 30, n=1)
    with pytest.raises(ValueError):
        newton_guess_from_forecast("other", lf, anchor, samples, 9)
