import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forecast_parareal.analysis import random_orthonormal
from forecast_parareal.forecast import (LocalBasis, RankDeficientSample, SampleWindow,
                                        TimeEvolutionBasis, UnderdeterminedFit, energy_truncation,
                                        forecast_weights, gappy_fit, global_forecast,
                                        global_forecast_weights, local_basis, local_forecast,
                                        stability_constant)
from forecast_parareal.timegrid import build_grid

CONST3 = np.full((3, 1), 1 / np.sqrt(3))


def test_gappy_fit_constant_column():
    assert np.allclose(gappy_fit(CONST3, SampleWindow(0, 2), [1.0, 1.0], 0.0), 1.0, atol=1e-14)


def test_gappy_fit_samples_at_anchor():
    rng = np.random.default_rng(0)
    basis = random_orthonormal(rng, 10, 3)
    assert np.allclose(gappy_fit(basis, SampleWindow(2, 5), np.full(5, 0.7), 0.7), 0.0)


def test_gappy_fit_bad_inputs():
    with pytest.raises(ValueError):
        gappy_fit(CONST3, SampleWindow(0, 2), [1.0], 0.0)
    with pytest.raises(ValueError):
        gappy_fit(CONST3, SampleWindow(2, 2), [1.0, 1.0], 0.0)
    with pytest.raises(ValueError):
        SampleWindow(0, 0)


def test_rank_deficient_sample_falls_back():
    basis = np.zeros((4, 2))
    basis[0, 0] = basis[1, 0] = np.sqrt(0.5)
    basis[2, 1] = basis[3, 1] = np.sqrt(0.5)
    with pytest.warns(RankDeficientSample):
        fit = gappy_fit(basis, SampleWindow(0, 2), [1.0, 1.0], 0.0)
    assert np.allclose(fit, [1, 1, 0, 0])


def test_underdetermined_warns():
    rng = np.random.default_rng(1)
    with pytest.warns(UnderdeterminedFit):
        gappy_fit(random_orthonormal(rng, 8, 3), SampleWindow(0, 2), [1.0, 2.0], 0.0)


def test_global_forecast_examples():
    assert global_forecast(CONST3, 0.0, [1.0, 1.0], 0, 3) == pytest.approx(1.0, abs=1e-14)
    assert global_forecast(CONST3, 4.2, [9.0, -1.0], 0, 0) == 4.2
    with pytest.raises(IndexError):
        global_forecast(CONST3, 0.0, [1.0, 1.0], 0, 4)
    with pytest.raises(IndexError):
        global_forecast(CONST3, 0.0, [1.0, 1.0], 2, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(0, 10))
def test_global_exactness(seed, a, i):
    rng = np.random.default_rng(seed)
    n_fine = 20
    theta = TimeEvolutionBasis(random_orthonormal(rng, n_fine, a))
    y0 = rng.standard_normal()
    y = y0 + theta.matrix @ rng.standard_normal(a)
    alpha = a + 2
    for k in range(n_fine + 1):
        truth = y0 if k == 0 else y[k - 1]
        assert abs(global_forecast(theta, y0, y[i:i + alpha], i, k) - truth) <= 1e-10 * max(1, abs(truth))


def test_global_weights_match_forecast():
    rng = np.random.default_rng(5)
    theta = random_orthonormal(rng, 12, 3)
    s = rng.standard_normal(4)
    W = global_forecast_weights(theta, 4, [0, 5, 12])
    assert np.all(W[0] == 0)
    for row, k in zip(W[1:], (5, 12)):
        assert 1.3 + row @ (s - 1.3) == pytest.approx(global_forecast(theta, 1.3, s, 0, k), abs=1e-12)


def test_time_evolution_basis_checks():
    with pytest.raises(ValueError):
        TimeEvolutionBasis(np.ones((3, 1)))
    with pytest.raises(ValueError):
        TimeEvolutionBasis(np.eye(4)[:2].T @ np.ones((2, 5)))


@pytest.mark.parametrize("upsilon, b", [(0.6, 1), (1.0, 2)])
def test_local_basis_truncation(upsilon, b):
    grid = build_grid(1.0, 2, 2)
    # first interval block has singular values (2, 1)
    theta = np.array([[2.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    lb = local_basis(theta, 0, upsilon, grid)
    assert lb.b == b
    assert np.allclose(lb.matrix.T @ lb.matrix, np.eye(b))


def test_local_basis_rank_one_centered():
    grid = build_grid(1.0, 2, 3)
    v = np.array([0.6, 0.0, 0.8])
    theta = np.concatenate([np.zeros(3), v])[:, None]
    lb = local_basis(theta, 1, 1.0, grid)
    assert lb.b == 1
    assert abs(lb.matrix[:, 0] @ v) == pytest.approx(1.0, abs=1e-12)


def test_local_basis_centering_and_zero_block():
    grid = build_grid(1.0, 2, 2)
    theta = np.array([[0.5], [0.5], [0.5], [0.5]])
    lb0 = local_basis(theta, 0, 1.0, grid)
    lb1 = local_basis(theta, 1, 1.0, grid)
    assert lb0.b == 1 and not lb0.zero_block
    assert lb1.b == 0 and lb1.zero_block
    assert local_forecast(lb1, 3.0, [3.0], 2) == 3.0


def test_local_basis_errors():
    grid = build_grid(1.0, 2, 2)
    with pytest.raises(IndexError):
        local_basis(np.eye(4)[:, :1], 2, 1.0, grid)
    with pytest.raises(ValueError):
        local_basis(np.eye(4)[:, :1], 0, 1.5, grid)


def test_energy_truncation():
    assert energy_truncation([2.0, 1.0], 0.6) == 1
    assert energy_truncation([2.0, 1.0], 1.0) == 2
    assert energy_truncation([2.0, 1.0, 1e-17], 1.0) == 2
    assert energy_truncation([], 0.5) == 0
    assert energy_truncation([2.0, 1.0], 0.0) == 0


def test_local_forecast_examples():
    rng = np.random.default_rng(2)
    basis = random_orthonormal(rng, 6, 2)
    assert local_forecast(basis, 0.3, [1.0, 2.0, 3.0], 0) == 0.3
    for k in range(7):
        assert local_forecast(basis, 0.3, [0.3] * 3, k) == pytest.approx(0.3, abs=1e-15)
    y = 0.3 + basis @ np.array([1.5, -0.2])
    assert local_forecast(basis, 0.3, y[:3], 6) == pytest.approx(y[-1], abs=1e-12)
    with pytest.raises(ValueError):
        local_forecast(basis, 0.0, np.ones(7), 1)


def test_forecast_weights_examples():
    m = 5
    const = np.full((m, 1), 1 / np.sqrt(m))
    assert np.allclose(forecast_weights(const, 2, m), [0.5, 0.5], atol=1e-14)
    col = np.array([[0.1], [0.3], [0.5], [0.2]])
    col /= np.linalg.norm(col)
    assert forecast_weights(col, 1, 3)[0] == pytest.approx(col[2, 0] / col[0, 0], rel=1e-13)
    assert np.all(forecast_weights(col, 2, 0) == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(0, 3))
def test_weights_equal_forecast(seed, b, extra):
    rng = np.random.default_rng(seed)
    m_bar = 10
    basis = LocalBasis(random_orthonormal(rng, m_bar, b), 0)
    alpha = b + extra
    s = rng.standard_normal(alpha)
    anchor = rng.standard_normal()
    for target in range(m_bar + 1):
        g = forecast_weights(basis, alpha, target)
        direct = local_forecast(basis, anchor, s, target)
        assert anchor + g @ (s - anchor) == pytest.approx(direct, abs=1e-12 * max(1, abs(direct)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_oversampling_monotone(seed, b):
    rng = np.random.default_rng(seed)
    m_bar = 15
    basis = random_orthonormal(rng, m_bar, b)
    kappas = [stability_constant(basis, a) for a in range(b, m_bar + 1)]
    assert all(k2 <= k1 * (1 + 1e-12) for k1, k2 in zip(kappas, kappas[1:]))
    assert kappas[-1] == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_interpolation_limit(seed, b):
    rng = np.random.default_rng(seed)
    basis = random_orthonormal(rng, 12, b)
    s = rng.standard_normal(b)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RankDeficientSample)
        for k in range(1, b + 1):
            assert local_forecast(basis, 0.0, s, k) == pytest.approx(s[k - 1], abs=1e-9)


def test_stability_constant_underdetermined_is_infinite():
    rng = np.random.default_rng(0)
    assert stability_constant(random_orthonormal(rng, 6, 3), 2) == np.inf
