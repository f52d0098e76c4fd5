import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdpriv import (
    ObserverConfig,
    Sensor,
    SensorPool,
    SystemModel,
    error_cov_step,
    noise_gain_matrix,
    performance,
    steady_state_cov,
)
from crowdpriv.covariance import covariance_sequence
from crowdpriv.errors import NoConvergenceError, NotSchurError

from conftest import random_config, scalar_config


def test_scalar_step_from_zero(scalar):
    model, pool, obs = scalar
    E1 = error_cov_step(np.zeros((1, 1)), model, pool, obs)
    # l^2 * mean(V) + w = 0.0625 * 0.055 + 0.01
    assert E1[0, 0] == pytest.approx(0.0134375, rel=1e-15, abs=0)


def test_noiseless_step_is_zero():
    model, pool, obs = scalar_config(V=(0.0, 0.0), w=0.0, xi=0.0)
    assert error_cov_step(np.zeros((1, 1)), model, pool, obs)[0, 0] == 0.0


def test_two_room_step_from_zero(two_room):
    model, pool, obs = two_room
    E1 = error_cov_step(np.zeros((2, 2)), model, pool, obs)
    expected = np.diag([0.25 * 0.055 + 1e-4, 1e-32 + 1e-4])
    np.testing.assert_allclose(E1, expected, rtol=1e-14, atol=0)


def test_step_rejects_wrong_shape(two_room):
    model, pool, obs = two_room
    with pytest.raises(ValueError):
        error_cov_step(np.zeros((3, 3)), model, pool, obs)


def test_scalar_steady_state_closed_form(scalar):
    model, pool, obs = scalar
    E, trace = steady_state_cov(model, pool, obs)
    expected = (0.25**2 * 0.055 + 0.0 + 0.01) / (1 - 0.25**2)
    assert E[0, 0] == pytest.approx(expected, rel=1e-12, abs=0)
    assert trace.converged
    assert trace.fixed_point_residual < 1e-12
    assert trace.E_seq[0][0, 0] == 1.0  # starts at X0


@pytest.mark.parametrize("a,l,xi,w", [
    (0.9, 0.3, 0.02, 0.05), (-0.4, 0.5, 1.0, 0.0), (0.2, 0.9, 0.0, 0.3)])
def test_scalar_closed_form_other_gains(a, l, xi, w):
    model, pool, obs = scalar_config(a=a, l=l, xi=xi, w=w)
    E, _ = steady_state_cov(model, pool, obs)
    q = (a - l) ** 2
    # The relative stopping step leaves an error of about tol * q / (1 - q).
    expected = (l * l * 0.055 + xi + w) / (1 - q)
    assert E[0, 0] == pytest.approx(expected, rel=1e-12 / (1 - q), abs=0)


def test_zero_noise_converges_in_one_step():
    model, pool, obs = scalar_config(V=(0.0, 0.0), w=0.0, xi=0.0, x0=0.0)
    E, trace = steady_state_cov(model, pool, obs)
    assert E[0, 0] == 0.0
    assert trace.iterations == 1


def test_marginal_system_not_schur():
    model, pool, obs = scalar_config(a=1.0, l=0.0)
    with pytest.raises(NotSchurError) as err:
        steady_state_cov(model, pool, obs)
    assert "1" in str(err.value)


def test_divergent_switching_raises():
    A = np.array([[0.0, 2.0], [2.0, 0.0]])
    pool = SensorPool.uniform([Sensor([[0.0, 0.0], [2.0, 0.0]], np.eye(2)),
                               Sensor([[0.0, 2.0], [0.0, 0.0]], np.eye(2))])
    model = SystemModel(A=A, W=np.eye(2), X0=np.eye(2))
    obs = ObserverConfig(L=np.eye(2), Xi=np.eye(2), Omega=np.eye(2))
    with pytest.raises(NoConvergenceError, match="diverges"):
        steady_state_cov(model, pool, obs)


def test_max_iter_exhausted(two_room):
    model, pool, obs = two_room
    with pytest.raises(NoConvergenceError):
        steady_state_cov(model, pool, obs, max_iter=10)


def test_performance():
    assert performance(np.array([[0.0143333]]), np.eye(1)) == pytest.approx(0.0143333)
    assert performance(np.diag([2.0, 3.0]), np.zeros((2, 2))) == 0.0
    assert performance(np.diag([2.0, 3.0]), np.eye(2)) == 5.0


def test_scalar_noise_gain_closed_form(scalar):
    model, pool, obs = scalar
    M = noise_gain_matrix(model, pool, obs)
    assert M[0, 0] == pytest.approx(1 / (1 - 0.25**2), rel=1e-12, abs=0)


def test_noise_gain_trivial():
    model = SystemModel(A=np.zeros((2, 2)), W=np.eye(2), X0=np.eye(2))
    pool = SensorPool.uniform([Sensor([[1.0, 0.0]], 1.0)])
    obs = ObserverConfig(L=np.zeros((2, 1)), Xi=np.eye(2), Omega=np.eye(2))
    np.testing.assert_array_equal(noise_gain_matrix(model, pool, obs), np.eye(2))


def test_noise_gain_two_room_fixed_point(two_room):
    model, pool, obs = two_room
    M = noise_gain_matrix(model, pool, obs)
    F = model.A - obs.L @ pool.sensors[0].C
    residual = F @ M @ F.T + np.eye(2) - M
    assert np.linalg.norm(residual) < 1e-10
    # Linear growth: E*(lambda I) - E*(0) = lambda M.
    lam = 0.37
    E0, _ = steady_state_cov(model, pool, obs.with_xi(np.zeros((2, 2))))
    E1, _ = steady_state_cov(model, pool, obs.with_xi(lam * np.eye(2)))
    np.testing.assert_allclose(E1 - E0, lam * M, rtol=1e-8, atol=1e-12)


def test_sequence_matches_steps(scalar):
    model, pool, obs = scalar
    seq = covariance_sequence(model, pool, obs, 5)
    E = model.X0
    for k in range(1, 6):
        E = error_cov_step(E, model, pool, obs)
        np.testing.assert_allclose(seq[k], E, rtol=1e-15)


def _psd(M, tol=1e-9):
    return np.linalg.eigvalsh(0.5 * (M + M.T))[0] >= -tol


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_step_preserves_psd_and_order(seed):
    rng = np.random.default_rng(seed)
    model, pool, obs = random_config(rng, xi_pd=bool(rng.integers(2)))
    n = model.n
    G = rng.normal(size=(n, n))
    E1 = G @ G.T
    H = rng.normal(size=(n, n))
    E2 = E1 + H @ H.T
    F1 = error_cov_step(E1, model, pool, obs)
    F2 = error_cov_step(E2, model, pool, obs)
    assert _psd(F1)
    assert _psd(F2 - F1, tol=1e-9 * max(1.0, np.abs(F2).max()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_steady_state_residual_and_xi_monotonicity(seed):
    rng = np.random.default_rng(seed)
    model, pool, obs = random_config(rng)
    E, trace = steady_state_cov(model, pool, obs)
    assert trace.fixed_point_residual < 1e-10
    n = model.n
    G = rng.normal(size=(n, n))
    E_more, _ = steady_state_cov(model, pool, obs.with_xi(obs.Xi + G @ G.T))
    assert performance(E_more, np.eye(n)) >= performance(E, np.eye(n)) - 1e-12
