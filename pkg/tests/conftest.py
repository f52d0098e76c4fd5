import numpy as np
import pytest

from crowdpriv import ObserverConfig, Sensor, SensorPool, SystemModel
from crowdpriv.harness import two_room_example
from crowdpriv.model import closed_loop, mean_square_radius

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def scalar_config(a=0.5, l=0.25, c=(1.0, 1.0), V=(0.1, 0.01), w=0.01, xi=0.0, x0=1.0):
    model = SystemModel(A=a, W=w, X0=x0)
    pool = SensorPool.uniform([Sensor(ci, vi) for ci, vi in zip(c, V)])
    obs = ObserverConfig(L=l, Xi=xi, Omega=1.0)
    return model, pool, obs


@pytest.fixture
def scalar():
    return scalar_config()


@pytest.fixture
def two_room():
    cfg = two_room_example()
    return cfg.model, cfg.pool, cfg.observer(0.0)


def _rand_psd(rng, k, scale, ridge=0.0):
    G = rng.normal(size=(k, k))
    return scale * (G @ G.T) / k + ridge * np.eye(k)


def random_config(rng, xi_pd=True, rho_max=0.95, ms_max=0.9, identical=False):
    """Random valid configuration with a mean-square stable error recursion."""
    while True:
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 5))
        p = int(rng.integers(1, 4))
        A = rng.normal(size=(n, n)) * rng.uniform(0.3, 1.2) / np.sqrt(n)
        L = rng.normal(size=(n, p)) * 0.3
        if identical:
            C = rng.normal(size=(p, n))
            V = _rand_psd(rng, p, 0.2)
            sensors = [Sensor(C.copy(), V.copy()) for _ in range(m)]
        else:
            sensors = [Sensor(rng.normal(size=(p, n)), _rand_psd(rng, p, 0.2)) for _ in range(m)]
        probs = rng.dirichlet(np.ones(m))
        probs = probs / probs.sum()
        pool = SensorPool(sensors, probs)
        model = SystemModel(A=A, W=_rand_psd(rng, n, 0.05), X0=_rand_psd(rng, n, 0.5))
        Xi = _rand_psd(rng, n, 0.05, ridge=1e-3) if xi_pd else np.zeros((n, n))
        obs = ObserverConfig(L=L, Xi=Xi, Omega=np.eye(n))
        F = closed_loop(model, pool, obs)
        if max(np.max(np.abs(np.linalg.eigvals(Fs))) for Fs in F) >= rho_max:
            continue
        if mean_square_radius(model, pool, obs) >= ms_max:
            continue
        return model, pool, obs
