"""Monte Carlo simulation of the plant, the crowd sensors and the noisy observer.

Randomness
----------
Every run owns an independent PCG64 stream.  ``simulate_run(seed=s)`` seeds
it with ``SeedSequence(s)``; run ``r`` of an ensemble with master seed ``m``
uses ``SeedSequence(m, spawn_key=(r,))``.  Within a run the draws happen in
a fixed order as whole blocks: initial state (n), selection uniforms (K),
measurement-noise normals (K x p), privacy-noise normals (K x n) and
process-noise normals (K x n).

Ensembles are processed in fixed-size chunks of runs, so results do not
depend on how many worker threads are used.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _linalg as la

CHUNK = 256
DEFAULT_HORIZON = 1000
BURN_IN_FRACTION = 0.2


def default_burn_in(horizon):
    return int(BURN_IN_FRACTION * horizon)


def run_rng(master_seed, run_index=None):
    if run_index is None:
        ss = np.random.SeedSequence(master_seed)
    else:
        ss = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    return np.random.Generator(np.random.PCG64(ss))


def sample_gaussian(rng, cov, size, name="covariance"):
    """Draw ``size`` zero-mean samples with (possibly singular) covariance ``cov``."""
    F = la.psd_factor(cov, name)
    z = rng.standard_normal((size, F.shape[1]))
    return z @ F.T


@dataclass
class Trajectory:
    horizon: int
    states: np.ndarray        # (K+1, n)
    estimates: np.ndarray     # (K+1, n)
    errors: np.ndarray        # (K+1, n), estimates - states
    sensor_ids: np.ndarray    # (K,), 0-based
    measurements: np.ndarray  # (K, p)
    seed: int

    def to_rows(self):
        """Rows ``k, s, y..., x..., xhat..., e...`` for CSV export."""
        K = self.horizon
        rows = []
        for k in range(K + 1):
            s = int(self.sensor_ids[k]) if k < K else -1
            y = self.measurements[k] if k < K else np.full(self.measurements.shape[1], np.nan)
            rows.append([k, s, *y, *self.states[k], *self.estimates[k], *self.errors[k]])
        return rows


@dataclass
class TrajectoryBatch:
    """Several runs stacked along a leading axis; see :class:`Trajectory`."""

    run_indices: np.ndarray
    states: np.ndarray
    estimates: np.ndarray
    sensor_ids: np.ndarray
    measurements: np.ndarray

    @property
    def errors(self):
        return self.estimates - self.states

    @property
    def horizon(self):
        return self.sensor_ids.shape[1]


class _Factors:
    """Covariance square roots and selection CDF, computed once per config."""

    def __init__(self, model, pool, observer):
        self.A = np.asarray(model.A, dtype=float)
        self.L = np.asarray(observer.L, dtype=float)
        self.C = pool.stacked_C()
        self.X0 = la.psd_factor(model.X0, "X0")
        self.W = la.psd_factor(model.W, "W")
        self.Xi = la.psd_factor(observer.Xi, "Xi")
        self.V = np.stack([la.psd_factor(s.V, f"V_{i}") for i, s in enumerate(pool.sensors)])
        self.cum = np.cumsum(pool.probs)
        self.n = model.n
        self.p = pool.p
        self.m = pool.m


def _draw(rng, f, K):
    z0 = rng.standard_normal(f.n)
    u = rng.random(K)
    zv = rng.standard_normal((K, f.p))
    zxi = rng.standard_normal((K, f.n))
    zw = rng.standard_normal((K, f.n))
    s = np.minimum(np.searchsorted(f.cum, u, side="right"), f.m - 1)
    return z0, s, zv, zxi, zw


def _propagate(f, K, draws):
    z0 = np.stack([d[0] for d in draws])
    s = np.stack([d[1] for d in draws])
    zv = np.stack([d[2] for d in draws])
    zxi = np.stack([d[3] for d in draws])
    zw = np.stack([d[4] for d in draws])
    R = len(draws)

    v = np.einsum("rkij,rkj->rki", f.V[s], zv)
    xi = zxi @ f.Xi.T
    w = zw @ f.W.T
    Cs = f.C[s]  # (R, K, p, n)

    X = np.empty((R, K + 1, f.n))
    Xh = np.empty((R, K + 1, f.n))
    Y = np.empty((R, K, f.p))
    X[:, 0] = z0 @ f.X0.T
    Xh[:, 0] = 0.0
    At, Lt = f.A.T, f.L.T
    for k in range(K):
        x, xh, C = X[:, k], Xh[:, k], Cs[:, k]
        y = np.einsum("rij,rj->ri", C, x) + v[:, k]
        Y[:, k] = y
        innov = y - np.einsum("rij,rj->ri", C, xh)
        Xh[:, k + 1] = xh @ At + innov @ Lt + xi[:, k]
        X[:, k + 1] = x @ At + w[:, k]
    return X, Xh, s, Y


def simulate_run(model, pool, observer, horizon, seed) -> Trajectory:
    """Simulate one run of length ``horizon`` from ``SeedSequence(seed)``.

    ``x[0] ~ N(0, X0)`` and the estimator starts at ``xhat[0] = 0``.
    """
    f = _Factors(model, pool, observer)
    X, Xh, S, Y = _propagate(f, horizon, [_draw(run_rng(seed), f, horizon)])
    return Trajectory(horizon, X[0], Xh[0], Xh[0] - X[0], S[0], Y[0], seed)


def simulate_batch(model, pool, observer, horizon, master_seed, run_indices,
                   _factors=None) -> TrajectoryBatch:
    """Simulate the given ensemble runs together (vectorised across runs)."""
    f = _factors or _Factors(model, pool, observer)
    idx = np.asarray(run_indices, dtype=np.int64)
    draws = [_draw(run_rng(master_seed, int(r)), f, horizon) for r in idx]
    try:
        X, Xh, S, Y = _propagate(f, horizon, draws)
    except (ValueError, FloatingPointError) as exc:
        raise type(exc)(f"runs {idx[0]}..{idx[-1]}: {exc}") from exc
    return TrajectoryBatch(idx, X, Xh, S, Y)


def map_batches(fn, model, pool, observer, horizon, runs, master_seed, threads=1, chunk=CHUNK):
    """Apply ``fn`` to every chunk (possibly concurrently); results in run order."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    f = _Factors(model, pool, observer)

    def job(a):
        b = simulate_batch(model, pool, observer, horizon, master_seed,
                           np.arange(a, min(a + chunk, runs)), _factors=f)
        return fn(b)

    starts = list(range(0, runs, chunk))
    if threads <= 1:
        return [job(a) for a in starts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, starts))


@dataclass
class EnsembleStats:
    """Across-run statistics of the estimation error ``e = xhat - x``.

    Covariances use the 1/R (population) convention, so a single run gives
    zero.  Standard errors are across-run standard deviations over sqrt(R).
    The steady-state window is ``burn_in <= k <= horizon``.
    """

    runs: int
    horizon: int
    burn_in: int
    empirical_E: np.ndarray        # (K+1, n, n)
    empirical_E_se: np.ndarray     # (K+1, n, n)
    mean_sq_error: np.ndarray      # (K+1,)
    mean_sq_error_se: np.ndarray   # (K+1,)
    steady_E: np.ndarray           # (n, n) window average of e e^T
    steady_E_se: np.ndarray
    steady_mse: float
    steady_mse_se: float


def _chunk_moments(batch, burn_in):
    e = batch.errors
    ee = np.einsum("rki,rkj->rkij", e, e)
    sq = np.einsum("rki,rki->rk", e, e)
    return {
        "sum_e": e.sum(axis=0),
        "sum_ee": ee.sum(axis=0),
        "sum_ee2": (ee ** 2).sum(axis=0),
        "sum_sq": sq.sum(axis=0),
        "sum_sq2": (sq ** 2).sum(axis=0),
        "run_ee": ee[:, burn_in:].mean(axis=1),
        "run_sq": sq[:, burn_in:].mean(axis=1),
    }


def _se(sum1, sum2, R):
    var = np.clip(sum2 / R - (sum1 / R) ** 2, 0.0, None)
    return np.sqrt(var / R)


def monte_carlo(model, pool, observer, horizon, runs, master_seed, burn_in=None,
                threads=1) -> EnsembleStats:
    """Run ``runs`` independent trajectories and aggregate error statistics."""
    if burn_in is None:
        burn_in = default_burn_in(horizon)
    if not 0 <= burn_in <= horizon:
        raise ValueError(f"burn_in {burn_in} outside [0, {horizon}]")
    parts = map_batches(lambda b: _chunk_moments(b, burn_in), model, pool, observer,
                        horizon, runs, master_seed, threads=threads)
    tot = {key: np.sum(np.stack([p[key] for p in parts]), axis=0)
           for key in ("sum_e", "sum_ee", "sum_ee2", "sum_sq", "sum_sq2")}
    run_ee = np.concatenate([p["run_ee"] for p in parts])
    run_sq = np.concatenate([p["run_sq"] for p in parts])

    R = runs
    mean = tot["sum_e"] / R
    emp = la.symmetrize(tot["sum_ee"] / R - np.einsum("ki,kj->kij", mean, mean))
    emp_se = _se(tot["sum_ee"], tot["sum_ee2"], R)
    mse = tot["sum_sq"] / R
    mse_se = _se(tot["sum_sq"], tot["sum_sq2"], R)
    steady_E = run_ee.mean(axis=0)
    steady_E_se = run_ee.std(axis=0) / np.sqrt(R)
    return EnsembleStats(
        runs=R, horizon=horizon, burn_in=burn_in,
        empirical_E=emp, empirical_E_se=emp_se,
        mean_sq_error=mse, mean_sq_error_se=mse_se,
        steady_E=steady_E, steady_E_se=steady_E_se,
        steady_mse=float(run_sq.mean()), steady_mse_se=float(run_sq.std() / np.sqrt(R)),
    )
