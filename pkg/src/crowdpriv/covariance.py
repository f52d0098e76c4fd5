"""Error-covariance propagation for the randomly switched observer.

With ``F_s = A - L C_s`` the estimation error covariance obeys

    E[k+1] = sum_s p(s) F_s E[k] F_s^T + L V_bar L^T + Xi + W,

an affine map whose linear part is a contraction when the mean-square
radius is below one.  The steady state ``E*`` is found by iterating the map
itself (Banach iteration) rather than by a direct Lyapunov solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .errors import NoConvergenceError, NotSchurError
from .model import EPS_SCHUR, closed_loop, mean_sensor_stats

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000
_DIVERGED = 1e150


@dataclass
class CovarianceTrace:
    E_seq: list = field(repr=False)
    converged: bool
    iterations: int
    residual: float
    fixed_point_residual: float = float("nan")


def _weighted_congruence(F, probs, E):
    # sum_s p(s) F_s E F_s^T
    return np.einsum("s,sij,jk,slk->il", probs, F, E, F)


def _affine_parts(model, pool, observer):
    F = closed_loop(model, pool, observer)
    _, V_bar = mean_sensor_stats(pool)
    L = observer.L
    Q = L @ V_bar @ L.T + observer.Xi + model.W
    return F, la.symmetrize(Q)


def error_cov_step(E, model, pool, observer):
    """One step of the error-covariance recursion."""
    E = np.asarray(E, dtype=float)
    n = model.n
    if E.shape != (n, n):
        raise ValueError(f"E has shape {E.shape}, expected {(n, n)}")
    F, Q = _affine_parts(model, pool, observer)
    return la.symmetrize(_weighted_congruence(F, pool.probs, E) + Q)


def check_schur(model, pool, observer):
    """Raise :class:`NotSchurError` unless every ``A - L C_s`` is Schur."""
    radii = [la.spectral_radius(Fs) for Fs in closed_loop(model, pool, observer)]
    bad = [(i, r) for i, r in enumerate(radii) if r >= 1.0 - EPS_SCHUR]
    if bad:
        detail = ", ".join(f"sensor {i}: {r:.12g}" for i, r in bad)
        raise NotSchurError(f"A - L C_s is not Schur (spectral radius {detail})", radii)
    return radii


def _iterate(F, probs, Q, E0, tol, max_iter, keep):
    """Banach iteration ``E <- sum p F E F^T + Q`` from ``E0``.

    Stops once the Frobenius step is at most ``tol * max(||E||_F, ||Q||_F)``,
    i.e. relative to the size of the answer (``E* >= Q``), so small and large
    covariances get the same relative accuracy.  With ``Q = 0`` the fixed
    point is zero and the test is the absolute ``step < tol``.
    """
    q_norm = float(np.linalg.norm(Q))

    def small(step, E):
        if q_norm == 0.0:
            return step < tol
        return step <= tol * max(float(np.linalg.norm(E)), q_norm)

    E = la.symmetrize(np.asarray(E0, dtype=float))
    seq = [E] if keep else None
    step = float("inf")
    it = 0
    while it < max_iter:
        E_next = la.symmetrize(_weighted_congruence(F, probs, E) + Q)
        it += 1
        step = float(np.linalg.norm(E_next - E))
        E = E_next
        if keep:
            seq.append(E)
        scale = float(np.linalg.norm(E))
        if not np.isfinite(scale) or scale > _DIVERGED:
            raise NoConvergenceError(
                f"covariance recursion diverges after {it} iterations "
                "(mean-square unstable switching)")
        if small(step, E):
            break
    converged = small(step, E)
    fp = float(np.linalg.norm(la.symmetrize(_weighted_congruence(F, probs, E) + Q) - E))
    return E, CovarianceTrace(E_seq=seq if keep else [E], converged=converged,
                              iterations=it, residual=step, fixed_point_residual=fp)


def covariance_sequence(model, pool, observer, horizon):
    """``E[0..horizon]`` from ``E[0] = X0`` (no convergence test)."""
    F, Q = _affine_parts(model, pool, observer)
    E = la.symmetrize(model.X0.astype(float))
    out = [E]
    for _ in range(horizon):
        E = la.symmetrize(_weighted_congruence(F, pool.probs, E) + Q)
        out.append(E)
    return np.stack(out)


def steady_state_cov(model, pool, observer, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                     keep_sequence=True):
    """Steady-state error covariance ``E*`` and the iteration record.

    Iterates :func:`error_cov_step` from ``E[0] = X0``.

    Raises
    ------
    NotSchurError
        If some ``A - L C_s`` has spectral radius >= 1.
    NoConvergenceError
        If ``max_iter`` is reached or the recursion diverges.
    """
    check_schur(model, pool, observer)
    F, Q = _affine_parts(model, pool, observer)
    E, trace = _iterate(F, pool.probs, Q, model.X0, tol, max_iter, keep_sequence)
    if not trace.converged:
        raise NoConvergenceError(
            f"no convergence after {trace.iterations} iterations (step {trace.residual:.3e})")
    return E, trace


def noise_gain_matrix(model, pool, observer, base=None, tol=DEFAULT_TOL,
                      max_iter=DEFAULT_MAX_ITER):
    """Fixed point ``M = sum_s p(s) F_s M F_s^T + base`` (``base = I`` by default).

    ``E*`` grows like ``lambda * M`` when the privacy noise is ``lambda * base``.
    """
    check_schur(model, pool, observer)
    F = closed_loop(model, pool, observer)
    n = model.n
    B = np.eye(n) if base is None else la.symmetrize(np.asarray(base, dtype=float))
    M, trace = _iterate(F, pool.probs, B, np.zeros((n, n)), tol, max_iter, keep=False)
    if not trace.converged:
        raise NoConvergenceError(
            f"no convergence after {trace.iterations} iterations (step {trace.residual:.3e})")
    return M


def performance(E_star, Omega) -> float:
    """Weighted steady-state error ``trace(Omega E*)``."""
    return float(np.trace(np.asarray(Omega) @ np.asarray(E_star)))
