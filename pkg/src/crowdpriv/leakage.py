"""Information-leakage bound and privacy-noise calibration.

The per-step leakage about the sensor identity (conditioned on the true
state) is bounded in nats by

    J = 1/2 ln det(L V_bar L^T + Xi + L D L^T)
        - 1/2 sum_s p(s) ln det(L V_s L^T + Xi),

    D = sum_s p(s) (C_bar - C_s) E* (C_bar - C_s)^T.

Calibration picks ``Xi = offset + lambda * base`` so that ``J <= epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .covariance import check_schur, noise_gain_matrix, steady_state_cov
from .errors import NoConvergenceError, SingularArgumentError
from .model import mean_sensor_stats

MAX_DOUBLINGS = 60
GRID_STEPS = 200
BISECTION_STEPS = 40


@dataclass
class LeakageBoundResult:
    bound_nats: float
    term_mix: float
    term_avg: float
    delta_c_energy: np.ndarray

    def to_dict(self):
        return {
            "bound_nats": self.bound_nats,
            "term_mix": self.term_mix,
            "term_avg": self.term_avg,
            "delta_c_energy": self.delta_c_energy.tolist(),
        }


@dataclass
class CalibrationResult:
    xi: np.ndarray
    lambda_: float
    achieved_bound: float
    mode: str
    feasible: bool
    floor_nats: float
    evaluations: int = 0

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "lambda": self.lambda_,
            "achieved_bound": self.achieved_bound,
            "mode": self.mode,
            "feasible": self.feasible,
            "floor_nats": self.floor_nats,
            "evaluations": self.evaluations,
        }


def _identical_sensors(pool):
    live = [s for s, p in zip(pool.sensors, pool.probs) if p > 0]
    first = live[0]
    return all(np.array_equal(s.C, first.C) and np.array_equal(s.V, first.V) for s in live[1:])


def delta_c_spread(pool, E_star):
    """``sum_s p(s) (C_bar - C_s) E* (C_bar - C_s)^T`` (p x p, PSD)."""
    C_bar, _ = mean_sensor_stats(pool)
    dC = C_bar[None, :, :] - pool.stacked_C()
    return la.symmetrize(np.einsum("s,sij,jk,slk->il", pool.probs, dC, np.asarray(E_star), dC))


def leakage_bound(model, pool, observer, E_star) -> LeakageBoundResult:
    """Evaluate the log-determinant leakage bound at ``observer.Xi`` and ``E_star``.

    ``E_star`` is normally the steady state under the same ``Xi``; callers may
    pass a different one deliberately (see :func:`calibrate_noise`).

    Raises
    ------
    SingularArgumentError
        If any determinant argument is numerically singular.
    """
    L, Xi = observer.L, observer.Xi
    _, V_bar = mean_sensor_stats(pool)
    energy = la.symmetrize(L @ delta_c_spread(pool, E_star) @ L.T)

    identical = _identical_sensors(pool)
    try:
        term_mix = 0.5 * la.logdet_pd(L @ V_bar @ L.T + Xi + energy,
                                      "L V_bar L^T + Xi + L D L^T")
        term_avg = 0.0
        for i, (s, p) in enumerate(zip(pool.sensors, pool.probs)):
            if p > 0:
                term_avg += 0.5 * p * la.logdet_pd(L @ s.V @ L.T + Xi, f"L V_{i} L^T + Xi")
    except SingularArgumentError:
        if not identical:
            raise
        term_mix = term_avg = float("-inf")
    # Identical sensors: both terms describe the same matrix, so zero exactly.
    bound = 0.0 if identical else float(term_mix - term_avg)
    return LeakageBoundResult(bound, float(term_mix), float(term_avg), energy)


def asymptotic_floor(model, pool, observer, base=None) -> float:
    """Large-noise limit of the self-consistent bound with ``Xi = lambda * base``.

    Equals ``1/2 ln det(base + L D(M) L^T) - 1/2 ln det(base)`` where ``M`` is
    :func:`noise_gain_matrix`; with ``base = I`` this is
    ``1/2 ln det(I + L D(M) L^T)``.  Zero when all sensors share one ``C``.
    """
    check_schur(model, pool, observer)
    n = model.n
    B = np.eye(n) if base is None else la.symmetrize(np.asarray(base, dtype=float))
    C = pool.stacked_C()
    live = pool.probs > 0
    if np.all(C[live] == C[live][0]):
        return 0.0
    M = noise_gain_matrix(model, pool, observer, base=B)
    G = la.symmetrize(observer.L @ delta_c_spread(pool, M) @ observer.L.T)
    if not np.any(G):
        return 0.0
    return 0.5 * (la.logdet_pd(B + G, "base + L D(M) L^T") - la.logdet_pd(B, "base"))


def _xi_at(offset, base, lam):
    return la.symmetrize(offset + lam * base)


def calibrate_noise(model, pool, observer_base, epsilon, mode="self-consistent",
                    base=None, offset=None) -> CalibrationResult:
    """Choose ``Xi = offset + lambda * base`` so the leakage bound is ``<= epsilon``.

    ``base`` defaults to the identity and ``offset`` to zero;
    ``observer_base.Xi`` is ignored.

    ``mode="envelope"`` freezes ``E*`` at ``lambda = 0``, starts from
    ``lambda0 = trace(L V_bar L^T + L D L^T) / (2 epsilon)`` and doubles until
    the bound evaluated with the frozen ``E*`` is within budget.

    ``mode="self-consistent"`` recomputes ``E*`` for every trial ``lambda``.
    It reports ``feasible=False`` when the asymptotic floor already exceeds
    ``epsilon``; otherwise it walks a doubling grid to the first feasible
    point and refines with bisection, keeping the smallest ``lambda`` whose
    evaluated bound is within budget.  Monotonicity in ``lambda`` is not
    assumed.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if mode not in ("envelope", "self-consistent"):
        raise ValueError(f"unknown calibration mode {mode!r}")
    check_schur(model, pool, observer_base)
    n = model.n
    base = np.eye(n) if base is None else np.asarray(base, dtype=float)
    offset = np.zeros((n, n)) if offset is None else np.asarray(offset, dtype=float)

    try:
        floor = asymptotic_floor(model, pool, observer_base, base=base)
    except SingularArgumentError:
        floor = float("nan")

    if _identical_sensors(pool):
        xi = _xi_at(offset, base, 0.0)
        return CalibrationResult(xi, 0.0, 0.0, mode, True, floor, 0)

    if mode == "envelope":
        return _calibrate_envelope(model, pool, observer_base, epsilon, base, offset, floor)
    return _calibrate_self_consistent(model, pool, observer_base, epsilon, base, offset, floor)


def _calibrate_envelope(model, pool, obs, epsilon, base, offset, floor):
    E0, _ = steady_state_cov(model, pool, obs.with_xi(_xi_at(offset, base, 0.0)),
                             keep_sequence=False)
    L = obs.L
    _, V_bar = mean_sensor_stats(pool)
    A_mat = L @ V_bar @ L.T + L @ delta_c_spread(pool, E0) @ L.T
    lam = float(np.trace(A_mat)) / (2.0 * epsilon)
    evals = 0
    for _ in range(MAX_DOUBLINGS + 1):
        xi = _xi_at(offset, base, lam)
        evals += 1
        try:
            b = leakage_bound(model, pool, obs.with_xi(xi), E0).bound_nats
        except SingularArgumentError:
            b = float("inf")
        if b <= epsilon:
            return CalibrationResult(xi, lam, b, "envelope", True, floor, evals)
        lam = 2.0 * lam if lam > 0 else 1.0
    raise NoConvergenceError(
        f"envelope calibration exceeded {MAX_DOUBLINGS} doublings (last bound {b:.3e})")


def _self_consistent_bound(model, pool, obs, xi):
    o = obs.with_xi(xi)
    try:
        E, _ = steady_state_cov(model, pool, o, keep_sequence=False)
        return leakage_bound(model, pool, o, E).bound_nats
    except SingularArgumentError:
        return float("inf")


def _calibrate_self_consistent(model, pool, obs, epsilon, base, offset, floor):
    if np.isfinite(floor) and floor >= epsilon:
        return CalibrationResult(_xi_at(offset, base, 0.0), float("nan"), float("nan"),
                                 "self-consistent", False, floor, 0)
    evals = 1
    b0 = _self_consistent_bound(model, pool, obs, _xi_at(offset, base, 0.0))
    if b0 <= epsilon:
        return CalibrationResult(_xi_at(offset, base, 0.0), 0.0, b0, "self-consistent",
                                 True, floor, evals)

    _, V_bar = mean_sensor_stats(pool)
    scale = float(np.trace(obs.L @ V_bar @ obs.L.T)) / model.n
    lam = (scale if scale > 0 else 1.0) * 2.0 ** -40
    lo, hi, b_hi = 0.0, None, None
    for _ in range(GRID_STEPS):
        b = _self_consistent_bound(model, pool, obs, _xi_at(offset, base, lam))
        evals += 1
        if b <= epsilon:
            hi, b_hi = lam, b
            break
        lo = lam
        lam *= 2.0
    if hi is None:
        return CalibrationResult(_xi_at(offset, base, lo), float("nan"), float("nan"),
                                 "self-consistent", False, floor, evals)

    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        b = _self_consistent_bound(model, pool, obs, _xi_at(offset, base, mid))
        evals += 1
        if b <= epsilon:
            hi, b_hi = mid, b
        else:
            lo = mid
    return CalibrationResult(_xi_at(offset, base, hi), hi, b_hi, "self-consistent",
                             True, floor, evals)


def evaluate_bound(model, pool, observer, E_star=None):
    """Bound at ``observer.Xi`` with ``E*`` recomputed (or the given frozen one)."""
    if E_star is None:
        E_star, _ = steady_state_cov(model, pool, observer, keep_sequence=False)
    return leakage_bound(model, pool, observer, E_star)


__all__ = [
    "CalibrationResult",
    "LeakageBoundResult",
    "asymptotic_floor",
    "calibrate_noise",
    "delta_c_spread",
    "evaluate_bound",
    "leakage_bound",
]
