"""Sensor-identity attacks by an adversary who sees the true state.

Decisions about ``s[k]`` are made from quantities produced by the update
that sensor drove, i.e. the error ``e[k+1] = xhat[k+1] - x[k+1]`` (threshold
rule) or the step ``xhat[k] -> xhat[k+1]`` (MAP rule).  Sensor indices are
0-based, so the threshold rule answers 0 ("noisy sensor") or 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .errors import PoolSizeUnsupportedError, SingularArgumentError

TAU_MIN, TAU_MAX, TAU_POINTS = 1e-4, 1e1, 50


class SingularLikelihoodWarning(RuntimeWarning):
    """MAP detection fell back to a pseudo-inverse likelihood."""


def tau_grid(points=TAU_POINTS, lo=TAU_MIN, hi=TAU_MAX):
    return np.logspace(np.log10(lo), np.log10(hi), points)


@dataclass
class DetectionReport:
    tau: float
    accuracy: float
    per_sensor_accuracy: list
    sample_count: int
    per_sensor_counts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "tau": self.tau,
            "accuracy": self.accuracy,
            "per_sensor_accuracy": list(self.per_sensor_accuracy),
            "per_sensor_counts": list(self.per_sensor_counts),
            "sample_count": self.sample_count,
        }


def _check_two_sensors(traj, pool):
    if pool is not None and pool.m != 2:
        raise PoolSizeUnsupportedError(f"threshold detector needs exactly 2 sensors, got {pool.m}")
    if np.any(np.asarray(traj.sensor_ids) > 1):
        raise PoolSizeUnsupportedError("threshold detector needs exactly 2 sensors")


def threshold_statistic(traj, C):
    """``||C (x[k+1] - xhat[k+1])||`` for ``k = 0..K-1`` (works on batches too)."""
    e = np.asarray(traj.errors)[..., 1:, :]
    Ce = e @ np.asarray(C, dtype=float).T
    return np.sqrt(np.sum(Ce * Ce, axis=-1))


def threshold_detect(traj, tau, C, pool=None):
    """Guess sensor 0 when the output error norm is at least ``tau``, else sensor 1."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    _check_two_sensors(traj, pool)
    return np.where(threshold_statistic(traj, C) >= tau, 0, 1)


def map_scores(traj, model, pool, observer):
    """Per-step log posterior (up to a constant) of each sensor, shape ``(..., K, m)``."""
    X = np.asarray(traj.states)
    Xh = np.asarray(traj.estimates)
    A, L = model.A, observer.L
    e_obs = X[..., :-1, :] - Xh[..., :-1, :]
    base = Xh[..., 1:, :] - Xh[..., :-1, :] @ A.T

    scores = []
    fallback = False
    for s, p in zip(pool.sensors, pool.probs):
        r = base - e_obs @ (L @ s.C).T
        S = la.symmetrize(L @ s.V @ L.T + observer.Xi)
        try:
            logdet = la.logdet_pd(S)
            P = np.linalg.inv(S)
            k = S.shape[0]
        except SingularArgumentError:
            fallback = True
            w, U = np.linalg.eigh(S)
            keep = w > la.EPS_SCALED_EIG * max(1.0, float(w[-1]))
            w, U = w[keep], U[:, keep]
            P = (U / w) @ U.T
            logdet = float(np.sum(np.log(w)))
            k = int(keep.sum())
        quad = np.einsum("...i,ij,...j->...", r, P, r)
        lp = np.log(p) if p > 0 else -np.inf
        scores.append(lp - 0.5 * quad - 0.5 * logdet - 0.5 * k * np.log(2 * np.pi))
    if fallback:
        warnings.warn("singular L V L^T + Xi; MAP scores use a pseudo-inverse likelihood",
                      SingularLikelihoodWarning, stacklevel=2)
    return np.stack(scores, axis=-1)


def map_detect(traj, model, pool, observer):
    """Per-step maximum a posteriori sensor; ties go to the lowest index."""
    return np.argmax(map_scores(traj, model, pool, observer), axis=-1)


def detection_rate(predicted, actual, burn_in=0, tau=float("nan"), n_sensors=None):
    """Fraction of steps ``k >= burn_in`` where ``predicted[k] == actual[k]``.

    Leading axes (runs) are pooled.
    """
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    if not 0 <= burn_in < actual.shape[-1]:
        raise ValueError(f"burn_in {burn_in} must be in [0, {actual.shape[-1]})")
    pr = predicted[..., burn_in:].ravel()
    ac = actual[..., burn_in:].ravel()
    m = n_sensors if n_sensors is not None else int(max(ac.max(), pr.max())) + 1
    hit = pr == ac
    counts, per = [], []
    for s in range(m):
        sel = ac == s
        c = int(np.count_nonzero(hit & sel))
        counts.append(c)
        tot = int(np.count_nonzero(sel))
        per.append(c / tot if tot else float("nan"))
    total = ac.size
    return DetectionReport(float(tau), sum(counts) / total, per, int(total), counts)


def threshold_accuracy_by_run(batch, C, taus, burn_in):
    """Per-run threshold-rule accuracy for every ``tau``, shape ``(R, len(taus))``."""
    _check_two_sensors(batch, None)
    stat = threshold_statistic(batch, C)[:, burn_in:]
    first = np.asarray(batch.sensor_ids)[:, burn_in:] == 0
    out = np.empty((stat.shape[0], len(taus)))
    for j, tau in enumerate(taus):
        out[:, j] = np.mean((stat >= tau) == first, axis=1)
    return out


def map_accuracy_by_run(batch, model, pool, observer, burn_in):
    pred = map_detect(batch, model, pool, observer)[:, burn_in:]
    return np.mean(pred == np.asarray(batch.sensor_ids)[:, burn_in:], axis=1)
