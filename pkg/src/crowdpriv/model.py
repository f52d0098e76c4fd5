"""Plant, crowd-sensor pool and observer types plus configuration checks.

The plant is ``x[k+1] = A x[k] + w[k]`` with ``w ~ N(0, W)`` and
``x[0] ~ N(0, X0)``.  At each step one sensor ``s`` is drawn i.i.d. with
probability ``probs[s]`` and reports ``y = C_s x + v`` with ``v ~ N(0, V_s)``.
The observer is ``xhat[k+1] = A xhat + L (y - C_s xhat) + xi`` with
``xi ~ N(0, Xi)``; ``Omega`` weights the estimation error.

Sensor indices are 0-based throughout the package.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _linalg as la
from .errors import ValidationError

EPS_PROB = 1e-12
EPS_SCHUR = 1e-9
SCHUR_WARN = 0.999


def _frozen_set(obj, name, value):
    object.__setattr__(obj, name, value)


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: np.ndarray
    W: np.ndarray
    X0: np.ndarray

    def __post_init__(self):
        for name in ("A", "W", "X0"):
            _frozen_set(self, name, la.as_matrix(getattr(self, name), name))

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class Sensor:
    C: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        _frozen_set(self, "C", la.as_matrix(self.C, "C", vector="row"))
        _frozen_set(self, "V", la.as_matrix(self.V, "V"))

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class SensorPool:
    sensors: tuple
    probs: np.ndarray

    def __post_init__(self):
        sensors = tuple(s if isinstance(s, Sensor) else Sensor(*s) for s in self.sensors)
        probs = np.array(self.probs, dtype=float).reshape(-1)
        probs.setflags(write=False)
        _frozen_set(self, "sensors", sensors)
        _frozen_set(self, "probs", probs)

    @classmethod
    def uniform(cls, sensors: Sequence[Sensor]) -> "SensorPool":
        m = len(sensors)
        return cls(tuple(sensors), np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return len(self.sensors)

    @property
    def p(self) -> int:
        return self.sensors[0].p

    def stacked_C(self) -> np.ndarray:
        return np.stack([s.C for s in self.sensors])

    def stacked_V(self) -> np.ndarray:
        return np.stack([s.V for s in self.sensors])


@dataclass(frozen=True, eq=False)
class ObserverConfig:
    L: np.ndarray
    Xi: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        _frozen_set(self, "L", la.as_matrix(self.L, "L", vector="col"))
        _frozen_set(self, "Xi", la.as_matrix(self.Xi, "Xi"))
        _frozen_set(self, "Omega", la.as_matrix(self.Omega, "Omega"))

    def with_xi(self, Xi) -> "ObserverConfig":
        return dataclasses.replace(self, Xi=Xi)


@dataclass
class ValidationReport:
    ok: bool
    issues: list = field(default_factory=list)
    spectral_radii: list = field(default_factory=list)
    mean_square_radius: float = float("nan")

    @property
    def errors(self):
        return [msg for sev, msg in self.issues if sev == "error"]

    @property
    def warnings(self):
        return [msg for sev, msg in self.issues if sev == "warning"]

    def to_dict(self):
        return {
            "ok": self.ok,
            "issues": [{"severity": s, "description": d} for s, d in self.issues],
            "spectral_radii": list(self.spectral_radii),
            "mean_square_radius": self.mean_square_radius,
        }


def closed_loop(model: SystemModel, pool: SensorPool, observer: ObserverConfig) -> np.ndarray:
    """Stack of closed-loop error matrices ``A - L C_s``, shape ``(m, n, n)``."""
    return model.A[None, :, :] - np.einsum("ij,sjk->sik", observer.L, pool.stacked_C())


def mean_square_radius(model, pool, observer) -> float:
    """Spectral radius of ``E -> sum_s p(s) F_s E F_s^T``.

    This is the contraction rate of the error-covariance recursion.  Each
    ``F_s`` being Schur does not by itself make it smaller than one.
    """
    F = closed_loop(model, pool, observer)
    n = model.n
    T = np.zeros((n * n, n * n))
    for p, Fs in zip(pool.probs, F):
        if p > 0:
            T += p * np.kron(Fs, Fs)
    return la.spectral_radius(T)


def mean_sensor_stats(pool: SensorPool):
    """Probability-weighted output map and noise covariance ``(C_bar, V_bar)``."""
    probs = pool.probs
    C_bar = np.einsum("s,sij->ij", probs, pool.stacked_C())
    V_bar = np.einsum("s,sij->ij", probs, pool.stacked_V())
    return C_bar, la.symmetrize(V_bar)


def _check_psd(issues, M, name, n=None):
    if not la.is_square(M) or (n is not None and M.shape[0] != n):
        want = f"{n}x{n}" if n is not None else "square"
        issues.append(("error", f"{name} has shape {M.shape[0]}x{M.shape[1]}, expected {want}"))
        return False
    if not np.all(np.isfinite(M)):
        issues.append(("error", f"{name} has non-finite entries"))
        return False
    if la.symmetry_defect(M) > la.EPS_SYM:
        issues.append(("error", f"{name} is not symmetric"))
        return False
    lo = la.min_eig(M)
    if lo < -la.EPS_PSD:
        issues.append(("error", f"{name} is not positive semi-definite (min eigenvalue {lo:.3e})"))
        return False
    return True


def validate(model: SystemModel, pool: SensorPool, observer: ObserverConfig) -> ValidationReport:
    """Check a full configuration.  Never raises; inspect ``report.ok``."""
    issues = []
    radii = []
    ms_radius = float("nan")

    A = model.A
    dims_ok = la.is_square(A) and A.shape[0] >= 1
    if not dims_ok:
        issues.append(("error", f"A has shape {A.shape[0]}x{A.shape[1]}, expected square"))
        n = None
    else:
        n = A.shape[0]
        if not np.all(np.isfinite(A)):
            issues.append(("error", "A has non-finite entries"))
            dims_ok = False
    dims_ok &= _check_psd(issues, model.W, "W", n)
    dims_ok &= _check_psd(issues, model.X0, "X0", n)

    if pool.m < 1:
        issues.append(("error", "sensor pool is empty"))
        dims_ok = False
    p_dims = {s.p for s in pool.sensors}
    if len(p_dims) > 1:
        issues.append(("error", f"sensors have differing output dimensions {sorted(p_dims)}; "
                                "a single output dimension is required"))
        dims_ok = False
    for i, s in enumerate(pool.sensors):
        if n is not None and s.C.shape[1] != n:
            issues.append(("error", f"sensor {i}: C has {s.C.shape[1]} columns, expected {n}"))
            dims_ok = False
        if not np.all(np.isfinite(s.C)):
            issues.append(("error", f"sensor {i}: C has non-finite entries"))
            dims_ok = False
        dims_ok &= _check_psd(issues, s.V, f"sensor {i}: V", s.p)

    probs = pool.probs
    if probs.shape[0] != pool.m:
        issues.append(("error", f"{probs.shape[0]} probabilities given for {pool.m} sensors"))
        dims_ok = False
    elif pool.m:
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            issues.append(("error", "probabilities must be finite and non-negative"))
            dims_ok = False
        total = float(np.sum(probs))
        if abs(total - 1.0) > EPS_PROB:
            issues.append(("error", f"probabilities sum to {total:.12g}, expected 1"))
            dims_ok = False

    L = observer.L
    p = pool.p if pool.m and len(p_dims) == 1 else None
    if n is not None and p is not None and L.shape != (n, p):
        issues.append(("error", f"L has shape {L.shape[0]}x{L.shape[1]}, expected {n}x{p}"))
        dims_ok = False
    elif not np.all(np.isfinite(L)):
        issues.append(("error", "L has non-finite entries"))
        dims_ok = False
    dims_ok &= _check_psd(issues, observer.Xi, "Xi", n)
    dims_ok &= _check_psd(issues, observer.Omega, "Omega", n)

    if dims_ok:
        F = closed_loop(model, pool, observer)
        for i, Fs in enumerate(F):
            rho = la.spectral_radius(Fs)
            radii.append(rho)
            if rho >= 1.0 - EPS_SCHUR:
                issues.append(("error", f"sensor {i}: A - L C has spectral radius {rho:.12g} >= 1 "
                                        "(not Schur)"))
            elif rho >= SCHUR_WARN:
                issues.append(("warning", f"sensor {i}: A - L C has spectral radius {rho:.12g}, "
                                          "convergence will be slow"))
        ms_radius = mean_square_radius(model, pool, observer)
        if all(r < 1.0 - EPS_SCHUR for r in radii) and ms_radius >= 1.0 - EPS_SCHUR:
            issues.append(("error", f"error covariance recursion is unstable: mean-square radius "
                                    f"{ms_radius:.12g} >= 1 although every A - L C_s is Schur"))
        for i, s in enumerate(pool.sensors):
            if probs[i] <= 0:
                continue
            B = L @ s.V @ L.T + observer.Xi
            try:
                la.logdet_pd(B)
            except ArithmeticError:
                issues.append(("warning", f"sensor {i}: L V L^T + Xi is singular; "
                                          "the leakage bound is undefined without regularising Xi"))

    ok = not any(sev == "error" for sev, _ in issues)
    return ValidationReport(ok=ok, issues=issues, spectral_radii=radii,
                            mean_square_radius=ms_radius)


def require_valid(model, pool, observer) -> ValidationReport:
    """Run :func:`validate` and raise :class:`ValidationError` on any error."""
    report = validate(model, pool, observer)
    if not report.ok:
        raise ValidationError("; ".join(report.errors), report)
    return report
