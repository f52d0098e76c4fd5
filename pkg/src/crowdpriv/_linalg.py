"""Small dense linear-algebra helpers shared across modules."""

import numpy as np

from .errors import SingularArgumentError

EPS_PSD = 1e-9
EPS_SYM = 1e-9
EPS_DET = 1e-300
# Smallest admissible eigenvalue of a unit-diagonal (Jacobi-scaled) matrix.
EPS_SCALED_EIG = 1e-12


def as_matrix(value, name="matrix", vector="row"):
    """Coerce ``value`` to a read-only 2-D float array.

    Scalars become 1x1; 1-D input becomes a row or column per ``vector``.
    """
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if vector == "row" else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def is_square(M):
    return M.ndim == 2 and M.shape[0] == M.shape[1]


def symmetry_defect(M):
    """Max-abs asymmetry relative to ``max(1, max|M|)``."""
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return float(np.max(np.abs(M - M.T))) / scale if M.size else 0.0


def min_eig(M):
    return float(np.linalg.eigvalsh(symmetrize(M))[0])


def is_psd(M, tol=EPS_PSD):
    return is_square(M) and symmetry_defect(M) <= EPS_SYM and min_eig(M) >= -tol


def spectral_radius(M):
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def psd_factor(S, name="covariance"):
    """Return ``F`` with ``F @ F.T == S`` for symmetric PSD ``S``.

    Uses a symmetric eigendecomposition with negative eigenvalues clamped to
    zero, so rank-deficient covariances are fine.
    """
    S = symmetrize(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} has non-finite entries")
    w, U = np.linalg.eigh(S)
    if w.size and w[0] < -EPS_PSD * max(1.0, abs(w[-1])):
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {w[0]:.3e})")
    return U * np.sqrt(np.clip(w, 0.0, None))


def logdet_pd(M, name="matrix"):
    """Natural log-determinant of a symmetric positive-definite matrix.

    The matrix is first scaled to unit diagonal, ``D^-1/2 M D^-1/2``, so that
    widely separated diagonal magnitudes (e.g. 1e-2 next to 1e-32) keep full
    relative accuracy; the log-determinant is then the sum of the log
    diagonal and the log eigenvalues of the scaled matrix.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    d = np.diag(M).copy()
    if np.any(~np.isfinite(d)) or np.any(d <= EPS_DET):
        raise SingularArgumentError(
            f"{name} is singular: diagonal entry {float(np.min(d)):.3e} <= {EPS_DET:g}"
        )
    s = 1.0 / np.sqrt(d)
    scaled = symmetrize(M * np.outer(s, s))
    w = np.linalg.eigvalsh(scaled)
    if w[0] <= EPS_SCALED_EIG:
        raise SingularArgumentError(
            f"{name} is numerically singular: scaled eigenvalue {w[0]:.3e}"
        )
    return float(np.sum(np.log(d)) + np.sum(np.log(w)))
