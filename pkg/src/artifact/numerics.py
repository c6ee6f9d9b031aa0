"""Dense symmetric-matrix primitives.

Everything downstream works with small dense matrices (a few dozen rows at
most), so these helpers favour clarity and exactness of the reported values
over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack

from .errors import FactorizationError, InputError

__all__ = [
    "symmetrize",
    "PsdReport",
    "psd_check",
    "eig_extremes",
    "solve_spd",
    "blkdiag",
    "as_matrix",
]


def as_matrix(M, rows=None, cols=None, name="matrix") -> np.ndarray:
    """Coerce ``M`` to a finite 2-D float array, optionally checking the shape.

    ``None`` becomes an empty array of the requested shape, which is how
    absent channels are represented everywhere in the package.
    """
    if M is None:
        return np.zeros((rows or 0, cols or 0))
    arr = np.array(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat vector is ambiguous; resolve it against the expected shape
        if cols is not None and arr.size == cols and rows in (None, 1):
            arr = arr.reshape(1, cols)
        elif rows is not None and arr.size == rows and cols in (None, 1):
            arr = arr.reshape(rows, 1)
        elif arr.size == 0:
            arr = arr.reshape(rows or 0, cols or 0)
        else:
            arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InputError(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise InputError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise InputError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite entries")
    return arr


def symmetrize(M) -> np.ndarray:
    """Return ``(M + M.T) / 2`` as a float array; the result is exactly symmetric."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    S = 0.5 * (A + A.T)
    # (a+b)/2 and (b+a)/2 agree bitwise, but make it explicit
    iu = np.triu_indices(S.shape[0], 1)
    S[(iu[1], iu[0])] = S[iu]
    return S


@dataclass(frozen=True)
class PsdReport:
    """Outcome of :func:`psd_check`.

    Attributes
    ----------
    ok : bool
        ``lambda_min >= -margin``.
    lambda_min, lambda_max : float
        Extreme eigenvalues. Both are ``+inf``/``-inf`` for an empty matrix.
    margin : float
        The absolute floor that was applied.
    """

    ok: bool
    lambda_min: float
    lambda_max: float
    margin: float

    def __bool__(self) -> bool:
        return self.ok


def _checked_square(M) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix has non-finite entries")
    return symmetrize(A)


def eig_extremes(M) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    Parameters
    ----------
    M : array_like, shape (n, n)
        Symmetric (it is symmetrized first) and finite, with ``n >= 1``.

    Returns
    -------
    (lambda_min, lambda_max) : tuple of float

    Raises
    ------
    InputError
        On an empty or non-finite matrix.
    """
    A = _checked_square(M)
    if A.shape[0] == 0:
        raise InputError("eig_extremes: empty matrix has no eigenvalues")
    w = np.linalg.eigvalsh(A)
    return float(w[0]), float(w[-1])


def psd_check(M, margin: float = 0.0) -> PsdReport:
    """Test ``lambda_min(M) >= -margin``.

    Parameters
    ----------
    M : array_like, shape (n, n)
        Symmetric matrix. ``n == 0`` is legal and always passes.
    margin : float
        Absolute eigenvalue floor, must be ``>= 0``.

    Returns
    -------
    PsdReport
    """
    if not np.isfinite(margin) or margin < 0:
        raise InputError(f"psd_check: margin must be a finite value >= 0, got {margin}")
    A = _checked_square(M)
    if A.shape[0] == 0:
        return PsdReport(True, float("inf"), float("-inf"), float(margin))
    lo, hi = eig_extremes(A)
    return PsdReport(lo >= -margin, lo, hi, float(margin))


def solve_spd(M, rhs) -> np.ndarray:
    """Solve ``M @ X = rhs`` for symmetric positive definite ``M`` by Cholesky.

    Raises
    ------
    FactorizationError
        If the factorization breaks down. ``pivot`` holds the 1-based index of
        the leading minor that is not positive.
    """
    A = _checked_square(M)
    b = np.asarray(rhs, dtype=float)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    if b.shape[0] != A.shape[0]:
        raise InputError(f"solve_spd: rhs has {b.shape[0]} rows, matrix is {A.shape[0]}x{A.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise InputError("solve_spd: rhs has non-finite entries")
    if A.shape[0] == 0:
        out = np.zeros_like(b)
        return out[:, 0] if vec else out
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise FactorizationError(
            f"Cholesky factorization failed at pivot {info}: matrix is not positive definite",
            pivot=int(info),
        )
    x = cho_solve((c, True), b)
    return x[:, 0] if vec else x


def blkdiag(*blocks) -> np.ndarray:
    """Block-diagonal assembly that respects zero-row or zero-column blocks."""
    mats = []
    for b in blocks:
        m = np.asarray(b, dtype=float)
        if m.ndim < 2:
            m = m.reshape(1, 1) if m.size == 1 else m.reshape(0, 0) if m.size == 0 else np.diag(m)
        mats.append(m)
    r = sum(m.shape[0] for m in mats)
    c = sum(m.shape[1] for m in mats)
    out = np.zeros((r, c))
    i = j = 0
    for m in mats:
        out[i : i + m.shape[0], j : j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out
