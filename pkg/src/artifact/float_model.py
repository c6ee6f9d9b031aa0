"""Floating-point error accounting for affine updates ``z = A x + B d``.

Error model: round-to-nearest binary64 with unit roundoff ``u = 2**-53``,
no fused multiply-add, dot products evaluated left to right. For a row with
``m`` terms the computed value satisfies

    |fl(z_i) - z_i| <= gamma_m * (sum_j |A_ij| xbar_j + sum_j |B_ij| dbar_j),
    gamma_m = m u / (1 - m u).

Underflow and overflow are outside the model; bounds are asserted to lie in
the normal range.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .augmentation import AugmentedSystem
from .errors import CorrectionInfeasibleError, DimensionError, InputError, UnboundedThetaError
from .numerics import eig_extremes, symmetrize

__all__ = [
    "UNIT_ROUNDOFF",
    "gamma",
    "FloatErrorReport",
    "CorrectedEllipsoid",
    "affine_update_error",
    "theta_bounds",
    "shrink_factor",
    "closed_loop_shrink",
    "corrected_ellipsoid",
    "combine_lpv_errors",
    "u_perturbation_vertices",
    "MAX_VERTEX_INPUTS",
]

UNIT_ROUNDOFF = 2.0 ** -53
MAX_VERTEX_INPUTS = 20
_NORMAL_MAX = np.finfo(float).max / 4


def gamma(m: int, u: float = UNIT_ROUNDOFF) -> float:
    """``m u / (1 - m u)``; raises when ``m u >= 1``."""
    if m < 0:
        raise InputError("term count must be nonnegative")
    if m * u >= 1:
        raise InputError(f"error model breaks down: m*u = {m * u} >= 1")
    return m * u / (1.0 - m * u)


@dataclass
class FloatErrorReport:
    """Per-element absolute error bounds of one affine update.

    Attributes
    ----------
    e : ndarray
        ``e[i]`` bounds ``|fl(z_i) - z_i|``.
    e_z : float
        ``max(e)`` (zero for an empty update).
    u : float
        Unit roundoff used.
    terms : int
        Terms per row ``m``.
    bounds : dict
        The input bounds (``xbar``, ``dbar``) the report was computed from.
    """

    e: np.ndarray
    e_z: float
    u: float
    terms: int
    bounds: dict = field(default_factory=dict)


def _bounds(v, n, name):
    v = np.asarray(v if v is not None else np.zeros(0), dtype=float).reshape(-1)
    if v.size != n:
        raise DimensionError(f"{name}: expected {n} bounds, got {v.size}")
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise InputError(f"{name}: bounds must be finite and nonnegative")
    if np.any(v > _NORMAL_MAX):
        raise InputError(f"{name}: bounds exceed the binary64 normal range assumed by the error model")
    return v


def affine_update_error(A, B, xbar, dbar, u: float = UNIT_ROUNDOFF) -> FloatErrorReport:
    """Bound the rounding error of ``z = A x + B d`` evaluated in binary64.

    Parameters
    ----------
    A : array_like, shape (n_z, n_x)
    B : array_like, shape (n_z, n_d) or None
    xbar, dbar : array_like
        Elementwise bounds ``|x_j| <= xbar_j``, ``|d_j| <= dbar_j``.
    u : float
        Unit roundoff.

    Returns
    -------
    FloatErrorReport
        ``e_i = gamma_m (sum_j |A_ij| xbar_j + sum_j |B_ij| dbar_j)`` with
        ``m = n_x + n_d``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nz = A.shape[0]
    B = np.zeros((nz, 0)) if B is None else np.asarray(B, dtype=float).reshape(nz, -1)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise InputError("update matrices must be finite")
    xb = _bounds(xbar, A.shape[1], "xbar")
    db = _bounds(dbar, B.shape[1], "dbar")
    m = A.shape[1] + B.shape[1]
    g = gamma(m, u)
    mag = np.abs(A) @ xb + np.abs(B) @ db
    e = g * mag
    return FloatErrorReport(e, float(e.max()) if e.size else 0.0, u, m, {"xbar": xb, "dbar": db})


def theta_bounds(H: AugmentedSystem, xbar, ybar, dbar) -> np.ndarray:
    """Elementwise bounds on the uncertainty output ``theta`` implied by state/output bounds.

    For each ``theta_i`` the bound is the smallest of

    * ``beta_ji = (sum_k (1 + |A_jk|) xbar_k + sum_k |B2_jk| dbar_k) / |B1_ji|``
      over state rows ``j`` and
    * ``gamma_li = (sum_k |C2_lk| xbar_k + sum_k |D22_lk| dbar_k + sum_k ybar_k) / |D21_li|``
      over output rows ``l``.

    A row is used for ``theta_i`` only when its coefficient for ``theta_i``
    is nonzero and its coefficients for every other ``theta`` entry are zero,
    so the triangle-inequality argument isolates ``theta_i``.

    Raises
    ------
    UnboundedThetaError
        When no row isolates some ``theta_i``; an explicit bound must then
        be supplied by the user.
    """
    xb = _bounds(xbar, H.n_x, "xbar")
    db = _bounds(dbar, H.n_d, "dbar")
    yb = _bounds(ybar if ybar is not None else np.zeros(H.n_y), H.n_y, "ybar")
    A, B1, B2 = H.A_H, H.B_H1, H.B_H2
    C2, D21, D22 = H.C_H2, H.D_H21, H.D_H22
    nt = H.n_theta
    out = np.full(nt, np.inf)
    state_num = np.sum(xb) + np.abs(A) @ xb + np.abs(B2) @ db
    out_num = np.abs(C2) @ xb + np.abs(D22) @ db + np.sum(yb)
    for i in range(nt):
        others = [k for k in range(nt) if k != i]
        for j in range(H.n_x):
            c = abs(B1[j, i])
            if c > 0 and not np.any(B1[j, others]):
                out[i] = min(out[i], state_num[j] / c)
        for l in range(H.n_y):
            c = abs(D21[l, i])
            if c > 0 and not np.any(D21[l, others]):
                out[i] = min(out[i], out_num[l] / c)
        if not np.isfinite(out[i]):
            raise UnboundedThetaError(
                f"theta_{i + 1} cannot be bounded from the state/output equations; supply an explicit bound"
            )
    return out


def shrink_factor(M, n_z: int, e_z: float) -> float:
    """``alpha = 1 - n_z e_z lambda_max(M) (2 lambda_min(M)^(-1/2) + n_z e_z)``.

    If ``z^T (M / alpha) z <= 1`` and each entry of ``fl(z)`` is within
    ``e_z`` of ``z``, then ``fl(z)^T M fl(z) <= 1``.

    Raises
    ------
    CorrectionInfeasibleError
        When ``alpha <= 0``.
    """
    if not (np.isfinite(e_z) and e_z >= 0):
        raise InputError(f"error bound must be finite and nonnegative, got {e_z}")
    M = symmetrize(np.asarray(M, dtype=float))
    lo, hi = eig_extremes(M)
    if lo <= 0:
        raise InputError(f"matrix must be positive definite (lambda_min={lo:.3e})")
    ne = n_z * e_z
    alpha = 1.0 - ne * hi * (2.0 / np.sqrt(lo) + ne)
    if not alpha > 0:
        raise CorrectionInfeasibleError(
            f"shrink factor {alpha:.6g} <= 0 (n={n_z}, e={e_z:.3e}, lambda_max={hi:.3e}, lambda_min={lo:.3e})"
        )
    return float(alpha)


def closed_loop_shrink(P, n_cl: int, e_xc: float) -> float:
    """:func:`shrink_factor` with the closed-loop dimension and the controller-state error."""
    return shrink_factor(P, n_cl, e_xc)


@dataclass
class CorrectedEllipsoid:
    """``M_tilde = M / alpha`` with ``0 < alpha <= 1``, so ``E_{M_tilde}`` lies inside ``E_M``."""

    M: np.ndarray
    alpha: float
    M_tilde: np.ndarray


def corrected_ellipsoid(M, n_z: int, e_z: float) -> CorrectedEllipsoid:
    a = shrink_factor(M, n_z, e_z)
    M = symmetrize(np.asarray(M, dtype=float))
    return CorrectedEllipsoid(M, a, M / a)


def combine_lpv_errors(e_aug, e_exe) -> tuple[float, float]:
    """``(max(e_x_aug, e_x_exe), max(e_u_aug, e_u_exe))``."""
    (xa, ua), (xe, ue) = e_aug, e_exe
    vals = (xa, ua, xe, ue)
    if any((not np.isfinite(v)) or v < 0 for v in vals):
        raise InputError("error bounds must be finite and nonnegative")
    return float(max(xa, xe)), float(max(ua, ue))


def u_perturbation_vertices(e_u, n_u: int) -> list[np.ndarray]:
    """All sign patterns ``{-e_u, +e_u}^n_u`` (deduplicated, so ``e_u = 0`` gives one zero vector).

    The next state is affine in ``u`` and ellipsoid membership is a convex
    quadratic, so the worst perturbation in the box is one of these vertices.
    """
    if n_u > MAX_VERTEX_INPUTS:
        raise InputError(
            f"{2 ** n_u} vertices for n_u={n_u}; above {MAX_VERTEX_INPUTS} inputs use random sampling instead"
        )
    e = np.broadcast_to(np.asarray(e_u, dtype=float), (n_u,)) if n_u else np.zeros(0)
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise InputError("e_u must be finite and nonnegative")
    out, seen = [], set()
    for signs in itertools.product((-1.0, 1.0), repeat=n_u):
        v = np.array(signs) * e
        v = v + 0.0  # normalize -0.0
        key = v.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out

