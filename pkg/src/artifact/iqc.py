"""Pointwise integral quadratic constraints.

The filter ``Psi`` maps the uncertainty input/output pair ``(phi, theta)``
to ``r``; the pointwise condition is ``r(k)^T S r(k) >= 0`` at every step.
For a repeated scalar ``|delta(k)| <= alpha`` the filter is static,
``Psi = blkdiag(I, I)``, and

    S = [[alpha^2 X, Y], [Y^T, -X]],   X >= 0,  Y = -Y^T,

which gives ``r^T S r = (alpha^2 - delta^2) phi^T X phi`` for
``r = (phi, delta phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .lft import SltvBlock, UncertaintyStructure
from .numerics import blkdiag, psd_check, symmetrize

__all__ = [
    "PwIqcFactors",
    "SltvTemplate",
    "SltvScaling",
    "sltv_factors",
    "compose_factors",
    "structure_factors",
    "residual",
    "pointwise_check",
    "pointwise_value",
]

X_PSD_MARGIN = 1e-10
POINTWISE_TOL = 1e-9


@dataclass(frozen=True)
class SltvTemplate:
    """Free-parameter pattern of one SLTV block of ``S``."""

    alpha: float
    copies: int

    @property
    def n_x(self) -> int:
        return self.copies * (self.copies + 1) // 2

    @property
    def n_y(self) -> int:
        return self.copies * (self.copies - 1) // 2

    @property
    def n_params(self) -> int:
        return self.n_x + self.n_y

    def unpack(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Map a parameter vector to ``(X, Y)``: upper triangle of X, then strict upper triangle of Y."""
        c = self.copies
        p = np.asarray(p, dtype=float)
        X = np.zeros((c, c))
        iu = np.triu_indices(c)
        X[iu] = p[: self.n_x]
        X = X + np.triu(X, 1).T
        Y = np.zeros((c, c))
        ju = np.triu_indices(c, 1)
        Y[ju] = p[self.n_x : self.n_params]
        Y = Y - Y.T
        return X, Y

    def pack(self, X, Y) -> np.ndarray:
        c = self.copies
        X = np.asarray(X, dtype=float).reshape(c, c)
        Y = np.asarray(Y, dtype=float).reshape(c, c)
        return np.concatenate([X[np.triu_indices(c)], Y[np.triu_indices(c, 1)]])

    def assemble(self, X, Y) -> np.ndarray:
        a2 = self.alpha ** 2
        return np.block([[a2 * X, Y], [Y.T, -X]])


class SltvScaling:
    """Validated multiplier ``S = [[alpha^2 X, Y], [Y^T, -X]]`` for one SLTV block.

    ``X`` is symmetrized and must pass a PSD check with margin ``1e-10``;
    ``Y`` is projected onto the skew-symmetric matrices.
    """

    def __init__(self, X, Y=None, alpha: float = 1.0):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = X.shape[0]
        if Y is None:
            Y = np.zeros((c, c))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape != (c, c) or Y.shape != (c, c):
            raise DimensionError(f"X and Y must both be {c}x{c}")
        if not (np.isfinite(alpha) and alpha > 0):
            raise InputError(f"alpha must be finite and > 0, got {alpha}")
        self.X = symmetrize(X)
        rep = psd_check(self.X, X_PSD_MARGIN)
        if not rep.ok:
            raise InputError(f"X is not positive semidefinite (lambda_min={rep.lambda_min:.3e})")
        self.Y = 0.5 * (Y - Y.T)
        self.alpha = float(alpha)
        self.S = SltvTemplate(self.alpha, c).assemble(self.X, self.Y)

    @property
    def copies(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class PwIqcFactors:
    """A pointwise-IQC filter ``Psi`` plus the multiplier template.

    The filter is ``x_psi+ = A_psi x_psi + B_psi1 phi + B_psi2 theta``,
    ``r = C_psi x_psi + D_psi1 phi + D_psi2 theta`` with ``x_psi(0) = 0``.
    ``templates`` lists one :class:`SltvTemplate` per block, in residual
    order (block by block, ``(phi_b, theta_b)``).
    """

    A_psi: np.ndarray
    B_psi1: np.ndarray
    B_psi2: np.ndarray
    C_psi: np.ndarray
    D_psi1: np.ndarray
    D_psi2: np.ndarray
    templates: tuple

    def __post_init__(self):
        n_r = self.D_psi1.shape[0]
        if self.D_psi2.shape[0] != n_r or self.C_psi.shape[0] != n_r:
            raise DimensionError("D_psi1, D_psi2 and C_psi must have the same row count")
        if self.A_psi.shape[0] > 0:
            rho = max(abs(np.linalg.eigvals(self.A_psi)))
            if rho >= 1:
                raise InputError(f"IQC filter must be stable, spectral radius {rho:.6g}")

    @property
    def n_psi(self) -> int:
        return self.A_psi.shape[0]

    @property
    def n_r(self) -> int:
        return self.D_psi1.shape[0]

    @property
    def n_phi(self) -> int:
        return self.D_psi1.shape[1]

    @property
    def n_theta(self) -> int:
        return self.D_psi2.shape[1]

    @property
    def n_params(self) -> int:
        return sum(t.n_params for t in self.templates)

    def assemble_S(self, p) -> np.ndarray:
        """Multiplier ``S`` for the stacked parameter vector ``p`` (block-diagonal over blocks)."""
        blocks, o = [], 0
        for t in self.templates:
            X, Y = t.unpack(p[o : o + t.n_params])
            blocks.append(t.assemble(X, Y))
            o += t.n_params
        return blkdiag(*blocks) if blocks else np.zeros((0, 0))

    def scaling_blocks(self, p) -> list[tuple[np.ndarray, np.ndarray]]:
        out, o = [], 0
        for t in self.templates:
            out.append(t.unpack(p[o : o + t.n_params]))
            o += t.n_params
        return out


def sltv_factors(block: SltvBlock) -> PwIqcFactors:
    """Static filter ``r = (phi, theta)`` for one SLTV block with ``c`` copies."""
    c = block.copies
    Z = np.zeros((c, c))
    I = np.eye(c)
    return PwIqcFactors(
        A_psi=np.zeros((0, 0)),
        B_psi1=np.zeros((0, c)),
        B_psi2=np.zeros((0, c)),
        C_psi=np.zeros((2 * c, 0)),
        D_psi1=np.vstack([I, Z]),
        D_psi2=np.vstack([Z, I]),
        templates=(SltvTemplate(block.alpha, c),),
    )


def compose_factors(parts) -> PwIqcFactors:
    """Block-diagonal composition; the residual is the concatenation of per-block residuals."""
    parts = list(parts)
    if not parts:
        return PwIqcFactors(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)),
                            np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)), ())
    return PwIqcFactors(
        A_psi=blkdiag(*[p.A_psi for p in parts]),
        B_psi1=blkdiag(*[p.B_psi1 for p in parts]),
        B_psi2=blkdiag(*[p.B_psi2 for p in parts]),
        C_psi=blkdiag(*[p.C_psi for p in parts]),
        D_psi1=blkdiag(*[p.D_psi1 for p in parts]),
        D_psi2=blkdiag(*[p.D_psi2 for p in parts]),
        templates=tuple(t for p in parts for t in p.templates),
    )


def structure_factors(delta: UncertaintyStructure) -> PwIqcFactors:
    """Compose SLTV factors for every block with at least one copy."""
    return compose_factors(sltv_factors(b) for b in delta.blocks if b.copies > 0)


def residual(psi: PwIqcFactors, x_psi, phi, theta):
    """One filter step: returns ``(r, x_psi_next)``."""
    x = np.asarray(x_psi, dtype=float).reshape(-1)
    ph = np.asarray(phi, dtype=float).reshape(-1)
    th = np.asarray(theta, dtype=float).reshape(-1)
    if x.size != psi.n_psi or ph.size != psi.n_phi or th.size != psi.n_theta:
        raise DimensionError(
            f"residual expects state {psi.n_psi}, phi {psi.n_phi}, theta {psi.n_theta}; "
            f"got {x.size}, {ph.size}, {th.size}"
        )
    r = psi.C_psi @ x + psi.D_psi1 @ ph + psi.D_psi2 @ th
    xn = psi.A_psi @ x + psi.B_psi1 @ ph + psi.B_psi2 @ th
    return r, xn


def pointwise_value(S, r) -> float:
    r = np.asarray(r, dtype=float).reshape(-1)
    S = np.asarray(S, dtype=float)
    if S.shape != (r.size, r.size):
        raise DimensionError(f"S has shape {S.shape}, residual has length {r.size}")
    return float(r @ S @ r)


def pointwise_check(S, r, tol: float = POINTWISE_TOL) -> bool:
    """``r^T S r >= -tol``."""
    return pointwise_value(S, r) >= -tol
