"""Augmented system ``H`` = nominal system ``G`` in series with the IQC filter.

With ``x_H = (x_G, x_psi)`` the interconnection reads::

    x_H+ = A_H x_H + B_H1 theta + B_H2 d [+ B_H3 u]
    r    = C_H1 x_H + D_H11 theta + D_H12 d [+ D_H13 u]
    y    = C_H2 x_H + D_H21 theta + D_H22 d

``theta`` is now a free input; the uncertainty survives only through the
pointwise constraint ``r^T S r >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, InputError
from .iqc import PwIqcFactors
from .lft import LftSystem, validate
from .numerics import as_matrix

__all__ = [
    "AugmentedSystem",
    "LtiController",
    "ClosedLoopAugmented",
    "build_augmented",
    "close_loop",
    "transition",
    "spectral_radius",
]


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(max(abs(np.linalg.eigvals(A))))


@dataclass(frozen=True)
class AugmentedSystem:
    """The LTI system ``H`` with its channel partition ``(theta, d, [u]) -> (r, y)``.

    ``n_G`` and ``n_psi`` record how the state splits; ``psi`` keeps the
    multiplier templates so that synthesis knows the structure of ``S``.
    """

    A_H: np.ndarray
    B_H1: np.ndarray
    B_H2: np.ndarray
    C_H1: np.ndarray
    D_H11: np.ndarray
    D_H12: np.ndarray
    C_H2: np.ndarray
    D_H21: np.ndarray
    D_H22: np.ndarray
    B_H3: Optional[np.ndarray] = None
    D_H13: Optional[np.ndarray] = None
    D_H23: Optional[np.ndarray] = None
    n_G: int = -1
    psi: Optional[PwIqcFactors] = field(default=None, compare=False)
    source: Optional[LftSystem] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        def m2(M):
            a = np.asarray(M, dtype=float)
            return a.reshape(1, 1) if a.ndim < 2 and a.size == 1 else a

        A = m2(self.A_H)
        n = A.shape[0]
        nt, nd = m2(self.B_H1).shape[-1], m2(self.B_H2).shape[-1]
        nr, ny = m2(self.C_H1).shape[0], m2(self.C_H2).shape[0]
        shapes = dict(
            A_H=(n, n), B_H1=(n, nt), B_H2=(n, nd), C_H1=(nr, n), D_H11=(nr, nt),
            D_H12=(nr, nd), C_H2=(ny, n), D_H21=(ny, nt), D_H22=(ny, nd),
        )
        if self.B_H3 is not None:
            nu = m2(self.B_H3).shape[-1]
            if self.D_H13 is None:
                object.__setattr__(self, "D_H13", np.zeros((nr, nu)))
            if self.D_H23 is None:
                object.__setattr__(self, "D_H23", np.zeros((ny, nu)))
            shapes.update(B_H3=(n, nu), D_H13=(nr, nu), D_H23=(ny, nu))
        for k, (r, c) in shapes.items():
            object.__setattr__(self, k, as_matrix(m2(getattr(self, k)), r, c, k))
        if self.n_G < 0:
            object.__setattr__(self, "n_G", n)

    @property
    def n_H(self) -> int:
        return self.A_H.shape[0]

    @property
    def n_x(self) -> int:
        return self.A_H.shape[0]

    @property
    def n_theta(self) -> int:
        return self.B_H1.shape[1]

    @property
    def n_d(self) -> int:
        return self.B_H2.shape[1]

    @property
    def n_r(self) -> int:
        return self.C_H1.shape[0]

    @property
    def n_y(self) -> int:
        return self.C_H2.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_H3.shape[1] if self.B_H3 is not None else 0

    @property
    def has_control(self) -> bool:
        return self.B_H3 is not None

    @property
    def templates(self) -> tuple:
        return self.psi.templates if self.psi is not None else ()


@dataclass(frozen=True)
class LtiController:
    """``x_c+ = A_c x_c + B_c y``, ``u = C_c x_c + D_c y``."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray

    def __post_init__(self):
        def m2(M):
            a = np.asarray(M, dtype=float)
            return a.reshape(1, 1) if a.ndim < 2 and a.size == 1 else a

        nc = m2(self.A_c).shape[0]
        nu, ny = m2(self.D_c).shape
        for k, (r, c) in dict(A_c=(nc, nc), B_c=(nc, ny), C_c=(nu, nc), D_c=(nu, ny)).items():
            object.__setattr__(self, k, as_matrix(m2(getattr(self, k)), r, c, k))

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]

    @property
    def n_y(self) -> int:
        return self.B_c.shape[1]

    @property
    def n_u(self) -> int:
        return self.C_c.shape[0]

    def step(self, x_c, y):
        """One controller update: returns ``(x_c_next, u)``."""
        x_c = np.asarray(x_c, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.A_c @ x_c + self.B_c @ y, self.C_c @ x_c + self.D_c @ y


@dataclass(frozen=True)
class ClosedLoopAugmented(AugmentedSystem):
    """``H`` in feedback with an LTI controller; state ``(x_H, x_c)``.

    Outputs are stacked as ``(r, y, u)``; the ``u`` rows are
    ``C_u x_cl + D_u1 theta + D_u2 d``.
    """

    C_u: np.ndarray = None
    D_u1: np.ndarray = None
    D_u2: np.ndarray = None
    n_plant: int = 0
    n_c: int = 0
    controller: Optional[LtiController] = field(default=None, compare=False)
    plant: Optional[AugmentedSystem] = field(default=None, compare=False, repr=False)

    @property
    def n_cl(self) -> int:
        return self.A_H.shape[0]

    @property
    def n_u_out(self) -> int:
        return self.C_u.shape[0]


def build_augmented(sys: LftSystem, psi: PwIqcFactors, check: bool = True) -> AugmentedSystem:
    """Assemble ``H`` from ``(G, Psi)``.

    Parameters
    ----------
    sys : LftSystem
    psi : PwIqcFactors
        Filter whose ``phi``/``theta`` widths match ``sys``.
    check : bool
        Run :func:`artifact.lft.validate` first and raise on failure.

    Returns
    -------
    AugmentedSystem
        ``A_H = [[A_G, 0], [B_psi1 C_G1, A_psi]]``, ``B_H1 = [B_G1; B_psi1 D_G11 + B_psi2]``,
        ``B_H2 = [B_G2; B_psi1 D_G12]``, ``C_H1 = [D_psi1 C_G1, C_psi]``,
        ``D_H11 = D_psi1 D_G11 + D_psi2``, ``D_H12 = D_psi1 D_G12``,
        ``C_H2 = [C_G2, 0]``, ``D_H21 = D_G21``, ``D_H22 = D_G22``, and the
        control channel by the same pattern.
    """
    if check:
        validate(sys).raise_if_failed()
    G = sys.G
    dims = sys.dims
    if psi.n_phi != dims.n_phi or psi.n_theta != dims.n_theta:
        raise DimensionError(
            f"filter expects phi/theta widths ({psi.n_phi}, {psi.n_theta}), "
            f"system has ({dims.n_phi}, {dims.n_theta})"
        )
    nG, npsi = dims.n_G, psi.n_psi
    A_H = np.block([[G.A_G, np.zeros((nG, npsi))], [psi.B_psi1 @ G.C_G1, psi.A_psi]])
    B_H1 = np.vstack([G.B_G1, psi.B_psi1 @ G.D_G11 + psi.B_psi2])
    B_H2 = np.vstack([G.B_G2, psi.B_psi1 @ G.D_G12])
    C_H1 = np.hstack([psi.D_psi1 @ G.C_G1, psi.C_psi])
    D_H11 = psi.D_psi1 @ G.D_G11 + psi.D_psi2
    D_H12 = psi.D_psi1 @ G.D_G12
    C_H2 = np.hstack([G.C_G2, np.zeros((dims.n_y, npsi))])
    kw = {}
    if G.has_control:
        kw = dict(
            B_H3=np.vstack([G.B_G3, psi.B_psi1 @ G.D_G13]),
            D_H13=psi.D_psi1 @ G.D_G13,
            D_H23=G.D_G23.copy(),
        )
    return AugmentedSystem(A_H, B_H1, B_H2, C_H1, D_H11, D_H12, C_H2, G.D_G21.copy(), G.D_G22.copy(),
                           n_G=nG, psi=psi, source=sys, **kw)


def close_loop(H: AugmentedSystem, K: LtiController) -> ClosedLoopAugmented:
    """Interconnect ``H`` with ``u = C_c x_c + D_c y``, ``x_c+ = A_c x_c + B_c y``."""
    if not H.has_control:
        raise InputError("closing the loop needs an augmented system with a control channel")
    if np.any(H.D_H23):
        raise InputError("nonzero u-to-y feedthrough creates an algebraic loop")
    if K.n_y != H.n_y or K.n_u != H.n_u:
        raise DimensionError(
            f"controller maps {K.n_y} outputs to {K.n_u} inputs; plant has n_y={H.n_y}, n_u={H.n_u}"
        )
    A, B1, B2, B3 = H.A_H, H.B_H1, H.B_H2, H.B_H3
    C1, D11, D12, D13 = H.C_H1, H.D_H11, H.D_H12, H.D_H13
    C2, D21, D22 = H.C_H2, H.D_H21, H.D_H22
    Ac, Bc, Cc, Dc = K.A_c, K.B_c, K.C_c, K.D_c
    nH, nc = H.n_H, K.n_c
    A_cl = np.block([[A + B3 @ Dc @ C2, B3 @ Cc], [Bc @ C2, Ac]])
    B_cl1 = np.vstack([B1 + B3 @ Dc @ D21, Bc @ D21])
    B_cl2 = np.vstack([B2 + B3 @ Dc @ D22, Bc @ D22])
    C_r = np.hstack([C1 + D13 @ Dc @ C2, D13 @ Cc])
    C_y = np.hstack([C2, np.zeros((H.n_y, nc))])
    return ClosedLoopAugmented(
        A_cl, B_cl1, B_cl2, C_r, D11 + D13 @ Dc @ D21, D12 + D13 @ Dc @ D22,
        C_y, D21.copy(), D22.copy(),
        n_G=H.n_G, psi=H.psi, source=H.source,
        C_u=np.hstack([Dc @ C2, Cc]), D_u1=Dc @ D21, D_u2=Dc @ D22,
        n_plant=nH, n_c=nc, controller=K, plant=H,
    )


def transition(sys: AugmentedSystem, x, theta, d, u=None):
    """One exact step of the linear recursion.

    Returns ``(x_next, r, y)`` for an augmented system (``u`` required when
    it has a control channel) and ``(x_next, r, y, u)`` for a closed loop.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    th = np.asarray(theta, dtype=float).reshape(-1)
    dd = np.asarray(d, dtype=float).reshape(-1)
    if x.size != sys.n_x or th.size != sys.n_theta or dd.size != sys.n_d:
        raise DimensionError(
            f"transition expects (x, theta, d) of sizes ({sys.n_x}, {sys.n_theta}, {sys.n_d}), "
            f"got ({x.size}, {th.size}, {dd.size})"
        )
    xn = sys.A_H @ x + sys.B_H1 @ th + sys.B_H2 @ dd
    r = sys.C_H1 @ x + sys.D_H11 @ th + sys.D_H12 @ dd
    y = sys.C_H2 @ x + sys.D_H21 @ th + sys.D_H22 @ dd
    if isinstance(sys, ClosedLoopAugmented):
        uo = sys.C_u @ x + sys.D_u1 @ th + sys.D_u2 @ dd
        return xn, r, y, uo
    if sys.has_control:
        if u is None:
            raise InputError("system has a control channel: supply u")
        uu = np.asarray(u, dtype=float).reshape(-1)
        if uu.size != sys.n_u:
            raise DimensionError(f"u must have {sys.n_u} entries, got {uu.size}")
        xn = xn + sys.B_H3 @ uu
        r = r + sys.D_H13 @ uu
        y = y + sys.D_H23 @ uu
    return xn, r, y
