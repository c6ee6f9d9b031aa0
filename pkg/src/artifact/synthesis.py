"""State-invariant and output-bounding ellipsoids for the augmented system.

For a polytope ``D`` of disturbances with vertices ``d_i`` the state
certificate ``(P, S_x, tau1)`` must satisfy, for every vertex,

    F1([A B1], P, B2 d_i) - tau1 F3(P) - F4([C1 D11 D12 d_i], S_x) >= 0
    B2^T P B2 + D12^T S_x D12 >= 0

and the output certificate ``(Q, S_y, tau3)`` for a given ``P``

    F1([C2 D21], Q, D22 d_i) - tau3 F3(P) - F2([C1 D11], S_y, D12 d_i) >= 0
    D22^T Q D22 + D12^T S_y D12 >= 0.

The multipliers ``tau2``/``tau4`` are absorbed into the free scalings. The
S-procedure multiplier ``tau1`` (``tau3``) enters bilinearly, so it is
gridded over ``[0, 1]`` and each grid point is a convex log-det problem.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .augmentation import AugmentedSystem, spectral_radius
from .errors import DimensionError, InfeasibleError, InputError, UnstableSystemError
from .numerics import blkdiag, psd_check, solve_spd, symmetrize
from .sdp import lmi_from_affine_map, solve_logdet

__all__ = [
    "Polytope",
    "EllipsoidCertificate",
    "OutputCertificate",
    "CertificateCheck",
    "assemble_F",
    "state_lmis",
    "output_lmis",
    "synth_state_invariant",
    "synth_output_bound",
    "check_state_certificate",
    "check_output_certificate",
    "ellipsoid_box_bounds",
    "default_grid",
]

CHECK_MARGIN = 1e-9
P_MIN_EIG = 1e-9


def default_grid(n: int = 21) -> np.ndarray:
    """``n`` uniform points on ``[0, 1]``."""
    if n < 1:
        raise InputError("grid needs at least one point")
    return np.linspace(0.0, 1.0, n) if n > 1 else np.array([1.0])


class Polytope:
    """Convex hull of finitely many disturbance vertices; must contain the origin.

    Parameters
    ----------
    vertices : array_like, shape (t, n_d)
        ``t >= 1`` vertices. ``n_d`` may be zero (no disturbance).
    """

    def __init__(self, vertices):
        V = np.asarray(vertices, dtype=float)
        if V.ndim == 1:
            V = V.reshape(-1, 1) if V.size else V.reshape(1, 0)
        if V.ndim != 2 or V.shape[0] < 1:
            raise InputError("a polytope needs at least one vertex")
        if not np.all(np.isfinite(V)):
            raise InputError("polytope vertices must be finite")
        self.vertices = V
        if not self.contains(np.zeros(V.shape[1])):
            raise InputError("the polytope must contain the zero vector")

    @classmethod
    def box(cls, bounds) -> "Polytope":
        """The box ``|d_j| <= bounds_j`` as its ``2**n_d`` sign vertices."""
        b = np.atleast_1d(np.asarray(bounds, dtype=float))
        if np.any(b < 0):
            raise InputError("box bounds must be nonnegative")
        if b.size == 0:
            return cls(np.zeros((1, 0)))
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=b.size)))
        V = np.unique(signs * b, axis=0)
        return cls(V)

    @property
    def n_d(self) -> int:
        return self.vertices.shape[1]

    @property
    def t(self) -> int:
        return self.vertices.shape[0]

    def box_bounds(self) -> np.ndarray:
        """Tight axis-aligned half-widths ``max_i |v_i|`` of the hull."""
        return np.max(np.abs(self.vertices), axis=0) if self.n_d else np.zeros(0)

    def is_box(self) -> bool:
        """True when the vertex set is exactly a symmetric box."""
        b = self.box_bounds()
        expected = Polytope.box(b).vertices
        got = np.unique(self.vertices, axis=0)
        return got.shape == expected.shape and bool(np.all(got == expected))

    def contains(self, d, tol: float = 1e-12) -> bool:
        """Membership via a feasibility LP on the convex weights."""
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.size != self.n_d:
            raise DimensionError(f"point has {d.size} entries, polytope lives in R^{self.n_d}")
        if self.n_d == 0:
            return True
        if any(np.all(np.abs(v - d) <= tol) for v in self.vertices):
            return True
        t = self.t
        A_eq = np.vstack([self.vertices.T, np.ones((1, t))])
        b_eq = np.append(d, 1.0)
        res = optimize.linprog(np.zeros(t), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * t, method="highs")
        if res.status != 0:
            return False
        return bool(np.max(np.abs(A_eq @ res.x - b_eq)) <= max(tol, 1e-9))


def assemble_F(which: str, *args, one: float = 1.0) -> np.ndarray:
    """The matrix functions used by the certificate conditions.

    ``F1(X1, X2, X3)``, ``F2(X1, X2, X3)``, ``F3(X, n_theta)`` and
    ``F4(X1, X2) = X1^T X2 X1``. ``one`` replaces the constant corner of
    ``F1`` (used for tightened target levels).
    """
    w = which.upper()
    if w in ("F1", "F2"):
        X1, X2, X3 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in args)
        if X2.shape[0] != X2.shape[1] or X1.shape[0] != X2.shape[0] or X3.shape[0] != X2.shape[0]:
            raise DimensionError(f"{w}: incompatible shapes {X1.shape}, {X2.shape}, {X3.shape}")
        a = X1.T @ X2 @ X1
        b = X1.T @ X2 @ X3
        c = X3.T @ X2 @ X3
        if w == "F1":
            return np.block([[-a, -b], [-b.T, one * np.eye(c.shape[0]) - c]])
        return np.block([[a, b], [b.T, c]])
    if w == "F3":
        X, n_theta = args
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != X.shape[1]:
            raise DimensionError("F3: X must be square")
        return blkdiag(-X, np.zeros((int(n_theta), int(n_theta))), np.ones((1, 1)))
    if w == "F4":
        X1, X2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in args)
        if X2.shape[0] != X2.shape[1] or X1.shape[0] != X2.shape[0]:
            raise DimensionError(f"F4: incompatible shapes {X1.shape}, {X2.shape}")
        return X1.T @ X2 @ X1
    raise InputError(f"unknown function {which!r}")


def _sym_from_params(p, n):
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = p
    return M + np.triu(M, 1).T


def _sym_params(M):
    n = M.shape[0]
    return np.asarray(M)[np.triu_indices(n)]


def _assemble_S(templates, p):
    blocks, o = [], 0
    for t in templates:
        X, Y = t.unpack(p[o:o + t.n_params])
        blocks.append(t.assemble(X, Y))
        o += t.n_params
    return blkdiag(*blocks) if blocks else np.zeros((0, 0))


def _n_scaling(templates):
    return sum(t.n_params for t in templates)


def state_lmis(H: AugmentedSystem, D: Polytope, tau: float, P, S, level: float = 1.0):
    """State-certificate matrices for given numeric ``(P, S_x)``: one per vertex plus the convexity condition."""
    ones = assemble_F("F3", P, H.n_theta)
    X1 = np.hstack([H.A_H, H.B_H1])
    out = []
    for d in D.vertices:
        X3 = (H.B_H2 @ d).reshape(-1, 1)
        R = np.hstack([H.C_H1, H.D_H11, (H.D_H12 @ d).reshape(-1, 1)])
        M = assemble_F("F1", X1, P, X3, one=level) - tau * ones - assemble_F("F4", R, S)
        out.append(symmetrize(M))
    conv = H.B_H2.T @ P @ H.B_H2 + H.D_H12.T @ S @ H.D_H12
    return out, symmetrize(conv)


def output_lmis(H: AugmentedSystem, D: Polytope, tau: float, P, Q, S, level: float = 1.0):
    """Output-certificate matrices for given numeric ``(P, Q, S_y)``."""
    ones = assemble_F("F3", P, H.n_theta)
    X1 = np.hstack([H.C_H2, H.D_H21])
    R1 = np.hstack([H.C_H1, H.D_H11])
    out = []
    for d in D.vertices:
        X3 = (H.D_H22 @ d).reshape(-1, 1)
        M = (assemble_F("F1", X1, Q, X3, one=level) - tau * ones
             - assemble_F("F2", R1, S, (H.D_H12 @ d).reshape(-1, 1)))
        out.append(symmetrize(M))
    conv = H.D_H22.T @ Q @ H.D_H22 + H.D_H12.T @ S @ H.D_H12
    return out, symmetrize(conv)


@dataclass
class CertificateCheck:
    """Independent re-evaluation of a certificate.

    ``vertex_min_eigs[i]`` is the smallest eigenvalue of the vertex-``i``
    condition; ``convexity_min_eig`` of the second condition (``+inf`` when
    it is an empty matrix); ``shape_min_eig`` of ``P`` or ``Q``;
    ``scaling_min_eigs`` of each ``X`` block.
    """

    ok: bool
    margin: float
    vertex_min_eigs: list
    convexity_min_eig: float
    shape_min_eig: float
    scaling_min_eigs: list
    messages: list = field(default_factory=list)

    @property
    def min_eig(self) -> float:
        vals = list(self.vertex_min_eigs) + [self.convexity_min_eig]
        return float(min(vals)) if vals else float("inf")

    def __bool__(self):
        return self.ok


@dataclass
class EllipsoidCertificate:
    """State-invariant ellipsoid ``{x : x^T P x <= 1}`` with its multipliers.

    ``level`` is the target level of the next state (1 for plain
    invariance, below 1 when synthesized with slack for rounding errors).
    """

    P: np.ndarray
    S_x: np.ndarray
    scalings: list
    tau1: float
    level: float = 1.0
    margins: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def logdet(self) -> float:
        s, v = np.linalg.slogdet(self.P)
        return float(v) if s > 0 else -np.inf


@dataclass
class OutputCertificate:
    """Output-bounding ellipsoid ``{y : y^T Q y <= level}``."""

    Q: np.ndarray
    S_y: np.ndarray
    scalings: list
    tau3: float
    level: float = 1.0
    margins: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def logdet(self) -> float:
        s, v = np.linalg.slogdet(self.Q)
        return float(v) if s > 0 else -np.inf


def _scaling_valid(templates, scalings):
    eigs = []
    for t, (X, Y) in zip(templates, scalings):
        eigs.append(psd_check(X, 0.0).lambda_min if X.size else float("inf"))
    return eigs


def check_state_certificate(H: AugmentedSystem, D: Polytope, cert: EllipsoidCertificate,
                            margin: float = CHECK_MARGIN) -> CertificateCheck:
    """Re-assemble every state-certificate condition from raw data and check PSD-ness.

    Passes iff every vertex condition and the convexity condition have
    minimum eigenvalue ``>= -margin``, ``lambda_min(P) >= 1e-9``, and every
    scaling block has ``X >= 0`` (to ``margin``), so that ``S_x`` is a
    valid multiplier.
    """
    msgs = []
    P = symmetrize(np.asarray(cert.P, dtype=float))
    if P.shape != (H.n_x, H.n_x):
        return CertificateCheck(False, margin, [], -np.inf, -np.inf, [],
                                [f"P is {P.shape}, system has {H.n_x} states"])
    templates = H.templates
    if len(cert.scalings) != len(templates):
        return CertificateCheck(False, margin, [], -np.inf, -np.inf, [],
                                [f"{len(cert.scalings)} scaling blocks given, structure has {len(templates)}"])
    S = blkdiag(*[t.assemble(X, 0.5 * (Y - Y.T)) for t, (X, Y) in zip(templates, cert.scalings)]) \
        if templates else np.zeros((H.n_r, H.n_r))
    if S.shape != (H.n_r, H.n_r):
        return CertificateCheck(False, margin, [], -np.inf, -np.inf, [],
                                [f"S_x is {S.shape}, residual has {H.n_r} entries"])
    if D.n_d != H.n_d:
        return CertificateCheck(False, margin, [], -np.inf, -np.inf, [],
                                [f"polytope dimension {D.n_d} differs from n_d={H.n_d}"])
    Ms, conv = state_lmis(H, D, cert.tau1, P, S, cert.level)
    v = [psd_check(M, margin).lambda_min for M in Ms]
    c = psd_check(conv, margin).lambda_min
    pmin = psd_check(P, 0.0).lambda_min
    xe = _scaling_valid(templates, cert.scalings)
    ok = True
    for i, e in enumerate(v):
        if e < -margin:
            ok = False
            msgs.append(f"vertex {i}: lambda_min={e:.6e}")
    if c < -margin:
        ok = False
        msgs.append(f"convexity condition: lambda_min={c:.6e}")
    if not pmin >= P_MIN_EIG:
        ok = False
        msgs.append(f"P not positive definite: lambda_min={pmin:.6e}")
    if any(e < -margin for e in xe):
        ok = False
        msgs.append("scaling X not positive semidefinite")
    if cert.tau1 < 0:
        ok = False
        msgs.append("tau1 negative")
    return CertificateCheck(ok, margin, v, c, pmin, xe, msgs)


def check_output_certificate(H: AugmentedSystem, D: Polytope, P, cert: OutputCertificate,
                             margin: float = CHECK_MARGIN) -> CertificateCheck:
    """Output analogue of :func:`check_state_certificate` for a given ``P``."""
    P = symmetrize(np.asarray(P, dtype=float))
    Q = symmetrize(np.asarray(cert.Q, dtype=float))
    templates = H.templates
    if Q.shape != (H.n_y, H.n_y) or P.shape != (H.n_x, H.n_x) or len(cert.scalings) != len(templates):
        return CertificateCheck(False, margin, [], -np.inf, -np.inf, [], ["dimension mismatch"])
    S = blkdiag(*[t.assemble(X, 0.5 * (Y - Y.T)) for t, (X, Y) in zip(templates, cert.scalings)]) \
        if templates else np.zeros((H.n_r, H.n_r))
    Ms, conv = output_lmis(H, D, cert.tau3, P, Q, S, cert.level)
    v = [psd_check(M, margin).lambda_min for M in Ms]
    c = psd_check(conv, margin).lambda_min
    qmin = psd_check(Q, 0.0).lambda_min if Q.size else float("inf")
    xe = _scaling_valid(templates, cert.scalings)
    msgs = [f"vertex {i}: lambda_min={e:.6e}" for i, e in enumerate(v) if e < -margin]
    if c < -margin:
        msgs.append(f"convexity condition: lambda_min={c:.6e}")
    if not qmin >= P_MIN_EIG:
        msgs.append(f"Q not positive definite: lambda_min={qmin:.6e}")
    if any(e < -margin for e in xe):
        msgs.append("scaling X not positive semidefinite")
    if cert.tau3 < 0:
        msgs.append("tau3 negative")
    return CertificateCheck(not msgs, margin, v, c, qmin, xe, msgs)


def _balancing(H: AugmentedSystem, D: Polytope) -> np.ndarray:
    """Diagonal state scaling from the disturbance Gramian of the nominal dynamics."""
    n = H.n_x
    Bd = H.B_H2 @ np.diag(D.box_bounds()) if H.n_d else np.zeros((n, 0))
    Bt = H.B_H1
    Wq = Bd @ Bd.T + 1e-3 * (Bt @ Bt.T)
    Wq = Wq + 1e-9 * max(np.trace(Wq), 1.0) * np.eye(n) / max(n, 1)
    try:
        W = linalg.solve_discrete_lyapunov(H.A_H, Wq)
        dg = np.diag(W)
        if not np.all(np.isfinite(dg)) or np.any(dg <= 0):
            raise ValueError
    except (ValueError, np.linalg.LinAlgError):
        return np.ones(n)
    t = np.sqrt(dg)
    return t / np.exp(np.mean(np.log(t)))


def _scaled(H: AugmentedSystem, T: np.ndarray, Ty: Optional[np.ndarray] = None) -> AugmentedSystem:
    """``x = diag(T) z`` (and ``y = diag(Ty) y_z``) applied to the matrices used by the certificates."""
    Ti = 1.0 / T
    Tyi = np.ones(H.n_y) if Ty is None else 1.0 / Ty
    return AugmentedSystem(
        (Ti[:, None] * H.A_H) * T[None, :], Ti[:, None] * H.B_H1, Ti[:, None] * H.B_H2,
        H.C_H1 * T[None, :], H.D_H11, H.D_H12,
        Tyi[:, None] * H.C_H2 * T[None, :], Tyi[:, None] * H.D_H21, Tyi[:, None] * H.D_H22,
        n_G=H.n_G, psi=H.psi,
    )


def _state_problem(H, D, tau, level, bound):
    n = H.n_x
    nP = n * (n + 1) // 2
    templates = H.templates
    nS = _n_scaling(templates)
    N = nP + nS

    def unpack(x):
        return _sym_from_params(x[:nP], n), _assemble_S(templates, x[nP:])

    lmis = [lmi_from_affine_map(lambda x: unpack(x)[0], N, "P")]
    lmis.append(lmi_from_affine_map(lambda x: bound * np.eye(n) - unpack(x)[0], N, "P-bound"))
    o = nP
    for t in templates:
        lo = o

        def XY(x, lo=lo, t=t):
            return t.unpack(x[lo:lo + t.n_params])

        lmis.append(lmi_from_affine_map(lambda x, XY=XY: XY(x)[0], N, "X"))
        lmis.append(lmi_from_affine_map(lambda x, XY=XY: bound * np.eye(t.copies) - XY(x)[0], N, "X-bound"))
        if t.copies > 1:
            lmis.append(lmi_from_affine_map(
                lambda x, XY=XY, c=t.copies: np.block([[bound * np.eye(c), XY(x)[1]], [XY(x)[1].T, bound * np.eye(c)]]),
                N, "Y-bound"))
        o += t.n_params
    for i in range(D.t):
        lmis.append(lmi_from_affine_map(
            lambda x, i=i: state_lmis(H, D, tau, *unpack(x), level)[0][i], N, f"vertex-{i}"))
    lmis.append(lmi_from_affine_map(lambda x: state_lmis(H, D, tau, *unpack(x), level)[1], N, "convexity"))
    return lmis, N, nP, unpack


def _solve_state_point(H, D, tau, level, bound, gap_tol):
    lmis, N, nP, unpack = _state_problem(H, D, tau, level, bound)
    res = solve_logdet(lmis, N, objective=[0], gap_tol=gap_tol, keep_history=True)
    return res, unpack, nP


@dataclass
class _GridOutcome:
    tau: float
    feasible: bool
    logdet: float
    worst_eig: float
    cert: Optional[object] = None
    iterations: int = 0
    status: str = ""


def _finalize_state(H, D, tau, level, res, unpack, nP, T, margin):
    """Map central-path iterates back to original coordinates; keep the deepest one that re-checks."""
    templates = H.templates
    for x in reversed(res.history):
        Pz, _ = unpack(x)
        P = symmetrize(Pz / np.outer(T, T))
        scal = []
        o = nP
        for t in templates:
            scal.append(t.unpack(x[o:o + t.n_params]))
            o += t.n_params
        S = blkdiag(*[t.assemble(X, Y) for t, (X, Y) in zip(templates, scal)]) if templates else np.zeros((H.n_r, H.n_r))
        cert = EllipsoidCertificate(P, S, scal, float(tau), float(level))
        chk = check_state_certificate(H, D, cert, margin)
        if chk.ok:
            cert.margins = [float(e) for e in chk.vertex_min_eigs] + [float(chk.convexity_min_eig)]
            return cert
    return None


def synth_state_invariant(H: AugmentedSystem, D: Polytope, grid=21, *, level: float = 1.0,
                          bound: float = 1e6, gap_tol: float = 1e-9, margin: float = CHECK_MARGIN,
                          balance: bool = True, n_jobs: int = 1) -> EllipsoidCertificate:
    """Synthesize a state-invariant ellipsoid of maximal ``log det P``.

    Parameters
    ----------
    H : AugmentedSystem or ClosedLoopAugmented
        Must have a stable nominal ``A_H``.
    D : Polytope
        Disturbance set.
    grid : int or array_like
        Number of uniform ``tau1`` points on ``[0, 1]`` or explicit values.
    level : float
        Target level of the next state, ``0 < level <= 1``. Values below one
        leave slack for rounding errors in the implementation.
    bound : float
        Upper bound on the eigenvalues of ``P`` and the scalings in the
        balanced coordinates; keeps the problem bounded.
    n_jobs : int
        Grid points solved concurrently (results do not depend on it).

    Returns
    -------
    EllipsoidCertificate
        Maximizing ``log det P`` over the feasible grid points; ties go to
        the smallest ``tau1``. The certificate has passed
        :func:`check_state_certificate`.

    Raises
    ------
    UnstableSystemError
        If the spectral radius of ``A_H`` is at least one.
    InfeasibleError
        If no grid point admits a certificate; ``report`` lists
        ``(tau1, worst eigenvalue)`` per point.
    """
    if D.n_d != H.n_d:
        raise DimensionError(f"polytope has dimension {D.n_d}, system has n_d={H.n_d}")
    if not (0 < level <= 1):
        raise InputError(f"level must lie in (0, 1], got {level}")
    rho = spectral_radius(H.A_H)
    if rho >= 1:
        raise UnstableSystemError(f"A_H has spectral radius {rho:.6g} >= 1")
    taus = default_grid(grid) if np.isscalar(grid) else np.asarray(grid, dtype=float).reshape(-1)
    if taus.size == 0 or np.any(taus < 0) or np.any(taus > 1):
        raise InputError("tau grid must be a nonempty subset of [0, 1]")
    T = _balancing(H, D) if balance else np.ones(H.n_x)
    Hz = _scaled(H, T)

    def run(tau):
        res, unpack, nP = _solve_state_point(Hz, D, tau, level, bound, gap_tol)
        if not res.feasible:
            return _GridOutcome(float(tau), False, -np.inf, res.worst_eig, None, res.iterations, res.status)
        cert = _finalize_state(H, D, tau, level, res, unpack, nP, T, margin)
        if cert is None:
            return _GridOutcome(float(tau), False, -np.inf, res.worst_eig, None, res.iterations, "recheck-failed")
        cert.provenance = {"grid_point": float(tau), "iterations": res.iterations, "status": res.status,
                           "grid_size": int(taus.size), "balancing": [float(v) for v in T]}
        return _GridOutcome(float(tau), True, cert.logdet, res.worst_eig, cert, res.iterations, res.status)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            outcomes = list(ex.map(run, taus))
    else:
        outcomes = [run(t) for t in taus]
    feas = [o for o in outcomes if o.feasible]
    if not feas:
        raise InfeasibleError(
            "no state-invariant ellipsoid found on the tau1 grid",
            report=[{"tau": o.tau, "worst_eig": o.worst_eig, "status": o.status} for o in outcomes],
        )
    best = max(feas, key=lambda o: (o.logdet, -o.tau))
    best.cert.provenance["grid_report"] = [
        {"tau": o.tau, "feasible": o.feasible, "logdet": o.logdet if o.feasible else None,
         "status": o.status} for o in outcomes
    ]
    return best.cert


def _output_problem(H, D, tau, P, bound, level):
    ny = H.n_y
    nQ = ny * (ny + 1) // 2
    templates = H.templates
    nS = _n_scaling(templates)
    N = nQ + nS

    def unpack(x):
        return _sym_from_params(x[:nQ], ny), _assemble_S(templates, x[nQ:])

    lmis = [lmi_from_affine_map(lambda x: unpack(x)[0], N, "Q"),
            lmi_from_affine_map(lambda x: bound * np.eye(ny) - unpack(x)[0], N, "Q-bound")]
    o = nQ
    for t in templates:
        lo = o

        def XY(x, lo=lo, t=t):
            return t.unpack(x[lo:lo + t.n_params])

        lmis.append(lmi_from_affine_map(lambda x, XY=XY: XY(x)[0], N, "X"))
        lmis.append(lmi_from_affine_map(lambda x, XY=XY: bound * np.eye(t.copies) - XY(x)[0], N, "X-bound"))
        if t.copies > 1:
            lmis.append(lmi_from_affine_map(
                lambda x, XY=XY, c=t.copies: np.block([[bound * np.eye(c), XY(x)[1]], [XY(x)[1].T, bound * np.eye(c)]]),
                N, "Y-bound"))
        o += t.n_params
    for i in range(D.t):
        lmis.append(lmi_from_affine_map(
            lambda x, i=i: output_lmis(H, D, tau, P, *unpack(x), level)[0][i], N, f"vertex-{i}"))
    lmis.append(lmi_from_affine_map(lambda x: output_lmis(H, D, tau, P, *unpack(x), level)[1], N, "convexity"))
    return lmis, N, nQ, unpack


def synth_output_bound(H: AugmentedSystem, D: Polytope, P, grid=21, *, level: float = 1.0, bound: float = 1e6,
                       gap_tol: float = 1e-9, margin: float = CHECK_MARGIN, balance: bool = True,
                       n_jobs: int = 1) -> OutputCertificate:
    """Synthesize an output-bounding ellipsoid of maximal ``log det Q`` for a given ``P``.

    Grids ``tau3`` like :func:`synth_state_invariant`; the returned
    certificate has passed :func:`check_output_certificate`. ``level`` plays
    the same role as in the state synthesis.
    """
    if not (0 < level <= 1):
        raise InputError(f"level must lie in (0, 1], got {level}")
    P = symmetrize(np.asarray(P, dtype=float))
    if P.shape != (H.n_x, H.n_x):
        raise DimensionError(f"P is {P.shape}, system has {H.n_x} states")
    if D.n_d != H.n_d:
        raise DimensionError(f"polytope has dimension {D.n_d}, system has n_d={H.n_d}")
    if H.n_y == 0:
        raise InputError("system has no measured output")
    taus = default_grid(grid) if np.isscalar(grid) else np.asarray(grid, dtype=float).reshape(-1)
    if taus.size == 0 or np.any(taus < 0) or np.any(taus > 1):
        raise InputError("tau grid must be a nonempty subset of [0, 1]")
    if balance:
        T = 1.0 / np.sqrt(np.maximum(np.diag(P), 1e-300))
        T = T / np.exp(np.mean(np.log(T)))
        Pinv = solve_spd(P, np.eye(H.n_x))
        Ycov = H.C_H2 @ Pinv @ H.C_H2.T
        dy = np.diag(Ycov)
        Ty = np.sqrt(np.where(dy > 0, dy, 1.0))
    else:
        T, Ty = np.ones(H.n_x), np.ones(H.n_y)
    Hz = _scaled(H, T, Ty)
    Pz = P * np.outer(T, T)
    templates = H.templates

    def run(tau):
        lmis, N, nQ, unpack = _output_problem(Hz, D, tau, Pz, bound, level)
        res = solve_logdet(lmis, N, objective=[0], gap_tol=gap_tol, keep_history=True)
        if not res.feasible:
            return _GridOutcome(float(tau), False, -np.inf, res.worst_eig, None, res.iterations, res.status)
        for x in reversed(res.history):
            Qz, _ = unpack(x)
            Q = symmetrize(Qz / np.outer(Ty, Ty))
            scal, o = [], nQ
            for t in templates:
                scal.append(t.unpack(x[o:o + t.n_params]))
                o += t.n_params
            S = blkdiag(*[t.assemble(X, Y) for t, (X, Y) in zip(templates, scal)]) if templates else np.zeros((H.n_r, H.n_r))
            cert = OutputCertificate(Q, S, scal, float(tau), float(level))
            chk = check_output_certificate(H, D, P, cert, margin)
            if chk.ok:
                cert.margins = [float(e) for e in chk.vertex_min_eigs] + [float(chk.convexity_min_eig)]
                cert.provenance = {"grid_point": float(tau), "iterations": res.iterations,
                                   "status": res.status, "grid_size": int(taus.size)}
                return _GridOutcome(float(tau), True, cert.logdet, res.worst_eig, cert, res.iterations, res.status)
        return _GridOutcome(float(tau), False, -np.inf, res.worst_eig, None, res.iterations, "recheck-failed")

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            outcomes = list(ex.map(run, taus))
    else:
        outcomes = [run(t) for t in taus]
    feas = [o for o in outcomes if o.feasible]
    if not feas:
        raise InfeasibleError(
            "no output-bounding ellipsoid found on the tau3 grid (enlarge P or refine the grid)",
            report=[{"tau": o.tau, "worst_eig": o.worst_eig, "status": o.status} for o in outcomes],
        )
    best = max(feas, key=lambda o: (o.logdet, -o.tau))
    return best.cert


def ellipsoid_box_bounds(M, level: float = 1.0) -> np.ndarray:
    """Half-widths ``sqrt(level * (M^-1)_ii)`` of the box enclosing ``{z : z^T M z <= level}``."""
    if not (np.isfinite(level) and level > 0):
        raise InputError(f"level must be positive, got {level}")
    M = symmetrize(np.asarray(M, dtype=float))
    Minv = solve_spd(M, np.eye(M.shape[0]))
    return np.sqrt(level * np.diag(Minv))
