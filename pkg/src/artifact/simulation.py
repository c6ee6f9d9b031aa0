"""Randomized simulation used to falsify certificates and audit error bounds.

Every generator is ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based 64-bit generator, so runs reproduce bit for bit across
platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augmentation import AugmentedSystem, ClosedLoopAugmented, LtiController
from .errors import DimensionError, IllPosedError, InputError
from .float_model import affine_update_error
from .iqc import pointwise_value, residual, structure_factors
from .lft import AffineLpv, LftSystem
from .synthesis import EllipsoidCertificate, Polytope

__all__ = [
    "rng",
    "TrajectoryRun",
    "simulate_uncertain",
    "InvarianceReport",
    "empirical_invariance",
    "iqc_residual_audit",
    "LpvCheckReport",
    "lpv_overapprox_check",
    "two_sum",
    "two_prod",
    "dd_dot",
    "float_dot",
    "FloatAuditReport",
    "float_error_audit",
    "dump_csv",
    "DELTA_POLICIES",
    "D_POLICIES",
]

DELTA_POLICIES = ("random-admissible", "vertex-switching", "constant")
D_POLICIES = ("vertex-cycling", "random-in-polytope", "zero")
LEVEL_TOL = 1e-7


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class TrajectoryRun:
    """Recorded signals of one simulation, one row per step."""

    horizon: int
    seed: int
    delta_policy: str
    d_policy: str
    signals: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.signals[key]


class _Policies:
    """Batched delta/d generators for ``R`` independent runs."""

    def __init__(self, alphas, D: Optional[Polytope], delta_policy, d_policy, g, R=1, delta_value=None,
                 allow_inadmissible=False):
        if delta_policy not in DELTA_POLICIES:
            raise InputError(f"delta policy must be one of {DELTA_POLICIES}")
        if d_policy not in D_POLICIES:
            raise InputError(f"d policy must be one of {D_POLICIES}")
        self.alphas = np.asarray(alphas, dtype=float)
        self.D, self.dp, self.g, self.R = D, d_policy, g, R
        self.policy = delta_policy
        m = self.alphas.size
        if delta_policy == "constant":
            v = np.broadcast_to(np.asarray(self.alphas if delta_value is None else delta_value, dtype=float),
                                (m,)).copy()
            if not allow_inadmissible and np.any(np.abs(v) > self.alphas):
                raise InputError("constant delta outside the admissible set")
            self.const = np.broadcast_to(v, (R, m))
        self.sign = np.where(g.random((R, m)) < 0.5, -1.0, 1.0)
        self.k = 0

    def delta(self):
        m = self.alphas.size
        if self.policy == "constant":
            return self.const.copy()
        if self.policy == "random-admissible":
            return self.alphas * self.g.uniform(-1.0, 1.0, (self.R, m))
        flip = self.g.random((self.R, m)) < 0.5
        self.sign = np.where(flip, -self.sign, self.sign)
        return self.sign * self.alphas

    def d(self, n_d):
        k = self.k
        self.k += 1
        if self.dp == "zero" or self.D is None or n_d == 0:
            return np.zeros((self.R, n_d))
        V = self.D.vertices
        if self.dp == "vertex-cycling":
            return V[(k + np.arange(self.R)) % len(V)]
        return self.g.dirichlet(np.ones(len(V)), size=self.R) @ V


def _theta_from_delta(dvec, rhs, D11):
    """Solve ``phi = rhs + D11 diag(dvec) phi`` row-wise; returns ``(phi, theta)``."""
    if dvec.shape[1] == 0:
        return np.zeros_like(dvec), np.zeros_like(dvec)
    if not np.any(D11):
        phi = rhs
    else:
        M = np.eye(D11.shape[0])[None] - D11[None] * dvec[:, None, :]
        try:
            phi = np.linalg.solve(M, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise IllPosedError("I - D11 Delta is singular at a sampled delta", None) from exc
    return phi, dvec * phi


def _expand(delta, structure):
    """Per-run diagonal of ``Delta``: each ``delta_j`` repeated by its copy count."""
    reps = [b.copies for b in structure.blocks]
    return np.repeat(delta, reps, axis=1)


def simulate_uncertain(sys: LftSystem, horizon: int, seed: int = 0, *, D: Optional[Polytope] = None,
                       delta_policy: str = "random-admissible", d_policy: str = "vertex-cycling",
                       x0=None, controller: Optional[LtiController] = None, xc0=None,
                       delta_value=None, allow_inadmissible: bool = False) -> TrajectoryRun:
    """Step the LFT recursion of ``(G, Delta)``, optionally in feedback with an LTI controller.

    At each step ``phi = (I - D11 Delta)^-1 (C1 x + D12 d + D13 u)``,
    ``theta = Delta phi``, then the state and output equations. The IQC
    residual ``r`` of the SLTV filter is recorded alongside.

    Parameters
    ----------
    sys : LftSystem
    horizon : int
    seed : int
    D : Polytope, optional
        Disturbance set; required unless ``d_policy == "zero"`` or ``n_d == 0``.
    delta_policy, d_policy : str
        See :data:`DELTA_POLICIES`, :data:`D_POLICIES`.
    controller : LtiController, optional
        Closes the loop ``u = C_c x_c + D_c y``; the plant must have a
        control channel and no ``u``-to-``y`` feedthrough.
    delta_value : array_like, optional
        Value for the ``constant`` policy (default: the bounds).
    allow_inadmissible : bool
        Test-only switch permitting a constant ``delta`` outside the bounds.
    """
    G, dims = sys.G, sys.dims
    pol = _Policies(sys.delta.alphas, D, delta_policy, d_policy, rng(seed), 1, delta_value, allow_inadmissible)
    psi = structure_factors(sys.delta)
    x = np.zeros(dims.n_G) if x0 is None else np.asarray(x0, dtype=float).reshape(-1).copy()
    if x.size != dims.n_G:
        raise DimensionError(f"x0 must have {dims.n_G} entries")
    n_u = dims.n_u if G.has_control else 0
    D13 = G.D_G13 if G.has_control else np.zeros((dims.n_phi, 0))
    if controller is not None:
        if not G.has_control or np.any(G.D_G23):
            raise InputError("closing the loop needs a control channel without u-to-y feedthrough")
        xc = np.zeros(controller.n_c) if xc0 is None else np.asarray(xc0, dtype=float).reshape(-1).copy()
        Dc = controller.D_c
    else:
        xc, Dc = None, np.zeros((n_u, dims.n_y))
    # u = u0 + Dc D21 theta, so phi = C1 x + D12 d + D13 u0 + (D11 + D13 Dc D21) theta
    D11 = G.D_G11 + D13 @ Dc @ G.D_G21
    xpsi = np.zeros(psi.n_psi)
    rec = {k: [] for k in ("x", "xc", "delta", "d", "phi", "theta", "r", "y", "u")}
    for _ in range(horizon):
        dl = pol.delta()
        d = pol.d(dims.n_d)[0]
        y0 = G.C_G2 @ x + G.D_G22 @ d
        u0 = controller.C_c @ xc + Dc @ y0 if controller is not None else np.zeros(n_u)
        rhs = G.C_G1 @ x + G.D_G12 @ d + D13 @ u0
        phi, theta = _theta_from_delta(_expand(dl, sys.delta), rhs[None], D11)
        phi, theta = phi[0], theta[0]
        y = y0 + G.D_G21 @ theta
        u = u0 + Dc @ G.D_G21 @ theta
        r, xpsi = residual(psi, xpsi, phi, theta)
        rec["x"].append(x.copy())
        rec["delta"].append(dl[0].copy())
        rec["d"].append(d)
        rec["phi"].append(phi)
        rec["theta"].append(theta)
        rec["r"].append(r)
        rec["y"].append(y)
        if G.has_control:
            rec["u"].append(u)
        xn = G.A_G @ x + G.B_G1 @ theta + G.B_G2 @ d
        if G.has_control:
            xn = xn + G.B_G3 @ u
        if controller is not None:
            rec["xc"].append(xc.copy())
            xc = controller.A_c @ xc + controller.B_c @ y
        x = xn
    sig = {k: np.array(v) for k, v in rec.items() if v}
    sig["x_final"] = x
    return TrajectoryRun(horizon, seed, delta_policy, d_policy, sig)


# ---------------------------------------------------------------------------
# invariance falsification


@dataclass
class InvarianceReport:
    """``max_level`` over all recorded steps; ``violations`` lists ``(run, step, level)``."""

    max_level: float
    violations: list
    steps: int
    max_output_level: Optional[float] = None
    min_residual: Optional[float] = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _phi_map(system: AugmentedSystem):
    """``phi = Cx x + D11 theta + D12 d`` over the full state (plant, filter and controller)."""
    src: LftSystem = system.source
    if src is None:
        raise InputError("simulation needs the LFT the augmented system was built from")
    G = src.G
    nG = G.A_G.shape[0]
    Cx = np.zeros((G.C_G1.shape[0], system.n_x))
    Cx[:, :nG] = G.C_G1
    D11, D12 = G.D_G11.copy(), G.D_G12.copy()
    if isinstance(system, ClosedLoopAugmented) and G.has_control:
        K = system.controller
        Cx[:, :nG] += G.D_G13 @ K.D_c @ G.C_G2
        Cx[:, system.n_plant:] += G.D_G13 @ K.C_c
        D11 = D11 + G.D_G13 @ K.D_c @ G.D_G21
        D12 = D12 + G.D_G13 @ K.D_c @ G.D_G22
    return Cx, D11, D12


def empirical_invariance(system: AugmentedSystem, cert: EllipsoidCertificate, D: Polytope, *,
                         runs: int = 100, horizon: int = 1000, seed: int = 0,
                         delta_policy: str = "vertex-switching", d_policy: str = "vertex-cycling",
                         P=None, start_level: float = 1.0, output_Q=None, e_u=None,
                         tol: float = LEVEL_TOL, x0=None, max_violations: int = 100) -> InvarianceReport:
    """Drive ``system`` from the boundary of ``E_P`` and record ``x^T P x`` after every step.

    ``runs`` trajectories are simulated side by side. ``theta`` comes from
    the uncertainty of the source LFT, so the pointwise IQC holds by
    construction. A step whose level exceeds ``cert.level + tol`` is a
    violation (``tol`` defaults to ``1e-7``).

    Parameters
    ----------
    P : array_like, optional
        Ellipsoid to test instead of ``cert.P`` (for negative controls).
    output_Q : array_like, optional
        Also report ``max y^T Q y``.
    e_u : float, optional
        For a closed loop, add a random control perturbation from
        ``{-e_u, e_u}^n_u`` to the plant input at every step.
    x0 : array_like, optional
        Common initial state instead of random boundary points.
    """
    P = np.asarray(cert.P if P is None else P, dtype=float)
    src: LftSystem = system.source
    Cx, D11, D12 = _phi_map(system)
    S = np.asarray(cert.S_x, dtype=float)
    target = float(cert.level) + tol
    g = rng(seed)
    pol = _Policies(src.delta.alphas, D, delta_policy, d_policy, g, runs)
    if x0 is None:
        X = g.standard_normal((runs, system.n_x))
        q = np.einsum("ri,ij,rj->r", X, P, X)
        X = X * np.sqrt(start_level / np.where(q > 0, q, 1.0))[:, None]
    else:
        X = np.tile(np.asarray(x0, dtype=float).reshape(1, -1), (runs, 1))
    Bu = None
    if e_u is not None and isinstance(system, ClosedLoopAugmented):
        Bu = np.vstack([system.plant.B_H3, np.zeros((system.n_c, system.plant.n_u))])
    A, B1, B2 = system.A_H, system.B_H1, system.B_H2
    C1, E11, E12 = system.C_H1, system.D_H11, system.D_H12
    C2, E21, E22 = system.C_H2, system.D_H21, system.D_H22
    Qy = None if output_Q is None else np.asarray(output_Q, dtype=float)
    max_level, max_out, min_res = -np.inf, -np.inf, np.inf
    viol = []
    for k in range(horizon):
        dvec = _expand(pol.delta(), src.delta)
        d = pol.d(system.n_d)
        _, theta = _theta_from_delta(dvec, X @ Cx.T + d @ D12.T, D11)
        Xn = X @ A.T + theta @ B1.T + d @ B2.T
        if Bu is not None:
            Xn = Xn + (np.where(g.random((runs, Bu.shape[1])) < 0.5, -1.0, 1.0) * e_u) @ Bu.T
        if S.size:
            R = X @ C1.T + theta @ E11.T + d @ E12.T
            min_res = min(min_res, float(np.min(np.einsum("ri,ij,rj->r", R, S, R))))
        if Qy is not None:
            Y = X @ C2.T + theta @ E21.T + d @ E22.T
            max_out = max(max_out, float(np.max(np.einsum("ri,ij,rj->r", Y, Qy, Y))))
        lev = np.einsum("ri,ij,rj->r", Xn, P, Xn)
        max_level = max(max_level, float(lev.max()))
        for run in np.flatnonzero(lev > target)[: max(0, max_violations - len(viol))]:
            viol.append((int(run), k, float(lev[run])))
        X = Xn
    return InvarianceReport(max_level, viol, runs * horizon,
                            max_out if Qy is not None else None,
                            min_res if S.size else None)


def iqc_residual_audit(run: TrajectoryRun, S) -> float:
    """Smallest ``r(k)^T S r(k)`` over the recorded steps."""
    R = run.signals.get("r")
    if R is None or len(R) == 0:
        raise InputError("run has no recorded residuals")
    S = np.asarray(S, dtype=float)
    return float(np.min(np.einsum("ki,ij,kj->k", R, S, R)))


# ---------------------------------------------------------------------------
# LPV controller audit


@dataclass
class LpvCheckReport:
    """Worst reconstruction mismatch and IQC residual over the samples."""

    samples: int
    max_mismatch: float
    min_residual: float
    counterexample: Optional[dict] = None
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return self.max_mismatch <= self.tol and self.min_residual >= -1e-12

    def __bool__(self):
        return self.ok


def lpv_overapprox_check(ctrl: LftSystem, ref: AffineLpv, samples: int = 10_000, seed: int = 0, *,
                         scalings=None, scale: float = 1.0, tol: float = 1e-9) -> LpvCheckReport:
    """Sampled check that the LFT controller with ``theta = delta phi`` reproduces the affine controller.

    For each sample ``(x_c, y, delta)``: ``phi = (I - D11 Delta)^-1 (C1 x_c + D12 y)``,
    ``theta = Delta phi``, and the LFT update and output are compared with
    ``A(delta) x_c + B(delta) y`` and ``C(delta) x_c + D(delta) y``. The
    residual ``r = (phi, theta)`` is evaluated with the SLTV multiplier
    built from ``scalings`` (one ``(X, Y)`` per block; default identity).
    """
    G = ctrl.G
    psi = structure_factors(ctrl.delta)
    if scalings is None:
        scalings = [(np.eye(t.copies), np.zeros((t.copies, t.copies))) for t in psi.templates]
    S = psi.assemble_S(np.concatenate([t.pack(X, Y) for t, (X, Y) in zip(psi.templates, scalings)])) \
        if psi.templates else np.zeros((0, 0))
    g = rng(seed)
    alphas = ctrl.delta.alphas
    worst, min_res, cex = 0.0, np.inf, None
    for i in range(samples):
        xc = scale * g.standard_normal(G.A_G.shape[0])
        y = scale * g.standard_normal(G.B_G2.shape[1])
        dl = alphas * g.uniform(-1.0, 1.0, alphas.size)
        phi, theta = _theta_from_delta(_expand(dl[None], ctrl.delta), (G.C_G1 @ xc + G.D_G12 @ y)[None], G.D_G11)
        phi, theta = phi[0], theta[0]
        xn = G.A_G @ xc + G.B_G1 @ theta + G.B_G2 @ y
        u = G.C_G2 @ xc + G.D_G21 @ theta + G.D_G22 @ y
        A, B, C, Dd = ref.evaluate(dl)
        mis = max(np.max(np.abs(xn - (A @ xc + B @ y)), initial=0.0),
                  np.max(np.abs(u - (C @ xc + Dd @ y)), initial=0.0))
        if mis > worst:
            worst = mis
            if mis > tol:
                cex = {"x_c": xc.tolist(), "y": y.tolist(), "delta": dl.tolist(), "mismatch": float(mis)}
        if S.size:
            r, _ = residual(psi, np.zeros(psi.n_psi), phi, theta)
            min_res = min(min_res, pointwise_value(S, r))
    return LpvCheckReport(samples, float(worst), float(min_res) if S.size else float("inf"), cex, tol)


# ---------------------------------------------------------------------------
# floating-point audit


def two_sum(a, b):
    """Error-free transformation ``a + b = s + e``."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


_SPLIT = 134217729.0  # 2**27 + 1


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    """Error-free transformation ``a * b = p + e`` (Dekker, no FMA)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def dd_dot(coeffs, X):
    """Double-double ``sum_j coeffs[j] * X[..., j]``; returns ``(hi, lo)``."""
    X = np.asarray(X, dtype=float)
    hi = np.zeros(X.shape[:-1])
    lo = np.zeros(X.shape[:-1])
    for j, c in enumerate(coeffs):
        p, pe = two_prod(float(c), X[..., j])
        s, se = two_sum(hi, p)
        lo = lo + pe + se
        hi, lo = two_sum(s, lo)
    return hi, lo


def float_dot(coeffs, X):
    """Left-to-right binary64 evaluation skipping zero coefficients, as in the emitted C code."""
    X = np.asarray(X, dtype=float)
    acc = None
    for j, c in enumerate(coeffs):
        if c == 0:
            continue
        t = float(c) * X[..., j]
        acc = t if acc is None else acc + t
    return np.zeros(X.shape[:-1]) if acc is None else acc


@dataclass
class FloatAuditReport:
    """Largest observed error and the smallest slack ``bound - error`` per element."""

    steps: int
    max_error: np.ndarray
    bound: np.ndarray
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def __bool__(self):
        return self.ok


def float_error_audit(M, inputs, bounds) -> FloatAuditReport:
    """Compare binary64 evaluation of ``M @ v`` with a double-double reference.

    Parameters
    ----------
    M : array_like, shape (n_z, n_v)
        Stacked update matrix, e.g. ``[A_c B_c]``.
    inputs : array_like, shape (steps, n_v)
        Values of ``v`` at each step; each must lie in the box ``bounds``.
    bounds : array_like, shape (n_v,)
        Elementwise bounds used for :func:`affine_update_error`.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    V = np.atleast_2d(np.asarray(inputs, dtype=float))
    b = np.asarray(bounds, dtype=float)
    if np.any(np.abs(V) > b):
        raise InputError("audit inputs leave the bounding box the error bound assumes")
    rep = affine_update_error(M, None, b, None)
    errs = np.zeros((V.shape[0], M.shape[0]))
    for i, row in enumerate(M):
        f = float_dot(row, V)
        hi, lo = dd_dot(row, V)
        errs[:, i] = np.abs((f - hi) - lo)
    viol = int(np.sum(errs > rep.e[None, :]))
    return FloatAuditReport(V.shape[0], errs.max(axis=0) if len(V) else np.zeros(M.shape[0]), rep.e, viol)


def dump_csv(run: TrajectoryRun, path) -> None:
    """One row per step; header ``k, x1.., delta1.., d1.., phi1.., theta1.., r1.., y1.., u1..``."""
    keys = [k for k in ("x", "xc", "delta", "d", "phi", "theta", "r", "y", "u") if k in run.signals]
    header = ["k"]
    for k in keys:
        header += [f"{k}{i + 1}" for i in range(run.signals[k].shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for step in range(run.horizon):
            row = [step]
            for k in keys:
                row += [repr(float(v)) for v in run.signals[k][step]]
            w.writerow(row)
