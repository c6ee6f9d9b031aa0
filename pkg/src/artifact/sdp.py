"""A small dense semidefinite solver and an SDPA text bridge.

Problems have the form::

    maximize    sum_{j in obj} log det F_j(x)
    subject to  F_j(x) = F_j0 + sum_k x_k F_jk  >  0   for every j

which covers the ellipsoid synthesis problems of this package (the objective
terms are the ellipsoid shape matrices, which are themselves constrained to
be positive definite). The method is a primal log-det barrier:

* phase I minimizes a common shift ``s`` with ``F_j(x) + s I > 0`` until the
  shift becomes negative, which yields a strictly feasible point or a proof
  (up to tolerance) that none exists;
* phase II follows the central path of
  ``-(t + 1) * sum_obj log det F_j - sum_rest log det F_j`` with damped
  Newton steps until the barrier gap ``m / t`` falls below ``gap_tol``.

Dimensions in this package stay in the tens, so everything is dense.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InputError

__all__ = [
    "AffineLmi",
    "SdpResult",
    "solve_logdet",
    "solve_logdet_cvxpy",
    "lmi_from_affine_map",
    "write_sdpa",
    "read_sdpa_solution",
]


@dataclass
class AffineLmi:
    """The matrix function ``F0 + sum_k x_k Fk[k]``, required to be PSD.

    ``Fk`` has shape ``(n_vars, n, n)``. On construction the LMI is
    restricted to the joint range of its coefficient matrices, so rows and
    columns that are identically zero never block strict feasibility.
    """

    F0: np.ndarray
    Fk: np.ndarray
    name: str = ""
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        F0 = np.asarray(self.F0, dtype=float)
        Fk = np.asarray(self.Fk, dtype=float)
        if F0.ndim != 2 or F0.shape[0] != F0.shape[1]:
            raise InputError(f"LMI {self.name!r}: F0 must be square")
        n = F0.shape[0]
        if Fk.ndim != 3 or Fk.shape[1:] != (n, n):
            raise InputError(f"LMI {self.name!r}: Fk must have shape (n_vars, {n}, {n})")
        F0 = 0.5 * (F0 + F0.T)
        Fk = 0.5 * (Fk + np.transpose(Fk, (0, 2, 1)))
        stack = np.concatenate([F0[None], Fk], axis=0).transpose(1, 0, 2).reshape(n, -1)
        if n == 0 or not np.any(stack):
            self.basis = np.zeros((n, 0))
        else:
            U, sv, _ = np.linalg.svd(stack, full_matrices=False)
            rank = int(np.sum(sv > 1e-12 * sv[0]))
            self.basis = U[:, :rank]
            if rank == n:
                self.basis = np.eye(n)
        B = self.basis
        self.F0 = B.T @ F0 @ B
        self.Fk = np.einsum("ia,kij,jb->kab", B, Fk, B) if Fk.shape[0] else np.zeros((0,) + self.F0.shape)
        self.F0 = 0.5 * (self.F0 + self.F0.T)
        self.Fk = 0.5 * (self.Fk + np.transpose(self.Fk, (0, 2, 1)))

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    @property
    def n_vars(self) -> int:
        return self.Fk.shape[0]

    def value(self, x) -> np.ndarray:
        if self.n_vars == 0:
            return self.F0.copy()
        return self.F0 + np.tensordot(np.asarray(x, dtype=float), self.Fk, axes=1)


def lmi_from_affine_map(fun, n_vars: int, name: str = "") -> AffineLmi:
    """Build an :class:`AffineLmi` from an affine callable ``fun(x) -> matrix``.

    Coefficients are recovered by evaluating at zero and at each unit vector.
    """
    z = np.zeros(n_vars)
    F0 = np.asarray(fun(z), dtype=float)
    Fk = np.empty((n_vars,) + F0.shape)
    for k in range(n_vars):
        z[k] = 1.0
        Fk[k] = np.asarray(fun(z), dtype=float) - F0
        z[k] = 0.0
    return AffineLmi(F0, Fk, name=name)


@dataclass
class SdpResult:
    """Outcome of :func:`solve_logdet`.

    ``feasible`` means a strictly feasible point was found; ``x`` is then the
    final central-path point. Otherwise ``x`` is the phase-I point and
    ``worst_eig`` the best achievable minimum eigenvalue (negative).
    """

    feasible: bool
    x: np.ndarray
    objective: float
    worst_eig: float
    iterations: int
    gap: float
    status: str
    history: list = field(default_factory=list)


def _chol(M):
    c, info = linalg.lapack.dpotrf(M, lower=1, clean=1)
    return (c if info == 0 else None)


class _Barrier:
    """Weighted log-det barrier over a list of LMIs with an optional shift variable."""

    def __init__(self, lmis, shift: bool):
        self.lmis = lmis
        self.shift = shift

    def mats(self, z):
        x = z[:-1] if self.shift else z
        out = []
        for L in self.lmis:
            M = L.value(x)
            if self.shift:
                M = M + z[-1] * np.eye(L.size)
            out.append(M)
        return out

    def value(self, z, w, c):
        f = float(c @ z)
        for M, wj in zip(self.mats(z), w):
            ch = _chol(M)
            if ch is None:
                return np.inf
            f -= wj * 2.0 * np.sum(np.log(np.diag(ch)))
        return f

    def grad_hess(self, z, w, c):
        nz = z.size
        g = c.astype(float).copy()
        H = np.zeros((nz, nz))
        for L, M, wj in zip(self.lmis, self.mats(z), w):
            ch = _chol(M)
            Linv = linalg.solve_triangular(ch, np.eye(L.size), lower=True)
            Fk = L.Fk
            if self.shift:
                Fk = np.concatenate([Fk, np.eye(L.size)[None]], axis=0)
            W = Linv @ Fk @ Linv.T
            g -= wj * np.trace(W, axis1=1, axis2=2)
            Wf = W.reshape(nz, -1)
            H += wj * (Wf @ Wf.T)
        return g, H


def _newton_center(bar, z, w, c, max_iter=200, tol=1e-10, stop=None):
    """Damped Newton minimization of the barrier; returns (z, iterations)."""
    it = 0
    f = bar.value(z, w, c)
    for it in range(1, max_iter + 1):
        g, H = bar.grad_hess(z, w, c)
        scale = np.sqrt(np.maximum(np.diag(H), 1e-300))
        Hs = H / np.outer(scale, scale)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                step = -linalg.solve(Hs + 1e-14 * np.eye(len(g)), g / scale, assume_a="pos") / scale
        except (linalg.LinAlgError, ValueError):
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(-g @ step)
        if not np.isfinite(dec) or dec / 2.0 <= tol:
            break
        a = 1.0
        while a > 1e-16:
            fn = bar.value(z + a * step, w, c)
            if fn <= f - 0.25 * a * dec:
                break
            a *= 0.5
        else:
            break
        z = z + a * step
        if fn >= f - 1e-15 * max(1.0, abs(f)):
            f = fn
            break
        f = fn
        if stop is not None and stop(z):
            break
    return z, it


def solve_logdet(
    lmis: list[AffineLmi],
    n_vars: int,
    objective: list[int] | None = None,
    x0=None,
    gap_tol: float = 1e-9,
    mu: float = 20.0,
    max_outer: int = 60,
    keep_history: bool = False,
) -> SdpResult:
    """Maximize the summed log-determinants of ``lmis[objective]`` subject to all LMIs.

    Parameters
    ----------
    lmis : list of AffineLmi
        Constraints, all over the same ``n_vars`` variables.
    objective : list of int, optional
        Indices of the LMIs whose log-determinant is maximized. Empty or
        ``None`` yields an analytic-centre (pure feasibility) problem.
    x0 : array_like, optional
        Phase-I starting point (default zero).
    gap_tol : float
        Barrier gap ``m / t`` at which phase II stops.
    keep_history : bool
        Record the strictly feasible point reached after every outer
        iteration (oldest first) in ``SdpResult.history``.

    Returns
    -------
    SdpResult
    """
    objective = list(objective or [])
    lmis = [L for L in lmis]
    for L in lmis:
        if L.n_vars != n_vars:
            raise InputError(f"LMI {L.name!r} has {L.n_vars} variables, expected {n_vars}")
    active = [j for j, L in enumerate(lmis) if L.size > 0]
    obj_set = {j for j in objective if j in active}
    act = [lmis[j] for j in active]
    m = sum(L.size for L in act)
    x = np.zeros(n_vars) if x0 is None else np.asarray(x0, dtype=float).copy()
    iters = 0
    if not act:
        return SdpResult(True, x, 0.0, np.inf, 0, 0.0, "trivial")

    def min_eig(xx):
        return min(float(np.linalg.eigvalsh(L.value(xx))[0]) for L in act)

    # phase I
    lam = min_eig(x)
    if lam <= 1e-12 * max(1.0, max(np.abs(L.F0).max(initial=0.0) for L in act)):
        s_floor = 1.0 + max(0.0, -lam)
        bound = AffineLmi(np.array([[s_floor]]), np.zeros((n_vars, 1, 1)), name="shift-floor")
        bar = _Barrier(act + [bound], shift=True)
        z = np.append(x, max(0.0, -lam) + max(1.0, abs(lam)))
        c = np.zeros(n_vars + 1)
        c[-1] = 1.0
        w = np.ones(len(act) + 1)
        t = 1.0
        mI = m + 1
        target = -1e-9
        found = False
        for _ in range(max_outer):
            z, k = _newton_center(bar, z, w, t * c, stop=lambda zz: zz[-1] < target)
            iters += k
            if z[-1] < target:
                found = True
                break
            if mI / t < 1e-11:
                break
            t *= mu
        x = z[:-1]
        if not found:
            return SdpResult(False, x, -np.inf, -float(z[-1]), iters, mI / t, "infeasible")

    # phase II
    bar = _Barrier(act, shift=False)
    c = np.zeros(n_vars)
    if not obj_set:
        z, k = _newton_center(bar, x, np.ones(len(act)), c)
        iters += k
        return SdpResult(True, z, 0.0, min_eig(z), iters, 0.0, "centered", [z] if keep_history else [])
    t = 1.0
    status = "optimal"
    history = [x.copy()] if keep_history else []
    while True:
        w = np.array([1.0 + (t if j in obj_set else 0.0) for j in active])
        x_new, k = _newton_center(bar, x, w, c)
        iters += k
        if bar.value(x_new, w, c) == np.inf:
            status = "stalled"
            break
        x = x_new
        if keep_history:
            history.append(x.copy())
        if m / t <= gap_tol:
            break
        if iters > 5000:
            status = "iteration-limit"
            break
        t *= mu
    objval = 0.0
    for j in obj_set:
        sign, ld = np.linalg.slogdet(lmis[j].value(x))
        objval += ld if sign > 0 else -np.inf
    return SdpResult(True, x, objval, min_eig(x), iters, m / t, status, history)


def solve_logdet_cvxpy(lmis: list[AffineLmi], n_vars: int, objective: list[int] | None = None,
                       solver: str = "CLARABEL") -> SdpResult:
    """Same problem as :func:`solve_logdet` through cvxpy, for cross-checking.

    The returned point is the solver's (possibly boundary) optimum, so it is
    used to compare objective values, not as a certificate.
    """
    import cvxpy as cp

    objective = list(objective or [])
    x = cp.Variable(n_vars)
    cons, terms = [], []
    for j, L in enumerate(lmis):
        if L.size == 0:
            continue
        F = L.F0 + sum((x[k] * L.Fk[k] for k in range(n_vars)), start=np.zeros_like(L.F0))
        F = 0.5 * (F + F.T)
        cons.append(F >> 0)
        if j in objective:
            terms.append(cp.log_det(F))
    prob = cp.Problem(cp.Maximize(sum(terms) if terms else cp.Constant(0.0)), cons)
    prob.solve(solver=solver)
    if x.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        return SdpResult(False, np.zeros(n_vars), -np.inf, -np.inf, 0, np.nan, str(prob.status))
    xv = np.asarray(x.value, dtype=float)
    worst = min(float(np.linalg.eigvalsh(L.value(xv))[0]) for L in lmis if L.size)
    return SdpResult(True, xv, float(prob.value), worst, int(prob.solver_stats.num_iters or 0), 0.0,
                     str(prob.status))


def write_sdpa(path, lmis: list[AffineLmi], n_vars: int, comment: str = "") -> None:
    """Write the feasibility problem in sparse SDPA text format.

    SDPA's primal form is ``sum_k x_k G_k - G_0 >= 0`` with objective
    ``c^T x``; here ``G_0 = -F0`` and ``G_k = Fk`` for each (restricted)
    LMI block, and ``c = 0``. Only upper-triangular nonzeros are listed.
    """
    blocks = [L for L in lmis if L.size > 0]
    lines = [f'"{comment}"' if comment else '"feasibility problem"']
    lines.append(str(n_vars))
    lines.append(str(len(blocks)))
    lines.append(" ".join(str(L.size) for L in blocks) if blocks else "0")
    lines.append(" ".join("0" for _ in range(n_vars)) if n_vars else "")
    for b, L in enumerate(blocks, start=1):
        mats = [-L.F0] + [L.Fk[k] for k in range(n_vars)]
        for mi, M in enumerate(mats):
            iu, ju = np.triu_indices(L.size)
            for i, j in zip(iu, ju):
                v = M[i, j]
                if v != 0.0:
                    lines.append(f"{mi} {b} {i + 1} {j + 1} {float(v)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sdpa_solution(path, n_vars: int) -> np.ndarray:
    """Read a primal vector from an SDPA result file or a plain number list.

    Accepts either a file whose ``xVec`` line is followed by the vector (as
    SDPA prints it) or a file containing just ``n_vars`` numbers.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if "xVec" in text:
        tail = text.split("xVec", 1)[1]
        tail = tail.split("=", 1)[-1] if "=" in tail.split("\n", 1)[0] else tail
        body = tail.strip().split("\n", 1)[0] if tail.strip().startswith("{") else tail
    else:
        body = text
    tokens = body.replace("{", " ").replace("}", " ").replace(",", " ").split()
    vals = []
    for tok in tokens:
        try:
            vals.append(float(tok))
        except ValueError:
            break
        if len(vals) == n_vars:
            break
    if len(vals) != n_vars:
        raise InputError(f"expected {n_vars} values in solution file, found {len(vals)}")
    return np.array(vals)
