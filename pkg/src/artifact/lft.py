"""Uncertain systems as linear fractional transformations.

An uncertain discrete-time system is the feedback interconnection of a known
LTI system ``G`` with a structured, block-diagonal uncertainty ``Delta``::

    x(k+1) = A_G x + B_G1 theta + B_G2 d [+ B_G3 u]
    phi    = C_G1 x + D_G11 theta + D_G12 d [+ D_G13 u]
    y      = C_G2 x + D_G21 theta + D_G22 d
    theta  = Delta(k) phi

Each uncertainty block is a repeated scalar ``delta_j(k) I`` with
``|delta_j(k)| <= alpha_j`` (slowly or arbitrarily time-varying).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionError, IllPosedError, InputError

__all__ = [
    "StateSpacePartition",
    "SltvBlock",
    "UncertaintyStructure",
    "LftSystem",
    "LftDims",
    "ValidationReport",
    "EvaluatedSystem",
    "validate",
    "eval_at_delta",
    "affine_to_lft",
    "AffineLpv",
    "wellposedness_ratio",
]

WELLPOSED_TOL = 1e-8
GRID_POINTS = 9
MAX_GRID = 100_000


def _arr(M) -> Optional[np.ndarray]:
    if M is None:
        return None
    a = np.array(M, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    return a


@dataclass(frozen=True)
class StateSpacePartition:
    """Block matrices of the nominal system ``G``.

    Absent channels are given as arrays with a zero dimension. The control
    channel (``B_G3``, ``D_G13``, ``D_G23``) is optional; when ``B_G3`` is
    ``None`` the system has no control input.
    """

    A_G: np.ndarray
    B_G1: np.ndarray
    B_G2: np.ndarray
    C_G1: np.ndarray
    D_G11: np.ndarray
    D_G12: np.ndarray
    C_G2: np.ndarray
    D_G21: np.ndarray
    D_G22: np.ndarray
    B_G3: Optional[np.ndarray] = None
    D_G13: Optional[np.ndarray] = None
    D_G23: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if self.B_G3 is not None:
            n_u = self.B_G3.shape[1] if self.B_G3.ndim == 2 else 0
            if self.D_G13 is None:
                object.__setattr__(self, "D_G13", np.zeros((self.C_G1.shape[0], n_u)))
            if self.D_G23 is None:
                object.__setattr__(self, "D_G23", np.zeros((self.C_G2.shape[0], n_u)))

    @classmethod
    def from_blocks(cls, A, B1=None, B2=None, C1=None, D11=None, D12=None, C2=None,
                    D21=None, D22=None, B3=None, D13=None, D23=None, *,
                    n_theta=None, n_d=None, n_y=None, n_u=None):
        """Build a partition, filling omitted blocks with correctly shaped zeros."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]

        def width(M, default):
            return np.atleast_2d(M).shape[1] if M is not None else default

        def height(M, default):
            return np.atleast_2d(M).shape[0] if M is not None else default

        nt = n_theta if n_theta is not None else width(B1, height(C1, 0))
        nd = n_d if n_d is not None else width(B2, width(D22, 0))
        ny = n_y if n_y is not None else height(C2, 0)
        nu = n_u if n_u is not None else width(B3, None)

        def z(M, r, c):
            if M is None:
                return np.zeros((r, c))
            return np.asarray(M, dtype=float).reshape(r, c)

        return cls(
            z(A, n, n), z(B1, n, nt), z(B2, n, nd), z(C1, nt, n), z(D11, nt, nt), z(D12, nt, nd),
            z(C2, ny, n), z(D21, ny, nt), z(D22, ny, nd),
            None if nu is None else z(B3, n, nu),
            None if nu is None else z(D13, nt, nu),
            None if nu is None else z(D23, ny, nu),
        )

    @property
    def has_control(self) -> bool:
        return self.B_G3 is not None


@dataclass(frozen=True)
class SltvBlock:
    """A repeated scalar ``delta(k) I_copies`` with ``|delta(k)| <= alpha``."""

    alpha: float
    copies: int
    kind: str = "SLTV"

    def __post_init__(self):
        if self.kind != "SLTV":
            raise InputError(f"unsupported uncertainty kind {self.kind!r}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InputError(f"uncertainty bound must be finite and > 0, got {self.alpha}")
        if int(self.copies) != self.copies or self.copies < 0:
            raise InputError(f"copies must be a nonnegative integer, got {self.copies}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "copies", int(self.copies))


@dataclass(frozen=True)
class UncertaintyStructure:
    """Ordered list of :class:`SltvBlock`; ``Delta = blkdiag(delta_j I)``."""

    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def n_theta(self) -> int:
        return sum(b.copies for b in self.blocks)

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([b.alpha for b in self.blocks])

    def offsets(self) -> list[int]:
        out, o = [], 0
        for b in self.blocks:
            out.append(o)
            o += b.copies
        return out

    def delta_matrix(self, delta) -> np.ndarray:
        """``blkdiag(delta_j I_{c_j})`` for a parameter vector ``delta``."""
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        if d.shape != (self.m,):
            raise DimensionError(f"expected {self.m} uncertainty values, got shape {d.shape}")
        return np.diag(np.repeat(d, [b.copies for b in self.blocks])) if self.m else np.zeros((0, 0))

    def admissible(self, delta, tol: float = 0.0) -> bool:
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        return bool(np.all(np.abs(d) <= self.alphas + tol))


class LftDims(NamedTuple):
    n_G: int
    n_phi: int
    n_theta: int
    n_d: int
    n_y: int
    n_u: int


@dataclass(frozen=True)
class LftSystem:
    """The pair ``(G, Delta)``."""

    G: StateSpacePartition
    delta: UncertaintyStructure
    name: str = ""

    @property
    def dims(self) -> LftDims:
        G = self.G
        n_u = G.B_G3.shape[1] if G.has_control else 0
        return LftDims(G.A_G.shape[0], G.C_G1.shape[0], G.B_G1.shape[1], G.B_G2.shape[1],
                       G.C_G2.shape[0], n_u)


@dataclass
class ValidationReport:
    """Outcome of :func:`validate`; ``failures`` is empty iff every check passed."""

    failures: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    worst_ratio: float = float("inf")
    worst_delta: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self):
        if self.failures:
            msg = "; ".join(self.failures)
            if any(f.startswith("well-posedness") for f in self.failures):
                raise IllPosedError(msg, delta=self.worst_delta)
            raise DimensionError(msg)


def _dimension_failures(sys: LftSystem) -> list[str]:
    G = sys.G
    out = []
    A = G.A_G
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return [f"dimension: A_G must be square, got {A.shape}"]
    n = A.shape[0]
    nt, nphi = G.B_G1.shape[1] if G.B_G1.ndim == 2 else -1, G.C_G1.shape[0] if G.C_G1.ndim == 2 else -1
    nd = G.B_G2.shape[1] if G.B_G2.ndim == 2 else -1
    ny = G.C_G2.shape[0] if G.C_G2.ndim == 2 else -1
    expect = {
        "B_G1": (n, nt), "B_G2": (n, nd), "C_G1": (nphi, n), "D_G11": (nphi, nt),
        "D_G12": (nphi, nd), "C_G2": (ny, n), "D_G21": (ny, nt), "D_G22": (ny, nd),
    }
    if G.has_control:
        nu = G.B_G3.shape[1] if G.B_G3.ndim == 2 else -1
        expect.update({"B_G3": (n, nu), "D_G13": (nphi, nu), "D_G23": (ny, nu)})
    for name, shape in expect.items():
        M = getattr(G, name)
        if M.ndim != 2 or M.shape != shape:
            out.append(f"dimension: {name} has shape {M.shape}, expected {shape}")
    if nt != nphi:
        out.append(f"dimension: n_theta={nt} differs from n_phi={nphi}")
    if sys.delta.n_theta != nt:
        out.append(f"dimension: uncertainty copies sum to {sys.delta.n_theta}, B_G1 has {nt} columns")
    return out


def wellposedness_ratio(D11: np.ndarray, Delta: np.ndarray) -> float:
    """``|det(I - D11 Delta)|`` normalized by the product of its row norms (Hadamard bound)."""
    M = np.eye(D11.shape[0]) - D11 @ Delta
    if M.shape[0] == 0:
        return 1.0
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        return 0.0
    sign, logdet = np.linalg.slogdet(M / norms[:, None])
    return 0.0 if sign == 0 else float(np.exp(logdet))


def _sample_points(alphas: np.ndarray):
    m = alphas.size
    for signs in itertools.product((-1.0, 1.0), repeat=m):
        yield "vertex", np.array(signs) * alphas
    grids = [np.linspace(-a, a, GRID_POINTS) for a in alphas]
    if GRID_POINTS ** m <= MAX_GRID:
        for pt in itertools.product(*grids):
            yield "grid", np.array(pt)
    else:
        # tensor grid too large: axis sweeps plus a fixed pseudo-random cloud
        for j in range(m):
            for v in grids[j]:
                p = np.zeros(m)
                p[j] = v
                yield "grid", p
        rng = np.random.Generator(np.random.Philox(0))
        for _ in range(MAX_GRID):
            yield "grid", rng.uniform(-alphas, alphas)


def validate(sys: LftSystem) -> ValidationReport:
    """Check dimensions, finiteness, zero u-to-y feedthrough and well-posedness.

    Well-posedness is certified at all ``2**m`` vertex assignments of the
    uncertainty and on a 9-point-per-parameter tensor grid, each requiring
    a normalized ``|det(I - D_G11 Delta)| >= 1e-8``.

    Returns
    -------
    ValidationReport
        Never raises for bad data; failures are listed in the report.
    """
    rep = ValidationReport()
    G = sys.G
    dim_fail = _dimension_failures(sys)
    rep.checks["dimensions"] = not dim_fail
    rep.failures.extend(dim_fail)
    finite = all(np.all(np.isfinite(getattr(G, f))) for f in G.__dataclass_fields__ if getattr(G, f) is not None)
    rep.checks["finite"] = finite
    if not finite:
        rep.failures.append("finite: system matrices contain non-finite entries")
    if G.has_control and not dim_fail:
        zero_ff = not np.any(G.D_G23)
        rep.checks["zero_feedthrough"] = zero_ff
        if not zero_ff:
            rep.failures.append("feedthrough: D_G23 must be zero (no direct u-to-y feedthrough)")
    if dim_fail or not finite:
        return rep
    D11 = G.D_G11
    worst, worst_d = np.inf, None
    bad = None
    if D11.size and np.any(D11):
        for kind, d in _sample_points(sys.delta.alphas):
            r = wellposedness_ratio(D11, sys.delta.delta_matrix(d))
            if r < worst:
                worst, worst_d = r, d
            if r < WELLPOSED_TOL and bad is None:
                bad = (kind, d)
                break
    else:
        worst = 1.0
    rep.worst_ratio = float(worst)
    rep.worst_delta = worst_d
    rep.checks["well_posed"] = bad is None
    if bad is not None:
        rep.worst_delta = bad[1]
        rep.failures.append(
            f"well-posedness: I - D_G11*Delta is singular at {bad[0]} delta={np.array2string(bad[1])}"
        )
    return rep


class EvaluatedSystem(NamedTuple):
    """State-space matrices of the uncertain system at a fixed parameter value."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


def _require_dims(sys: LftSystem):
    fails = _dimension_failures(sys)
    if fails:
        raise DimensionError("; ".join(fails))


def eval_at_delta(sys: LftSystem, delta, *, control: bool = False, check_bounds: bool = True):
    """Evaluate ``(A(delta), B(delta), C(delta), D(delta))``.

    Parameters
    ----------
    sys : LftSystem
    delta : array_like, shape (m,)
        One value per uncertainty block.
    control : bool
        Also return the control-input matrices ``(B_u(delta), D_u(delta))``
        as a second tuple.
    check_bounds : bool
        Reject values outside ``|delta_j| <= alpha_j``.

    Returns
    -------
    EvaluatedSystem, or ``(EvaluatedSystem, (B_u, D_u))`` when ``control``.

    Notes
    -----
    ``delta = 0`` returns the nominal blocks themselves (bit-identical copies).
    """
    _require_dims(sys)
    G = sys.G
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    if d.shape != (sys.delta.m,):
        raise DimensionError(f"expected {sys.delta.m} uncertainty values, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InputError("uncertainty values must be finite")
    if check_bounds and not sys.delta.admissible(d):
        raise InputError(f"delta={d} violates the bounds {sys.delta.alphas}")
    if control and not G.has_control:
        raise InputError("system has no control channel")
    if not np.any(d) or G.B_G1.shape[1] == 0:
        ev = EvaluatedSystem(G.A_G.copy(), G.B_G2.copy(), G.C_G2.copy(), G.D_G22.copy())
        if control:
            return ev, (G.B_G3.copy(), G.D_G23.copy())
        return ev
    Delta = sys.delta.delta_matrix(d)
    n = Delta.shape[0]
    M = np.eye(n) - G.D_G11 @ Delta
    if wellposedness_ratio(G.D_G11, Delta) < WELLPOSED_TOL:
        raise IllPosedError(f"I - D_G11*Delta is singular at delta={d}", delta=d)
    K = Delta @ np.linalg.solve(M, np.eye(n))
    ev = EvaluatedSystem(
        G.A_G + G.B_G1 @ K @ G.C_G1,
        G.B_G2 + G.B_G1 @ K @ G.D_G12,
        G.C_G2 + G.D_G21 @ K @ G.C_G1,
        G.D_G22 + G.D_G21 @ K @ G.D_G12,
    )
    if control:
        return ev, (G.B_G3 + G.B_G1 @ K @ G.D_G13, G.D_G23 + G.D_G21 @ K @ G.D_G13)
    return ev


def _as_list(Ms, m, shape, name):
    if Ms is None:
        return [np.zeros(shape) for _ in range(m + 1)]
    Ms = [np.atleast_2d(np.asarray(M, dtype=float)) if np.size(M) else np.zeros(shape) for M in Ms]
    if len(Ms) != m + 1:
        raise DimensionError(f"{name}: expected {m + 1} matrices (nominal plus one per parameter), got {len(Ms)}")
    for j, M in enumerate(Ms):
        if M.shape != shape:
            raise DimensionError(f"{name}[{j}] has shape {M.shape}, expected {shape}")
    return Ms


def affine_to_lft(A, B=None, C=None, D=None, alphas=None, *, Bu=None, rank_tol: float = 1e-12,
                  name: str = "") -> LftSystem:
    """Lift an affine parameter-dependent system into LFT form.

    The system is ``A(delta) = A[0] + sum_j delta_j A[j]`` and likewise for
    ``B`` (disturbance input), ``C``, ``D`` and the optional control input
    ``Bu``. Each parameter contributes one SLTV block whose copy count is the
    numerical rank of ``[[A_j, B_j, Bu_j], [C_j, D_j, 0]]``.

    Parameters
    ----------
    A : sequence of (n, n) arrays
        ``[A0, A1, ..., Am]``.
    B, C, D, Bu : sequences of arrays, optional
        Same length as ``A``; omitted ones are zero with zero-width channels.
    alphas : sequence of float
        Bounds ``|delta_j| <= alpha_j``, one per parameter.
    rank_tol : float
        Relative singular-value cutoff for the rank factorization.

    Returns
    -------
    LftSystem
        With ``D_G11 = 0``, so it is well-posed for every ``delta``.
    """
    A = list(A)
    m = len(A) - 1
    if m < 1:
        raise InputError("affine_to_lft needs a nominal matrix and at least one parameter matrix")
    n = np.atleast_2d(A[0]).shape[0]
    A = _as_list(A, m, (n, n), "A")

    def infer(Ms, axis, default):
        if Ms is None:
            return default
        return np.atleast_2d(np.asarray(Ms[0], dtype=float)).shape[axis] if np.size(Ms[0]) else default

    n_d = infer(B, 1, infer(D, 1, 0))
    n_y = infer(C, 0, infer(D, 0, 0))
    n_u = infer(Bu, 1, 0)
    B = _as_list(B, m, (n, n_d), "B")
    C = _as_list(C, m, (n_y, n), "C")
    D = _as_list(D, m, (n_y, n_d), "D")
    Bus = _as_list(Bu, m, (n, n_u), "Bu")
    if alphas is None:
        alphas = np.ones(m)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if alphas.shape != (m,):
        raise DimensionError(f"expected {m} bounds, got {alphas.shape}")
    Ls, Rs, blocks = [], [], []
    for j in range(1, m + 1):
        top = np.hstack([A[j], B[j], Bus[j]])
        bot = np.hstack([C[j], D[j], np.zeros((n_y, n_u))])
        Mj = np.vstack([top, bot])
        if not np.any(Mj):
            r = 0
            U = np.zeros((n + n_y, 0))
            s = np.zeros(0)
            Vt = np.zeros((0, n + n_d + n_u))
        else:
            U, s, Vt = np.linalg.svd(Mj, full_matrices=False)
            r = int(np.sum(s > rank_tol * s[0]))
        Ls.append(U[:, :r] * s[:r])
        Rs.append(Vt[:r])
        blocks.append(SltvBlock(alphas[j - 1], r))
    L = np.hstack(Ls) if Ls else np.zeros((n + n_y, 0))
    R = np.vstack(Rs) if Rs else np.zeros((0, n + n_d + n_u))
    nt = L.shape[1]
    G = StateSpacePartition(
        A_G=A[0], B_G1=L[:n], B_G2=B[0], C_G1=R[:, :n], D_G11=np.zeros((nt, nt)),
        D_G12=R[:, n:n + n_d], C_G2=C[0], D_G21=L[n:], D_G22=D[0],
        B_G3=Bus[0] if Bu is not None else None,
        D_G13=R[:, n + n_d:] if Bu is not None else None,
        D_G23=np.zeros((n_y, n_u)) if Bu is not None else None,
    )
    return LftSystem(G, UncertaintyStructure(blocks), name=name)



class AffineLpv:
    """Affine parameter-dependent system ``(A, B, C, D)(delta) = M0 + sum_j delta_j Mj``.

    Used for gain-scheduled controllers: ``B`` maps the measurement ``y``
    and ``C``, ``D`` produce the control input.
    """

    def __init__(self, A, B, C, D, alphas):
        A = list(A)
        self.m = len(A) - 1
        if self.m < 1:
            raise InputError("an affine family needs a nominal matrix and at least one parameter matrix")
        n = np.atleast_2d(A[0]).shape[0]
        ny = np.atleast_2d(B[0]).shape[1]
        nu = np.atleast_2d(C[0]).shape[0]
        self.A = _as_list(A, self.m, (n, n), "A")
        self.B = _as_list(B, self.m, (n, ny), "B")
        self.C = _as_list(C, self.m, (nu, n), "C")
        self.D = _as_list(D, self.m, (nu, ny), "D")
        self.alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        if self.alphas.shape != (self.m,) or np.any(~(self.alphas > 0)):
            raise DimensionError(f"expected {self.m} positive bounds")

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_in(self) -> int:
        return self.B[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.C[0].shape[0]

    def evaluate(self, delta):
        """``(A, B, C, D)`` at ``delta``."""
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        if d.shape != (self.m,):
            raise DimensionError(f"delta must have {self.m} entries")
        out = []
        for Ms in (self.A, self.B, self.C, self.D):
            M = Ms[0].copy()
            for j in range(self.m):
                M = M + d[j] * Ms[j + 1]
            out.append(M)
        return tuple(out)

    def to_lft(self, name: str = "") -> LftSystem:
        return affine_to_lft(self.A, self.B, self.C, self.D, self.alphas, name=name)
