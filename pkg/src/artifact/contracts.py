"""Emission of ACSL-annotated C sources for invariant and closed-loop contracts.

Two layouts are produced:

* ``local``: ``updateState`` / ``updateOutput`` functions for an augmented
  system ``H`` with one behavior per arithmetic model;
* ``ghost``: the executable controller with the plant, ``theta`` and ``d``
  passed as ghost parameters and the plant update written as ACSL logic
  functions.

Every coefficient is written with ``repr(float)``, the shortest decimal that
reads back to the same binary64 value. Quadratic forms use the doubled
off-diagonal coefficient ``2 * M_ij``. The output depends only on the input
values, so repeated emission is byte-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augmentation import AugmentedSystem, ClosedLoopAugmented
from .errors import ContractError
from .numerics import symmetrize
from .synthesis import EllipsoidCertificate, OutputCertificate

__all__ = [
    "ContractSpec",
    "EmittedSource",
    "VerifyReport",
    "fmt",
    "gen_predicates",
    "gen_local_contracts",
    "gen_ghost_closed_loop",
    "generate",
    "structural_verify",
    "parse_expression",
    "Poly",
    "evaluate_predicate",
    "DEFAULT_NAMES",
]

DEFAULT_NAMES = {
    "state_type": "state",
    "output_type": "output",
    "input_type": "control_input",
    "update_state": "updateState",
    "update_output": "updateOutput",
    "controller": "controller",
}
_PREDICATES = ("state_ellip", "output_ellip", "pwIQC_state", "pwIQC_output")
_IDENT = re.compile(r"[A-Za-z_]\w*\Z")


def fmt(v) -> str:
    """Shortest round-trip decimal of a binary64 value."""
    v = float(v)
    if not np.isfinite(v):
        raise ContractError(f"non-finite coefficient {v}")
    return repr(v + 0.0)


# ---------------------------------------------------------------------------
# specification


@dataclass
class ContractSpec:
    """Everything needed to emit one annotated source.

    Parameters
    ----------
    mode : {"local", "ghost"}
    model : {"real", "float"}
    system : AugmentedSystem
        ``H`` for local mode; the :class:`ClosedLoopAugmented` system for
        ghost mode.
    cert : EllipsoidCertificate
        State (or closed-loop state) certificate.
    dbar : array_like
        Half-widths of the disturbance box.
    output_cert : OutputCertificate, optional
        Required in local mode when ``H`` has outputs.
    alpha_x, alpha_y : float, optional
        Shrink factors of the float behaviors in local mode.
    alpha, e_u : float, optional
        Closed-loop shrink factor and control perturbation in ghost mode.
    names : dict, optional
        Overrides for :data:`DEFAULT_NAMES`.
    """

    mode: str
    model: str
    system: AugmentedSystem
    cert: EllipsoidCertificate
    dbar: np.ndarray
    output_cert: Optional[OutputCertificate] = None
    alpha_x: Optional[float] = None
    alpha_y: Optional[float] = None
    alpha: Optional[float] = None
    e_u: Optional[float] = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("local", "ghost"):
            raise ContractError(f"mode must be 'local' or 'ghost', got {self.mode!r}")
        if self.model not in ("real", "float"):
            raise ContractError(f"model must be 'real' or 'float', got {self.model!r}")
        self.dbar = np.asarray(self.dbar, dtype=float).reshape(-1)
        if self.dbar.size != self.system.n_d or np.any(self.dbar < 0):
            raise ContractError(f"dbar must hold {self.system.n_d} nonnegative half-widths")
        if self.cert.P.shape != (self.system.n_x, self.system.n_x):
            raise ContractError("certificate dimension does not match the system")
        if self.mode == "ghost":
            if not isinstance(self.system, ClosedLoopAugmented):
                raise ContractError("ghost mode needs a closed-loop system and controller")
            if self.model == "float" and (self.alpha is None or self.e_u is None):
                raise ContractError("float ghost contracts need alpha and e_u")
        else:
            if self.system.n_y and self.output_cert is None:
                raise ContractError("local contracts need an output certificate")
            if self.model == "float":
                if self.alpha_x is None or (self.system.n_y and self.alpha_y is None):
                    raise ContractError("float local contracts need alpha_x and alpha_y")
        for a in (self.alpha_x, self.alpha_y, self.alpha):
            if a is not None and not (0 < a <= 1):
                raise ContractError(f"shrink factor {a} outside (0, 1]")
        if self.e_u is not None and not (np.isfinite(self.e_u) and self.e_u >= 0):
            raise ContractError("e_u must be finite and nonnegative")
        names = dict(DEFAULT_NAMES)
        unknown = set(self.names) - set(DEFAULT_NAMES)
        if unknown:
            raise ContractError(f"unknown name keys {sorted(unknown)}")
        names.update(self.names)
        vals = list(names.values())
        bad = [v for v in vals if not _IDENT.match(v)]
        if bad:
            raise ContractError(f"invalid C identifiers {bad}")
        clash = {v for v in vals if vals.count(v) > 1} | (set(vals) & set(_PREDICATES))
        if clash:
            raise ContractError(f"name collision: {sorted(clash)}")
        self.names = names


@dataclass
class EmittedSource:
    """Generated text plus a manifest of what it declares."""

    text: str
    manifest: dict

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.text)


# ---------------------------------------------------------------------------
# text helpers


def _vars(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


def _linear(row, names) -> str:
    terms = [f"{fmt(c)} * {v}" for c, v in zip(row, names) if c != 0]
    return " + ".join(terms) if terms else "0.0"


def _quadratic(M, names) -> str:
    M = symmetrize(np.asarray(M, dtype=float))
    terms = []
    for i in range(len(names)):
        for j in range(i, len(names)):
            c = M[i, j] if i == j else 2.0 * M[i, j]
            if c != 0:
                terms.append(f"{fmt(c)} * {names[i]} * {names[j]}")
    return " + ".join(terms) if terms else "0.0"


def _predicate(name, M, formals, rel) -> str:
    args = ", ".join(f"real {v}" for v in formals)
    if rel == "ellip":
        return f"//@ predicate {name}({args}, real lambda) = {_quadratic(M, formals)} <= lambda;"
    return f"//@ predicate {name}({args}) = {_quadratic(M, formals)} >= 0;"


def _box(dnames, dbar, kw) -> list[str]:
    return [f"{kw} {fmt(-b)} <= {v} <= {fmt(b)};" for v, b in zip(dnames, dbar)]


def _rows(M, names) -> list[str]:
    return [_linear(row, names) for row in np.atleast_2d(M)]


def gen_predicates(cert: EllipsoidCertificate, output_cert: Optional[OutputCertificate] = None,
                   S_x=None, S_y=None, names: Optional[dict] = None) -> list[str]:
    """ACSL predicate definitions ``state_ellip``, ``output_ellip``, ``pwIQC_state``, ``pwIQC_output``.

    ``S_x`` and ``S_y`` default to the multipliers stored in the certificates.
    ``names`` maps predicate names to replacements (collisions are errors).
    """
    ren = {p: p for p in _PREDICATES}
    if names:
        ren.update(names)
    if len(set(ren.values())) != len(ren):
        raise ContractError(f"predicate name collision: {ren}")
    P = np.asarray(cert.P, dtype=float)
    out = [_predicate(ren["state_ellip"], P, _vars("x", P.shape[0]), "ellip")]
    if output_cert is not None:
        Q = np.asarray(output_cert.Q, dtype=float)
        out.append(_predicate(ren["output_ellip"], Q, _vars("y", Q.shape[0]), "ellip"))
    Sx = cert.S_x if S_x is None else S_x
    Sx = np.asarray(Sx, dtype=float)
    out.append(_predicate(ren["pwIQC_state"], Sx, _vars("r", Sx.shape[0]), "iqc"))
    if output_cert is not None or S_y is not None:
        Sy = np.asarray(output_cert.S_y if S_y is None else S_y, dtype=float)
        out.append(_predicate(ren["pwIQC_output"], Sy, _vars("r", Sy.shape[0]), "iqc"))
    return out


def _typedef(name, fields) -> str:
    body = ", ".join(fields) if fields else "char _unused"
    return f"typedef struct {{ double {body}; }} {name};"


# ---------------------------------------------------------------------------
# local layout


def gen_local_contracts(spec: ContractSpec) -> EmittedSource:
    """``updateState`` and ``updateOutput`` with real (and float) behaviors."""
    if spec.mode != "local":
        raise ContractError("gen_local_contracts needs a local-mode spec")
    H, nm = spec.system, spec.names
    nH, nt, nd, ny = H.n_x, H.n_theta, H.n_d, H.n_y
    xs, ys = _vars("x", nH), _vars("y", ny)
    th, ds = _vars("theta", nt), _vars("d", nd)
    px = [f"x->{v}" for v in xs]
    py = [f"y->{v}" for v in ys]
    pre = [f"pre_{v}" for v in xs]
    old = [f"\\old({p})" for p in px]
    float_model = spec.model == "float"

    L = ["#include <stddef.h>", "", _typedef(nm["state_type"], xs)]
    if ny:
        L.append(_typedef(nm["output_type"], ys))
    L.append("")
    for p in gen_predicates(spec.cert, spec.output_cert if ny else None):
        L += [p, ""]

    sig_extra = "".join(f", double {v}" for v in th + ds)
    r_rows = _rows(np.hstack([H.C_H1, H.D_H11, H.D_H12]), px + th + ds)
    behaviors = [("polytope_input_real_model", "1")]
    if float_model:
        behaviors.append(("polytope_input_float_model", fmt(spec.alpha_x)))
    L.append("/*@")
    L.append("requires \\valid(x);")
    L.append(f"requires \\separated({', '.join(f'&({p})' for p in px)});")
    L.append(f"requires pwIQC_state({', '.join(r_rows)});")
    L.append("assigns *x;")
    for bname, lev in behaviors:
        L += ["", f"behavior {bname}:"]
        L += ["    " + s for s in _box(ds, spec.dbar, "assumes")]
        L.append(f"    ensures state_ellip({', '.join(old)}, 1) ==> state_ellip({', '.join(px)}, {lev});")
    L.append("*/")
    L.append(f"void {nm['update_state']}({nm['state_type']} *x{sig_extra}) {{")
    L.append(f"    double {', '.join(f'{a} = {b}' for a, b in zip(pre, px))};")
    for p, e in zip(px, _rows(np.hstack([H.A_H, H.B_H1, H.B_H2]), pre + th + ds)):
        L.append(f"    {p} = {e};")
    L += ["}", ""]
    functions = [nm["update_state"]]

    if ny:
        ob = [("polytope_input_real_model", "1")]
        if float_model:
            ob.append(("polytope_input_float_model", fmt(spec.alpha_y)))
        L.append("/*@")
        L.append("requires \\valid(x);")
        L.append("requires \\valid(y);")
        L.append(f"requires \\separated({', '.join(f'&({p})' for p in px + py)});")
        L.append(f"requires pwIQC_output({', '.join(r_rows)});")
        L.append("assigns *y;")
        for bname, lev in ob:
            L += ["", f"behavior {bname}:"]
            L += ["    " + s for s in _box(ds, spec.dbar, "assumes")]
            L.append(f"    ensures state_ellip({', '.join(old)}, 1) ==> output_ellip({', '.join(py)}, {lev});")
        L.append("*/")
        L.append(f"void {nm['update_output']}({nm['state_type']} *x, {nm['output_type']} *y{sig_extra}) {{")
        L.append(f"    double {', '.join(f'{a} = {b}' for a, b in zip(pre, px))};")
        for p, e in zip(py, _rows(np.hstack([H.C_H2, H.D_H21, H.D_H22]), pre + th + ds)):
            L.append(f"    {p} = {e};")
        L += ["}", ""]
        functions.append(nm["update_output"])

    preds = [{"name": "state_ellip", "arity": nH + 1}, {"name": "pwIQC_state", "arity": H.n_r}]
    if ny:
        preds[1:1] = [{"name": "output_ellip", "arity": ny + 1}]
        preds.append({"name": "pwIQC_output", "arity": H.n_r})
    manifest = {"mode": "local", "model": spec.model, "predicates": preds,
                "functions": functions, "logic": [], "ghost": []}
    return EmittedSource("\n".join(L), manifest)


# ---------------------------------------------------------------------------
# ghost layout


def gen_ghost_closed_loop(spec: ContractSpec) -> EmittedSource:
    """Controller function with ghost plant parameters and closed-loop contract."""
    if spec.mode != "ghost":
        raise ContractError("gen_ghost_closed_loop needs a ghost-mode spec")
    CL: ClosedLoopAugmented = spec.system
    H, K, nm = CL.plant, CL.controller, spec.names
    nH, nc, nt, nd, ny, nu = H.n_x, K.n_c, H.n_theta, H.n_d, H.n_y, H.n_u
    xs, th, ds = _vars("x", nH), _vars("theta", nt), _vars("d", nd)
    ys, us = _vars("y", ny), _vars("u", nu)
    xc = [f"xc->x{i + 1}" for i in range(nc)]
    uu = [f"u->u{i + 1}" for i in range(nu)]
    pre_xc = [f"pre_xc{i + 1}" for i in range(nc)]
    upd = _vars("update_x", nH)
    nxs = _vars("nx", nH)
    float_model = spec.model == "float"

    L = ["#include <stddef.h>", "", _typedef(nm["state_type"], _vars("x", nc)),
         _typedef(nm["input_type"], us), ""]
    for p in gen_predicates(spec.cert):
        L += [p, ""]
    formals = [f"pre_x{i + 1}" for i in range(nH)] + ds + th + us
    logic_rows = _rows(np.hstack([H.A_H, H.B_H2, H.B_H1, H.B_H3]), formals)
    for name, e in zip(upd, logic_rows):
        L.append("/*@")
        L.append(f"  logic real {name}({', '.join(f'real {v}' for v in formals)}) =")
        L.append(f"    {e};")
        L += ["*/", ""]

    r_rows = _rows(np.hstack([CL.C_H1, CL.D_H11, CL.D_H12]), xs + xc + th + ds)
    y_rows = _rows(np.hstack([H.C_H2, H.D_H21, H.D_H22]), xs + th + ds)
    at = [f"\\at({v}, Pre)" for v in xs]

    def lets(u_args):
        out = []
        for n, f in zip(nxs, upd):
            out.append(f"\\let {n} = {f}({', '.join(at + ds + th + u_args)});")
        return out

    L.append("/*@")
    L.append("    requires \\valid(xc) && \\valid(u);")
    L += ["    " + s for s in _box(ds, spec.dbar, "requires")]
    L.append(f"    requires \\separated({', '.join(f'&({p})' for p in xc + uu)});")
    L.append(f"    requires state_ellip({', '.join(xs + xc)}, 1);")
    L.append(f"    requires pwIQC_state({', '.join(r_rows)});")
    for y, e in zip(ys, y_rows):
        L.append(f"    requires {y} == {e};")
    L.append("    assigns *xc, *u;")
    L.append("")
    L.append("    ensures " + "\n        ".join(lets(uu) + [f"state_ellip({', '.join(nxs + xc)}, 1);"]))
    if float_model:
        ls = [f"l_{i + 1}" for i in range(nu)]
        eu = fmt(spec.e_u)
        pert = [f"{u} + {l} * {eu}" for u, l in zip(uu, ls)]
        guard = " ==> ".join(f"-1 <= {l} <= 1" for l in ls)
        head = " ".join(f"\\forall real {l};" for l in ls)
        body = lets(pert) + [(f"{guard} ==> " if guard else "") + f"state_ellip({', '.join(nxs + xc)}, {fmt(spec.alpha)});"]
        L.append("")
        L.append("    ensures " + (head + "\n        " if head else "") + "\n        ".join(body))
    L.append("*/")
    ghost = [f"double {v}" for v in xs + th + ds]
    params = [f"{nm['state_type']} *xc", f"{nm['input_type']} *u"] + [f"double {y}" for y in ys]
    L.append(f"void {nm['controller']}({', '.join(params)}) /*@ ghost ({', '.join(ghost)}) */ {{")
    if nc:
        L.append(f"    double {', '.join(f'{a} = {b}' for a, b in zip(pre_xc, xc))};")
    for p, e in zip(uu, _rows(np.hstack([K.C_c, K.D_c]), pre_xc + ys)):
        L.append(f"    {p} = {e};")
    for p, e in zip(xc, _rows(np.hstack([K.A_c, K.B_c]), pre_xc + ys)):
        L.append(f"    {p} = {e};")
    L += ["}", ""]
    manifest = {"mode": "ghost", "model": spec.model,
                "predicates": [{"name": "state_ellip", "arity": nH + nc + 1},
                               {"name": "pwIQC_state", "arity": CL.n_r}],
                "functions": [nm["controller"]], "logic": upd, "ghost": xs + th + ds}
    return EmittedSource("\n".join(L), manifest)


def generate(spec: ContractSpec) -> EmittedSource:
    return gen_local_contracts(spec) if spec.mode == "local" else gen_ghost_closed_loop(spec)


# ---------------------------------------------------------------------------
# expression parser


class Poly:
    """Polynomial with float coefficients keyed by sorted variable tuples."""

    def __init__(self, terms=None):
        self.terms = dict(terms or {})

    @classmethod
    def const(cls, c):
        return cls({(): float(c)})

    @classmethod
    def var(cls, name):
        return cls({(name,): 1.0})

    def __add__(self, o):
        t = dict(self.terms)
        for k, v in o.terms.items():
            t[k] = t[k] + v if k in t else v
        return Poly(t)

    def __neg__(self):
        return Poly({k: -v for k, v in self.terms.items()})

    def __sub__(self, o):
        return self + (-o)

    def __mul__(self, o):
        t = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in o.terms.items():
                k = tuple(sorted(k1 + k2))
                t[k] = t[k] + v1 * v2 if k in t else v1 * v2
        return Poly(t)

    def evaluate(self, env) -> float:
        s = 0.0
        for k, v in self.terms.items():
            p = v
            for name in k:
                p *= env[name]
            s += p
        return s

    def variables(self) -> set:
        return {n for k in self.terms for n in k}


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
                    r"|(\\?[A-Za-z_]\w*(?:->\w+)?)|(\S))")


def _tokens(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        num, ident, op = m.groups()
        if num is not None:
            out.append(("num", num))
        elif ident is not None:
            out.append(("id", ident))
        elif op is not None:
            out.append(("op", op))
        pos = m.end()
    return out


def parse_expression(text: str) -> Poly:
    """Parse an arithmetic expression (``+ - *``, parentheses, literals, names) into a :class:`Poly`.

    Names may be plain identifiers or ``a->b`` member accesses; ``\\at(v, Pre)``
    and ``\\old(v)`` are read as ``v``. Literals keep their exact binary64
    value, so coefficients can be compared bit for bit.
    """
    toks = _tokens(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None)

    def take(kind=None, val=None):
        nonlocal pos
        t = peek()
        if t[0] is None or (kind and t[0] != kind) or (val and t[1] != val):
            raise ContractError(f"parse error near token {pos} in {text!r}")
        pos += 1
        return t

    def expr():
        p = term()
        while peek() in (("op", "+"), ("op", "-")):
            op = take()[1]
            q = term()
            p = p + q if op == "+" else p - q
        return p

    def term():
        p = unary()
        while peek() == ("op", "*"):
            take()
            p = p * unary()
        return p

    def unary():
        if peek() == ("op", "-"):
            take()
            nxt = peek()
            if nxt[0] == "num":
                take()
                return Poly.const(-float(nxt[1]))
            return -unary()
        return primary()

    def primary():
        k, v = peek()
        if k == "num":
            take()
            return Poly.const(float(v))
        if k == "id":
            take()
            if v in ("\\at", "\\old"):
                take("op", "(")
                inner = take("id")[1]
                if v == "\\at":
                    take("op", ",")
                    take("id")
                take("op", ")")
                return Poly.var(inner)
            return Poly.var(v)
        if (k, v) == ("op", "("):
            take()
            p = expr()
            take("op", ")")
            return p
        raise ContractError(f"unexpected token {v!r} in {text!r}")

    p = expr()
    if pos != len(toks):
        raise ContractError(f"trailing input in {text!r}")
    return p


def _split_args(s: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


_PRED_RE = re.compile(r"^//@ predicate (\w+)\((.*?)\) = (.*) (<=|>=) (\w+);$", re.M)


def _predicates(text):
    out = {}
    for m in _PRED_RE.finditer(text):
        formals = [a.split()[-1] for a in _split_args(m.group(2))]
        out[m.group(1)] = (formals, m.group(3), m.group(4), m.group(5))
    return out


def evaluate_predicate(text: str, name: str, values) -> float:
    """Value of the quadratic form in predicate ``name`` of an emitted source at ``values``."""
    preds = _predicates(text)
    if name not in preds:
        raise ContractError(f"predicate {name} not found")
    formals, body, _, _ = preds[name]
    formals = [f for f in formals if f != "lambda"]
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.size != len(formals):
        raise ContractError(f"{name} takes {len(formals)} values, got {vals.size}")
    return parse_expression(body).evaluate(dict(zip(formals, vals)))


# ---------------------------------------------------------------------------
# structural verification


@dataclass
class VerifyReport:
    """Outcome of :func:`structural_verify`; ``checks`` maps check name to pass/fail."""

    checks: dict
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.ok


def _quad_expected(M, names):
    M = symmetrize(np.asarray(M, dtype=float))
    t = {}
    for i in range(len(names)):
        for j in range(i, len(names)):
            c = M[i, j] if i == j else 2.0 * M[i, j]
            if c != 0:
                t[tuple(sorted((names[i], names[j])))] = c
    return t


def _lin_expected(row, names):
    return {(n,): float(c) for c, n in zip(row, names) if c != 0}


def _compare(label, poly: Poly, expected: dict, failures: list):
    got = {k: v for k, v in poly.terms.items() if v != 0}
    for k in sorted(set(got) | set(expected)):
        a, b = got.get(k), expected.get(k)
        if a is None or b is None or a != b:
            mono = " * ".join(k) or "1"
            failures.append(
                f"{label}: coefficient of {mono} is {fmt(a) if a is not None else 'missing'}, "
                f"expected {fmt(b) if b is not None else 'none'}"
            )


def _function_body(text, fname):
    m = re.search(rf"\bvoid {re.escape(fname)}\(.*?\{{\n(.*?)\n\}}", text, re.S)
    return m.group(1) if m else None


def _assignments(body):
    return {m.group(1): m.group(2) for m in re.finditer(r"^\s*([\w>-]+->\w+) = (.*);$", body, re.M)}


def structural_verify(src: EmittedSource, spec: ContractSpec) -> VerifyReport:
    """Re-parse an emitted source and check it against the specification.

    Checks predicate arities, exact coefficient round-trip of every matrix
    entry (predicates, residual and output expressions, logic functions and
    executable statements), presence of the template clauses, and, in ghost
    mode, that the controller body reads no ghost variable.
    """
    text = src.text
    checks, failures = {}, []

    def record(name, fails):
        checks[name] = not fails
        failures.extend(fails)

    H = spec.system
    preds = _predicates(text)
    expect_pred = {p["name"]: p["arity"] for p in src.manifest.get("predicates", [])}
    if spec.mode == "local":
        nx = H.n_x
        want = {"state_ellip": nx + 1, "pwIQC_state": H.n_r}
        if H.n_y:
            want.update({"output_ellip": H.n_y + 1, "pwIQC_output": H.n_r})
    else:
        want = {"state_ellip": H.n_x + 1, "pwIQC_state": H.n_r}
    fails = []
    for name, ar in want.items():
        if name not in preds:
            fails.append(f"predicate {name} missing")
        elif len(preds[name][0]) != ar:
            fails.append(f"predicate {name} has arity {len(preds[name][0])}, expected {ar}")
        elif expect_pred.get(name) not in (None, ar):
            fails.append(f"manifest arity of {name} disagrees")
    record("arity", fails)

    fails = []
    mats = {"state_ellip": spec.cert.P, "pwIQC_state": spec.cert.S_x}
    if spec.mode == "local" and H.n_y:
        mats.update({"output_ellip": spec.output_cert.Q, "pwIQC_output": spec.output_cert.S_y})
    for name, M in mats.items():
        if name in preds:
            formals = [f for f in preds[name][0] if f != "lambda"]
            try:
                _compare(f"predicate {name}", parse_expression(preds[name][1]), _quad_expected(M, formals), fails)
            except ContractError as exc:
                fails.append(f"predicate {name}: {exc}")

    if spec.mode == "local":
        fails_c, fails_h = _verify_local(text, spec, fails)
    else:
        fails_c, fails_h = _verify_ghost(text, spec, fails)
    record("coefficients", fails)
    record("clauses", fails_c)
    record("ghost_hygiene", fails_h)
    return VerifyReport(checks, failures)


def _clause_lines(text, kw):
    return [m.group(1) for m in re.finditer(rf"^\s*{kw} (.*?);?$", text, re.M)]


def _call_args(clause, name):
    m = re.search(rf"\b{name}\((.*)\)\s*;?\s*$", clause)
    return _split_args(m.group(1)) if m else None


def _verify_local(text, spec, fails):
    H, nm = spec.system, spec.names
    xs = _vars("x", H.n_x)
    th, ds = _vars("theta", H.n_theta), _vars("d", H.n_d)
    px = [f"x->{v}" for v in xs]
    pre = [f"pre_{v}" for v in xs]
    fc = []
    R = np.hstack([H.C_H1, H.D_H11, H.D_H12])
    for pred in ("pwIQC_state",) + (("pwIQC_output",) if H.n_y else ()):
        line = next((c for c in _clause_lines(text, "requires") if c.startswith(pred + "(")), None)
        if line is None:
            fc.append(f"requires {pred} missing")
            continue
        args = _call_args(line, pred)
        if len(args) != H.n_r:
            fc.append(f"{pred} has {len(args)} residual arguments, expected {H.n_r}")
            continue
        for i, a in enumerate(args):
            _compare(f"{pred} residual r{i + 1}", parse_expression(a), _lin_expected(R[i], px + th + ds), fails)
    funcs = [(nm["update_state"], np.hstack([H.A_H, H.B_H1, H.B_H2]), px)]
    if H.n_y:
        funcs.append((nm["update_output"], np.hstack([H.C_H2, H.D_H21, H.D_H22]), [f"y->{v}" for v in _vars("y", H.n_y)]))
    for fname, M, lhs in funcs:
        body = _function_body(text, fname)
        if body is None:
            fc.append(f"function {fname} missing")
            continue
        asg = _assignments(body)
        for i, target in enumerate(lhs):
            if target not in asg:
                fc.append(f"{fname}: assignment to {target} missing")
                continue
            _compare(f"{fname} {target}", parse_expression(asg[target]), _lin_expected(M[i], pre + th + ds), fails)
    n_fun = 2 if H.n_y else 1
    n_beh = 2 if spec.model == "float" else 1
    if text.count("requires \\valid(x);") != n_fun:
        fc.append("validity requires missing")
    if text.count("requires \\separated(") != n_fun:
        fc.append("separation requires missing")
    if len(re.findall(r"^assigns \*[xy];$", text, re.M)) != n_fun:
        fc.append("assigns clause missing")
    if text.count("behavior polytope_input_real_model:") != n_fun:
        fc.append("real-model behavior missing")
    if text.count("behavior polytope_input_float_model:") != (n_fun if n_beh == 2 else 0):
        fc.append("float-model behavior count wrong")
    if len(_clause_lines(text, "assumes")) != n_fun * n_beh * H.n_d:
        fc.append("box assumptions missing")
    if len(_clause_lines(text, "ensures")) != n_fun * n_beh:
        fc.append("ensures clauses missing")
    return fc, []


def _verify_ghost(text, spec, fails):
    CL, nm = spec.system, spec.names
    H, K = CL.plant, CL.controller
    nH, nc, nu, ny = H.n_x, K.n_c, H.n_u, H.n_y
    xs, th, ds = _vars("x", nH), _vars("theta", H.n_theta), _vars("d", H.n_d)
    ys = _vars("y", ny)
    xc = [f"xc->x{i + 1}" for i in range(nc)]
    pre_xc = [f"pre_xc{i + 1}" for i in range(nc)]
    fc, fh = [], []

    formals = [f"pre_x{i + 1}" for i in range(nH)] + ds + th + _vars("u", nu)
    M = np.hstack([H.A_H, H.B_H2, H.B_H1, H.B_H3])
    for i in range(nH):
        m = re.search(rf"logic real update_x{i + 1}\((.*?)\) =\s*\n\s*(.*?);\n", text)
        if m is None:
            fc.append(f"logic function update_x{i + 1} missing")
            continue
        got_formals = [a.split()[-1] for a in _split_args(m.group(1))]
        if got_formals != formals:
            fc.append(f"update_x{i + 1} has formals {got_formals}")
        _compare(f"update_x{i + 1}", parse_expression(m.group(2)), _lin_expected(M[i], formals), fails)

    reqs = _clause_lines(text, "requires")
    line = next((c for c in reqs if c.startswith("pwIQC_state(")), None)
    R = np.hstack([CL.C_H1, CL.D_H11, CL.D_H12])
    if line is None:
        fc.append("requires pwIQC_state missing")
    else:
        args = _call_args(line, "pwIQC_state")
        if len(args) != CL.n_r:
            fc.append(f"pwIQC_state has {len(args)} arguments, expected {CL.n_r}")
        else:
            for i, a in enumerate(args):
                _compare(f"pwIQC_state residual r{i + 1}", parse_expression(a),
                         _lin_expected(R[i], xs + xc + th + ds), fails)
    Y = np.hstack([H.C_H2, H.D_H21, H.D_H22])
    for i, y in enumerate(ys):
        line = next((c for c in reqs if c.startswith(f"{y} == ")), None)
        if line is None:
            fc.append(f"output consistency for {y} missing")
            continue
        _compare(f"output {y}", parse_expression(line.split("==", 1)[1]), _lin_expected(Y[i], xs + th + ds), fails)
    if not any(c.startswith("\\valid(xc) && \\valid(u)") for c in reqs):
        fc.append("validity requires missing")
    if not any(c.startswith("\\separated(") for c in reqs):
        fc.append("separation requires missing")
    if not any(c.startswith("state_ellip(") for c in reqs):
        fc.append("state_ellip precondition missing")
    if sum(1 for c in reqs if re.match(r"-?[\d.e+-]+ <= d\d+ <= ", c)) != H.n_d:
        fc.append("disturbance box requires missing")
    if not re.search(r"^\s*assigns \*xc, \*u;$", text, re.M):
        fc.append("assigns clause missing")
    n_ens = len(re.findall(r"^\s*ensures ", text, re.M))
    if n_ens != (2 if spec.model == "float" else 1):
        fc.append(f"expected {'two' if spec.model == 'float' else 'one'} ensures clauses, found {n_ens}")
    if text.count("\\let nx1 = update_x1(") != (2 if spec.model == "float" else 1) and nH:
        fc.append("\\let-bound next states missing")
    if spec.model == "float" and nu and text.count("\\forall real l_1;") != 1:
        fc.append("quantified control perturbation missing")

    m = re.search(rf"\bvoid {re.escape(nm['controller'])}\((.*?)\) /\*@ ghost \((.*?)\) \*/", text)
    if m is None:
        fc.append("controller prototype with ghost parameters missing")
    else:
        ghost = [a.split()[-1] for a in _split_args(m.group(2))]
        if ghost != xs + th + ds:
            fc.append(f"ghost parameters {ghost} differ from plant state, theta and d")
    body = _function_body(text, nm["controller"])
    if body is None:
        fc.append("controller body missing")
    else:
        allowed = {"double", "xc", "u"} | set(ys) | set(pre_xc) | {f"xc->x{i + 1}" for i in range(nc)} \
            | {f"u->u{i + 1}" for i in range(nu)}
        for kind, tok in _tokens(body.replace(";", " ").replace("=", " ")):
            if kind == "id" and tok not in allowed:
                fh.append(f"controller body references {tok!r}, which is not controller state, input or output")
        asg = _assignments(body)
        for M, lhs in ((np.hstack([K.C_c, K.D_c]), [f"u->u{i + 1}" for i in range(nu)]),
                       (np.hstack([K.A_c, K.B_c]), xc)):
            for i, target in enumerate(lhs):
                if target not in asg:
                    fc.append(f"controller: assignment to {target} missing")
                    continue
                _compare(f"controller {target}", parse_expression(asg[target]),
                         _lin_expected(M[i], pre_xc + ys), fails)
    return fc, fh
