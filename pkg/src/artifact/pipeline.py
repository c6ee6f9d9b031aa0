"""Stage graph behind the command line: validate, augment, synthesize, float analysis,
contract generation, structural check and simulation.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .augmentation import AugmentedSystem, ClosedLoopAugmented, LtiController, build_augmented, close_loop
from .contracts import ContractSpec, generate, structural_verify
from .errors import ArtifactError, ContractError, CorrectionInfeasibleError, InputError, VerificationError
from .float_model import affine_update_error, closed_loop_shrink, shrink_factor, theta_bounds
from .io import (
    FORMAT_VERSION,
    dump_json,
    load_json,
    matrix_to_json,
    output_cert_from_json,
    output_cert_to_json,
    parse_definition,
    polytope_from_json,
    polytope_to_json,
    state_cert_from_json,
    state_cert_to_json,
    validate_schema,
)
from .iqc import structure_factors
from .lft import LftSystem, validate
from .simulation import empirical_invariance
from .synthesis import (
    EllipsoidCertificate,
    OutputCertificate,
    Polytope,
    check_output_certificate,
    check_state_certificate,
    ellipsoid_box_bounds,
    synth_output_bound,
    synth_state_invariant,
)

__all__ = [
    "ProjectConfig",
    "Model",
    "SynthResult",
    "load_config",
    "build_model",
    "perturbed_system",
    "float_analysis_local",
    "float_analysis_ghost",
    "synthesize",
    "certificate_to_json",
    "load_certificate",
    "contract_spec",
    "verify_certificate",
    "run_pipeline",
    "StageError",
    "CertificateReport",
    "format_report",
    "augmented_to_json",
]


class StageError(ArtifactError):
    """Wraps a stage failure; ``exit_code`` is that of the underlying error."""

    def __init__(self, stage: str, error: ArtifactError):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code


@dataclass
class ProjectConfig:
    """Resolved configuration; relative paths are taken from the config file's directory."""

    path: Optional[Path]
    system_path: Path
    polytope: Polytope
    controller_path: Optional[Path] = None
    grid: int = 21
    margin: float = 1e-9
    mode: str = "real"
    contract: str = "local"
    seed: int = 0
    gap_tol: float = 1e-9
    bound: float = 1e6
    slack: float = 1e-6
    inflation: float = 2.0
    runs: int = 100
    horizon: int = 1000
    output_dir: Path = Path("out")

    def digest(self) -> str:
        """SHA-256 over the config, system and controller files."""
        h = hashlib.sha256()
        for p in (self.path, self.system_path, self.controller_path):
            h.update(p.read_bytes() if p is not None else b"")
        h.update(repr((self.grid, self.margin, self.mode, self.contract, self.seed)).encode())
        return h.hexdigest()


def load_config(path, **overrides) -> ProjectConfig:
    """Parse a config file; ``overrides`` (grid, margin, mode, contract, seed, output_dir) win when not None."""
    path = Path(path)
    obj = load_json(path)
    validate_schema(obj, "config", f"{path}: ")
    base = path.parent

    def resolve(p):
        q = Path(p)
        q = q if q.is_absolute() else base / q
        if not q.exists():
            raise InputError(f"{path}: referenced file {p} does not exist")
        return q

    cfg = ProjectConfig(
        path=path,
        system_path=resolve(obj["system"]),
        polytope=polytope_from_json(obj["polytope"]),
        controller_path=resolve(obj["controller"]) if "controller" in obj else None,
        grid=obj.get("grid", 21),
        margin=obj.get("margin", 1e-9),
        mode=obj.get("mode", "real"),
        contract=obj.get("contract", "ghost" if "controller" in obj else "local"),
        seed=obj.get("seed", 0),
        gap_tol=obj.get("solver", {}).get("gap_tol", 1e-9),
        bound=obj.get("solver", {}).get("bound", 1e6),
        slack=obj.get("float", {}).get("slack", 1e-6),
        inflation=obj.get("float", {}).get("inflation", 2.0),
        runs=obj.get("simulation", {}).get("runs", 100),
        horizon=obj.get("simulation", {}).get("horizon", 1000),
        output_dir=Path(obj["output_dir"]) if "output_dir" in obj else base / "out",
    )
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, Path(v) if k == "output_dir" else v)
    if cfg.mode not in ("real", "float") or cfg.contract not in ("local", "ghost"):
        raise InputError("mode must be real/float and contract local/ghost")
    if cfg.grid < 1 or cfg.margin < 0:
        raise InputError("grid must be positive and margin nonnegative")
    return cfg


@dataclass
class Model:
    sys: LftSystem
    D: Polytope
    H: AugmentedSystem
    controller: Optional[object] = None
    CL: Optional[ClosedLoopAugmented] = None

    @property
    def target(self) -> AugmentedSystem:
        return self.CL if self.CL is not None else self.H


def build_model(cfg: ProjectConfig, contract: Optional[str] = None) -> Model:
    """Parse and validate the system, build ``H`` and, for ghost contracts, the closed loop."""
    contract = contract or cfg.contract
    sys = parse_definition(cfg.system_path)
    if not isinstance(sys, LftSystem):
        raise InputError(f"{cfg.system_path} does not define an LFT system")
    validate(sys).raise_if_failed()
    if cfg.polytope.n_d != sys.dims.n_d:
        raise InputError(f"polytope has dimension {cfg.polytope.n_d}, system has n_d={sys.dims.n_d}")
    H = build_augmented(sys, structure_factors(sys.delta), check=False)
    K = parse_definition(cfg.controller_path) if cfg.controller_path is not None else None
    CL = None
    if contract == "ghost":
        if not isinstance(K, LtiController):
            raise InputError("ghost contracts need an LTI controller file")
        CL = close_loop(H, K)
    elif H.has_control:
        raise InputError("local contracts need a system without a control input; use ghost mode")
    return Model(sys, cfg.polytope, H, K, CL)


def perturbed_system(CL: ClosedLoopAugmented, D: Polytope, e_u: float):
    """Closed loop with the plant input perturbation ``l e_u``, ``l`` in the unit box, as extra disturbance.

    Returns ``(system, polytope)``; the polytope is ``D`` times ``[-1, 1]^n_u``.
    """
    H = CL.plant
    nu = H.n_u
    Bu = np.vstack([H.B_H3, np.zeros((CL.n_c, nu))]) * e_u
    Du = H.D_H13 * e_u
    sys = AugmentedSystem(
        CL.A_H, CL.B_H1, np.hstack([CL.B_H2, Bu]), CL.C_H1, CL.D_H11, np.hstack([CL.D_H12, Du]),
        CL.C_H2, CL.D_H21, np.hstack([CL.D_H22, np.zeros((CL.n_y, nu))]),
        n_G=CL.n_G, psi=CL.psi, source=CL.source,
    )
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=nu)))
    V = np.array([np.concatenate([v, s]) for v in D.vertices for s in signs])
    return sys, Polytope(V)


def float_analysis_local(H: AugmentedSystem, D: Polytope, P, Q) -> dict:
    """Error bounds and shrink factors of ``updateState``/``updateOutput``."""
    xbar = ellipsoid_box_bounds(P)
    ybar = ellipsoid_box_bounds(Q) if H.n_y else np.zeros(0)
    dbar = D.box_bounds()
    tbar = theta_bounds(H, xbar, ybar, dbar) if H.n_theta else np.zeros(0)
    rx = affine_update_error(np.hstack([H.A_H, H.B_H1]), H.B_H2, np.concatenate([xbar, tbar]), dbar)
    out = {"xbar": xbar, "ybar": ybar, "dbar": dbar, "theta_bar": tbar, "e_x": rx.e, "e_x_max": rx.e_z,
           "alpha_x": shrink_factor(P, H.n_x, rx.e_z)}
    if H.n_y:
        ry = affine_update_error(np.hstack([H.C_H2, H.D_H21]), H.D_H22, np.concatenate([xbar, tbar]), dbar)
        out.update({"e_y": ry.e, "e_y_max": ry.e_z, "alpha_y": shrink_factor(Q, H.n_y, ry.e_z)})
    return out


def float_analysis_ghost(CL: ClosedLoopAugmented, P, Q) -> dict:
    """Controller-state and control-input error bounds and the closed-loop shrink factor."""
    K = CL.controller
    xbar = ellipsoid_box_bounds(P)
    xcbar = xbar[CL.n_plant:]
    ybar = ellipsoid_box_bounds(Q)
    rx = affine_update_error(K.A_c, K.B_c, xcbar, ybar)
    ru = affine_update_error(K.C_c, K.D_c, xcbar, ybar)
    return {"xbar": xbar, "ybar": ybar, "e_xc": rx.e, "e_xc_max": rx.e_z, "e_u": ru.e, "e_u_max": ru.e_z,
            "alpha": closed_loop_shrink(P, CL.n_x, rx.e_z)}


@dataclass
class SynthResult:
    cert: EllipsoidCertificate
    output_cert: Optional[OutputCertificate]
    floats: Optional[dict] = None
    e_u: Optional[float] = None
    system: Optional[AugmentedSystem] = None
    polytope: Optional[Polytope] = None
    log: list = field(default_factory=list)


def _synth(T, D, cfg, level=1.0, out_level=1.0):
    kw = dict(bound=cfg.bound, gap_tol=cfg.gap_tol, margin=cfg.margin)
    cert = synth_state_invariant(T, D, cfg.grid, level=level, **kw)
    oc = synth_output_bound(T, D, cert.P, cfg.grid, level=out_level, **kw) if T.n_y else None
    return cert, oc


def _target_level(alpha, cfg):
    return 1.0 - max(cfg.slack, cfg.inflation * (1.0 - alpha))


def synthesize(model: Model, cfg: ProjectConfig, mode: Optional[str] = None) -> SynthResult:
    """State and output certificates; in float mode, resynthesized with rounding slack.

    Float mode first synthesizes at level one to obtain bounds, then
    resynthesizes with target level ``rho = 1 - max(slack, inflation (1 - alpha))``
    and, for a closed loop, with the control perturbation ``inflation * e_u``
    as an extra disturbance. The final bounds are recomputed from the new
    ellipsoids and must satisfy ``alpha >= rho`` and ``e_u <=`` the
    perturbation used.
    """
    mode = mode or cfg.mode
    T, D = model.target, model.D
    cert, oc = _synth(T, D, cfg)
    if mode == "real":
        return SynthResult(cert, oc, system=T, polytope=D)
    log = []
    if model.CL is None:
        f0 = float_analysis_local(T, D, cert.P, oc.Q if oc else None)
        rx = _target_level(f0["alpha_x"], cfg)
        ry = _target_level(f0.get("alpha_y", 1.0), cfg)
        cert, oc = _synth(T, D, cfg, rx, ry)
        f1 = float_analysis_local(T, D, cert.P, oc.Q if oc else None)
        log.append(f"target levels {rx!r} (state), {ry!r} (output)")
        if f1["alpha_x"] < rx or f1.get("alpha_y", 1.0) < ry:
            raise CorrectionInfeasibleError(
                f"shrink factors {f1['alpha_x']!r}, {f1.get('alpha_y')!r} below target levels {rx!r}, {ry!r}")
        return SynthResult(cert, oc, f1, None, T, D, log)
    f0 = float_analysis_ghost(T, cert.P, oc.Q)
    e_u = cfg.inflation * f0["e_u_max"]
    rho = _target_level(f0["alpha"], cfg)
    Tp, Dp = perturbed_system(T, D, e_u) if e_u > 0 else (T, D)
    cert, oc = _synth(Tp, Dp, cfg, rho)
    f1 = float_analysis_ghost(T, cert.P, oc.Q)
    log.append(f"target level {rho!r}, control perturbation {e_u!r}")
    if f1["alpha"] < rho or f1["e_u_max"] > e_u:
        raise CorrectionInfeasibleError(
            f"closed-loop shrink factor {f1['alpha']!r} (target {rho!r}) or e_u {f1['e_u_max']!r} "
            f"(budget {e_u!r}) out of range")
    return SynthResult(cert, oc, f1, e_u, Tp, Dp, log)


# ---------------------------------------------------------------------------
# certificate files


def _floats_to_json(f):
    if f is None:
        return None
    return {k: ([float(x) for x in v] if isinstance(v, np.ndarray) else float(v)) for k, v in f.items()}


def certificate_to_json(res: SynthResult, model: Model, cfg: ProjectConfig, mode: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "certificate",
        "tool_version": __version__,
        "config_hash": cfg.digest(),
        "mode": mode,
        "closed_loop": model.CL is not None,
        "polytope": polytope_to_json(model.D),
        "u_perturbation": res.e_u,
        "state": state_cert_to_json(res.cert),
        "output": output_cert_to_json(res.output_cert) if res.output_cert is not None else None,
        "float": _floats_to_json(res.floats),
    }


def load_certificate(path) -> dict:
    obj = load_json(path)
    if obj.get("kind") != "certificate" or obj.get("format_version") != FORMAT_VERSION:
        raise InputError(f"{path} is not a certificate file of format version {FORMAT_VERSION}")
    obj["state"] = state_cert_from_json(obj["state"])
    obj["output"] = output_cert_from_json(obj["output"]) if obj.get("output") else None
    obj["polytope"] = polytope_from_json(obj["polytope"])
    return obj


def _check_system(model: Model, certfile: dict):
    """System and polytope the stored certificate refers to."""
    if certfile["closed_loop"] != (model.CL is not None):
        raise InputError("certificate and configuration disagree on closing the loop")
    T, D = model.target, certfile["polytope"]
    e_u = certfile.get("u_perturbation")
    if e_u:
        T, D = perturbed_system(model.CL, D, e_u)
    return T, D


def contract_spec(model: Model, certfile: dict, mode: str) -> ContractSpec:
    """Contract specification from a model and a loaded certificate file."""
    if not model.D.is_box():
        raise ContractError("contracts state the disturbance set as a box; the polytope is not a box")
    f = certfile.get("float") or {}
    if mode == "float" and not f:
        raise ContractError("float contracts need the float section of a float-mode certificate")
    fl = mode == "float"
    if model.CL is not None:
        return ContractSpec("ghost", mode, model.CL, certfile["state"], model.D.box_bounds(),
                            alpha=f.get("alpha") if fl else None,
                            e_u=certfile.get("u_perturbation") if fl else None)
    return ContractSpec("local", mode, model.H, certfile["state"], model.D.box_bounds(), certfile["output"],
                        alpha_x=f.get("alpha_x") if fl else None, alpha_y=f.get("alpha_y") if fl else None)


@dataclass
class CertificateReport:
    ok: bool
    lines: list
    state_margins: list
    output_margins: Optional[list] = None

    def __bool__(self):
        return self.ok


def verify_certificate(model: Model, certfile: dict, margin: float = 1e-9) -> CertificateReport:
    """Re-check a stored certificate from scratch; stored margins are only compared, never trusted."""
    T, D = _check_system(model, certfile)
    lines = []
    cert = certfile["state"]
    chk = check_state_certificate(T, D, cert, margin)
    for i, e in enumerate(chk.vertex_min_eigs):
        lines.append(f"state vertex {i}: lambda_min = {e!r}")
    lines.append(f"state convexity: lambda_min = {chk.convexity_min_eig!r}")
    lines.append(f"P: lambda_min = {chk.shape_min_eig!r}")
    lines += [f"state: {m}" for m in chk.messages]
    ok = chk.ok
    sm = [float(e) for e in chk.vertex_min_eigs] + [float(chk.convexity_min_eig)] if chk.vertex_min_eigs else []
    om = None
    if certfile.get("output") is not None:
        oc = certfile["output"]
        ochk = check_output_certificate(T, D, cert.P, oc, margin)
        for i, e in enumerate(ochk.vertex_min_eigs):
            lines.append(f"output vertex {i}: lambda_min = {e!r}")
        lines.append(f"output convexity: lambda_min = {ochk.convexity_min_eig!r}")
        lines += [f"output: {m}" for m in ochk.messages]
        ok = ok and ochk.ok
        om = [float(e) for e in ochk.vertex_min_eigs] + [float(ochk.convexity_min_eig)] if ochk.vertex_min_eigs else []
    lines.append("PASS" if ok else "FAIL")
    return CertificateReport(ok, lines, sm, om)


# ---------------------------------------------------------------------------
# full run


def _stage(summary, name, fn):
    try:
        out = fn()
    except ArtifactError as exc:
        summary["stages"].append({"stage": name, "status": "failed", "error": str(exc)})
        raise StageError(name, exc) from exc
    summary["stages"].append({"stage": name, "status": "ok"})
    return out


def run_pipeline(cfg: ProjectConfig, write: bool = True) -> tuple[int, dict]:
    """Run every stage and write the artifacts to ``cfg.output_dir``.

    Returns
    -------
    (exit_code, summary)
        ``summary`` maps stages to status and collects the key scalars.
    """
    summary = {"stages": [], "mode": cfg.mode, "contract": cfg.contract}
    out = Path(cfg.output_dir)
    try:
        model = _stage(summary, "validate", lambda: build_model(cfg))
        summary["dims"] = dict(model.sys.dims._asdict())
        res = _stage(summary, "synth", lambda: synthesize(model, cfg))
        certobj = certificate_to_json(res, model, cfg, cfg.mode)
        loaded = {**certobj, "state": res.cert, "output": res.output_cert, "polytope": model.D}
        summary.update({
            "tau1": res.cert.tau1, "logdet_P": res.cert.logdet, "level": res.cert.level,
            "state_margin": min(res.cert.margins),
            "box_bounds_x": [float(v) for v in ellipsoid_box_bounds(res.cert.P)],
        })
        if res.output_cert is not None:
            summary["output_margin"] = min(res.output_cert.margins)
            summary["box_bounds_y"] = [float(v) for v in ellipsoid_box_bounds(res.output_cert.Q)]
        if res.floats is not None:
            summary["float"] = {k: v for k, v in _floats_to_json(res.floats).items()
                                if k.startswith("alpha") or k.endswith("_max") or k == "theta_bar"}
            summary["u_perturbation"] = res.e_u
        rep = _stage(summary, "verify", lambda: verify_certificate(model, loaded, cfg.margin))
        if not rep.ok:
            summary["stages"][-1]["status"] = "failed"
            raise StageError("verify", VerificationError("; ".join(rep.lines)))
        src = _stage(summary, "gen-contracts", lambda: generate(contract_spec(model, loaded, cfg.mode)))
        vr = _stage(summary, "structural-verify",
                    lambda: structural_verify(src, contract_spec(model, loaded, cfg.mode)))
        summary["structural_checks"] = vr.checks
        if not vr.ok:
            summary["stages"][-1]["status"] = "failed"
            raise StageError("structural-verify", VerificationError("; ".join(vr.failures[:5])))
        inv = _stage(summary, "simulate", lambda: empirical_invariance(
            model.target, res.cert, model.D, runs=cfg.runs, horizon=cfg.horizon, seed=cfg.seed,
            e_u=res.e_u, output_Q=res.output_cert.Q if res.output_cert is not None else None))
        summary["simulation"] = {"steps": inv.steps, "max_level": inv.max_level,
                                 "violations": len(inv.violations), "max_output_level": inv.max_output_level}
        if not inv.ok:
            summary["stages"][-1]["status"] = "failed"
            raise StageError("simulate", VerificationError(f"{len(inv.violations)} invariance violations"))
        if write:
            out.mkdir(parents=True, exist_ok=True)
            dump_json(certobj, out / "certificate.json")
            src.write(out / f"{'controller' if model.CL is not None else 'system'}_{cfg.mode}.c")
        code = 0
    except StageError as exc:
        summary["error"] = str(exc)
        code = exc.exit_code
    summary["exit_code"] = code
    if write:
        out.mkdir(parents=True, exist_ok=True)
        dump_json(summary, out / "summary.json")
        (out / "report.txt").write_text(format_report(summary), encoding="utf-8")
    return code, summary


def format_report(summary: dict) -> str:
    lines = [f"mode: {summary.get('mode')}, contract: {summary.get('contract')}"]
    for s in summary["stages"]:
        lines.append(f"{s['stage']:<18} {s['status']}" + (f"  {s['error']}" if "error" in s else ""))
    for k in ("tau1", "logdet_P", "level", "state_margin", "output_margin", "u_perturbation"):
        if summary.get(k) is not None:
            lines.append(f"{k}: {summary[k]!r}")
    if "float" in summary:
        for k, v in summary["float"].items():
            lines.append(f"{k}: {v!r}")
    if "simulation" in summary:
        lines.append("simulation: " + ", ".join(f"{k}={v!r}" for k, v in summary["simulation"].items()))
    lines.append(f"exit code: {summary.get('exit_code')}")
    return "\n".join(lines) + "\n"


def augmented_to_json(T: AugmentedSystem) -> dict:
    names = ["A_H", "B_H1", "B_H2", "C_H1", "D_H11", "D_H12", "C_H2", "D_H21", "D_H22"]
    if T.has_control:
        names += ["B_H3", "D_H13", "D_H23"]
    return {"format_version": FORMAT_VERSION, "kind": "augmented",
            "matrices": {k: matrix_to_json(getattr(T, k)) for k in names}}

