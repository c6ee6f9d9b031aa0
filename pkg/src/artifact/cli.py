"""Command line: ``artifact <command> --config CONFIG [options]``.

Exit codes: 0 success, 1 verification or feasibility failure, 2 input
error, 3 internal numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArtifactError
from .io import dump_json
from .lft import AffineLpv, validate
from .pipeline import (
    augmented_to_json,
    build_model,
    certificate_to_json,
    contract_spec,
    float_analysis_ghost,
    float_analysis_local,
    format_report,
    load_certificate,
    load_config,
    run_pipeline,
    synthesize,
    verify_certificate,
)
from .contracts import generate, structural_verify
from .simulation import dump_csv, empirical_invariance, lpv_overapprox_check, simulate_uncertain
from .synthesis import ellipsoid_box_bounds


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", required=True, help="project configuration (JSON)")
    p.add_argument("--out", help="output directory (default: from the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="number of tau grid points")
    p.add_argument("--margin", type=float, help="eigenvalue margin for re-checks")
    p.add_argument("--mode", choices=["real", "float"])
    p.add_argument("--contract", choices=["local", "ghost"])
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    with_cert = argparse.ArgumentParser(add_help=False)
    with_cert.add_argument("--cert", help="certificate file (default: OUT/certificate.json)")
    sub.add_parser("validate", parents=[common], help="parse and validate the system and controller")
    sub.add_parser("augment", parents=[common], help="write the augmented (closed-loop) system")
    sub.add_parser("synth", parents=[common], help="synthesize state and output ellipsoids")
    sub.add_parser("float-bounds", parents=[common, with_cert], help="rounding-error bounds and shrink factors")
    sub.add_parser("gen-contracts", parents=[common, with_cert], help="emit annotated C")
    sim = sub.add_parser("simulate", parents=[common, with_cert], help="empirical invariance and LPV audit")
    sim.add_argument("--csv", help="write one trajectory of the uncertain system as CSV")
    sim.add_argument("--runs", type=int)
    sim.add_argument("--horizon", type=int)
    sub.add_parser("verify", parents=[common, with_cert], help="re-check a stored certificate")
    sub.add_parser("pipeline", parents=[common], help="run every stage and write all artifacts")
    return parser


def _config(args):
    return load_config(args.config, grid=args.grid, margin=args.margin, mode=args.mode,
                       contract=args.contract, seed=args.seed, output_dir=args.out)


def _cert_path(args, cfg) -> Path:
    return Path(args.cert) if args.cert else Path(cfg.output_dir) / "certificate.json"


def _fmt(v) -> str:
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(repr(float(x)) for x in v) + "]"
    return repr(v)


def cmd_validate(args, cfg):
    model = build_model(cfg)
    print(f"system: {cfg.system_path}")
    for k, v in model.sys.dims._asdict().items():
        print(f"  {k} = {v}")
    print(validate(model.sys))
    print(f"augmented: n_x = {model.target.n_x}, n_r = {model.target.n_r}")
    return 0


def cmd_augment(args, cfg):
    model = build_model(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(augmented_to_json(model.target), out / "augmented.json")
    print(f"wrote {out / 'augmented.json'}")
    return 0


def cmd_synth(args, cfg):
    model = build_model(cfg)
    res = synthesize(model, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(certificate_to_json(res, model, cfg, cfg.mode), out / "certificate.json")
    print(f"tau1 = {res.cert.tau1!r}, log det P = {res.cert.logdet!r}, level = {res.cert.level!r}")
    print(f"state box bounds: {_fmt(ellipsoid_box_bounds(res.cert.P))}")
    if res.output_cert is not None:
        print(f"tau3 = {res.output_cert.tau3!r}, output box bounds: {_fmt(ellipsoid_box_bounds(res.output_cert.Q))}")
    for line in res.log:
        print(line)
    print(f"wrote {out / 'certificate.json'}")
    return 0


def cmd_float_bounds(args, cfg):
    model = build_model(cfg)
    cf = load_certificate(_cert_path(args, cfg))
    Q = cf["output"].Q if cf["output"] is not None else None
    if model.CL is not None:
        f = float_analysis_ghost(model.CL, cf["state"].P, Q)
    else:
        f = float_analysis_local(model.H, model.D, cf["state"].P, Q)
    for k, v in f.items():
        print(f"{k}: {_fmt(v)}")
    return 0


def cmd_gen_contracts(args, cfg):
    model = build_model(cfg)
    cf = load_certificate(_cert_path(args, cfg))
    spec = contract_spec(model, cf, cfg.mode)
    src = generate(spec)
    rep = structural_verify(src, spec)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{'controller' if model.CL is not None else 'system'}_{cfg.mode}.c"
    src.write(path)
    print(f"wrote {path}")
    print(f"structural checks: {rep.checks}")
    for f in rep.failures:
        print(f"FAIL {f}")
    return 0 if rep.ok else 1


def cmd_simulate(args, cfg):
    model = build_model(cfg)
    cf = load_certificate(_cert_path(args, cfg))
    runs = args.runs or cfg.runs
    horizon = args.horizon or cfg.horizon
    Q = cf["output"].Q if cf["output"] is not None else None
    inv = empirical_invariance(model.target, cf["state"], model.D, runs=runs, horizon=horizon, seed=cfg.seed,
                               e_u=cf.get("u_perturbation"), output_Q=Q)
    print(f"steps = {inv.steps}, max level = {inv.max_level!r}, violations = {len(inv.violations)}")
    if inv.max_output_level is not None:
        print(f"max output level = {inv.max_output_level!r}")
    code = 0 if inv.ok else 1
    if isinstance(model.controller, AffineLpv):
        rep = lpv_overapprox_check(model.controller.to_lft(), model.controller, seed=cfg.seed)
        print(f"LPV audit: max mismatch = {rep.max_mismatch!r}, min residual = {rep.min_residual!r}")
        code = code or (0 if rep.ok else 1)
    if args.csv:
        run = simulate_uncertain(model.sys, horizon, cfg.seed, D=model.D,
                                 controller=model.controller if model.CL is not None else None)
        dump_csv(run, args.csv)
        print(f"wrote {args.csv}")
    return code


def cmd_verify(args, cfg):
    model = build_model(cfg)
    cf = load_certificate(_cert_path(args, cfg))
    rep = verify_certificate(model, cf, cfg.margin)
    print("\n".join(rep.lines))
    return 0 if rep.ok else 1


def cmd_pipeline(args, cfg):
    code, summary = run_pipeline(cfg)
    sys.stdout.write(format_report(summary))
    return code


COMMANDS = {
    "validate": cmd_validate,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "float-bounds": cmd_float_bounds,
    "gen-contracts": cmd_gen_contracts,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
