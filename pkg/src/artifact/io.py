"""Strict JSON persistence for systems, controllers, configurations and certificates.

Matrices are objects ``{"rows": r, "cols": c, "data": [...]}`` in row-major
order. Every file carries ``"format_version": 1``; unknown keys, duplicate
keys and non-finite numbers are rejected. Floats are written with
``repr``, so reading a written file reproduces every binary64 value.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from .augmentation import LtiController
from .errors import DimensionError, InputError, SchemaError
from .lft import AffineLpv, LftSystem, SltvBlock, StateSpacePartition, UncertaintyStructure
from .synthesis import EllipsoidCertificate, OutputCertificate, Polytope

__all__ = [
    "FORMAT_VERSION",
    "SCHEMAS",
    "matrix_to_json",
    "matrix_from_json",
    "load_json",
    "dump_json",
    "parse_definition",
    "system_to_json",
    "controller_to_json",
    "polytope_from_json",
    "polytope_to_json",
    "state_cert_to_json",
    "state_cert_from_json",
    "output_cert_to_json",
    "output_cert_from_json",
    "file_hash",
    "validate_schema",
]

FORMAT_VERSION = 1

_MATRIX = {
    "type": "object",
    "properties": {
        "rows": {"type": "integer", "minimum": 0},
        "cols": {"type": "integer", "minimum": 0},
        "data": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["rows", "cols", "data"],
    "additionalProperties": False,
}
_VERSION = {"const": FORMAT_VERSION}
_LFT_BLOCKS = ["A_G", "B_G1", "B_G2", "C_G1", "D_G11", "D_G12", "C_G2", "D_G21", "D_G22"]
_LFT_CONTROL = ["B_G3", "D_G13", "D_G23"]
_MATLIST = {"type": "array", "items": _MATRIX, "minItems": 2}

SCHEMAS = {
    "lft": {
        "type": "object",
        "properties": {
            "format_version": _VERSION,
            "kind": {"const": "lft"},
            "name": {"type": "string"},
            "matrices": {
                "type": "object",
                "properties": {k: _MATRIX for k in _LFT_BLOCKS + _LFT_CONTROL},
                "required": _LFT_BLOCKS,
                "additionalProperties": False,
            },
            "uncertainty": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "alpha": {"type": "number", "exclusiveMinimum": 0},
                        "copies": {"type": "integer", "minimum": 0},
                    },
                    "required": ["alpha", "copies"],
                    "additionalProperties": False,
                },
            },
        },
        "required": ["format_version", "kind", "matrices", "uncertainty"],
        "additionalProperties": False,
    },
    "lti_controller": {
        "type": "object",
        "properties": {
            "format_version": _VERSION,
            "kind": {"const": "lti_controller"},
            "name": {"type": "string"},
            **{k: _MATRIX for k in ("A_c", "B_c", "C_c", "D_c")},
        },
        "required": ["format_version", "kind", "A_c", "B_c", "C_c", "D_c"],
        "additionalProperties": False,
    },
    "affine_controller": {
        "type": "object",
        "properties": {
            "format_version": _VERSION,
            "kind": {"const": "affine_controller"},
            "name": {"type": "string"},
            **{k: _MATLIST for k in ("A", "B", "C", "D")},
            "alphas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        },
        "required": ["format_version", "kind", "A", "B", "C", "D", "alphas"],
        "additionalProperties": False,
    },
    "config": {
        "type": "object",
        "properties": {
            "format_version": _VERSION,
            "kind": {"const": "config"},
            "system": {"type": "string"},
            "controller": {"type": "string"},
            "polytope": {
                "oneOf": [
                    {"type": "object", "properties": {"box": {"type": "array", "items": {"type": "number", "minimum": 0}}},
                     "required": ["box"], "additionalProperties": False},
                    {"type": "object", "properties": {"vertices": _MATRIX},
                     "required": ["vertices"], "additionalProperties": False},
                ]
            },
            "grid": {"type": "integer", "minimum": 1, "maximum": 1001},
            "margin": {"type": "number", "minimum": 0, "maximum": 1e-3},
            "mode": {"enum": ["real", "float"]},
            "contract": {"enum": ["local", "ghost"]},
            "seed": {"type": "integer", "minimum": 0},
            "solver": {
                "type": "object",
                "properties": {
                    "gap_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3},
                    "bound": {"type": "number", "minimum": 1, "maximum": 1e12},
                },
                "additionalProperties": False,
            },
            "float": {
                "type": "object",
                "properties": {
                    "slack": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                    "inflation": {"type": "number", "minimum": 1, "maximum": 1e6},
                },
                "additionalProperties": False,
            },
            "simulation": {
                "type": "object",
                "properties": {
                    "runs": {"type": "integer", "minimum": 1},
                    "horizon": {"type": "integer", "minimum": 1},
                },
                "additionalProperties": False,
            },
            "output_dir": {"type": "string"},
        },
        "required": ["format_version", "kind", "system", "polytope"],
        "additionalProperties": False,
    },
}


# ---------------------------------------------------------------------------
# primitives


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float)) if np.ndim(M) < 2 else np.asarray(M, dtype=float)
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": [float(v) for v in M.reshape(-1)]}


def matrix_from_json(obj, name: str = "matrix") -> np.ndarray:
    r, c, data = obj["rows"], obj["cols"], obj["data"]
    if len(data) != r * c:
        raise DimensionError(f"{name}: {r}x{c} needs {r * c} entries, got {len(data)}")
    return np.array(data, dtype=float).reshape(r, c)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SchemaError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name):
    raise SchemaError(f"non-finite number {name} is not allowed")


def _finite_float(text):
    v = float(text)
    if not np.isfinite(v):
        raise SchemaError(f"number {text} overflows binary64")
    return v


def load_json(path) -> dict:
    """Read a JSON file strictly (no duplicate keys, no NaN/Infinity)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant,
                          parse_float=_finite_float)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def dump_json(obj, path) -> None:
    """Write canonical JSON (sorted keys, ``repr`` floats, trailing newline)."""
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def validate_schema(obj, kind, where=""):
    try:
        jsonschema.validate(obj, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}{kind} file, field {loc}: {exc.message}") from exc


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# definitions


def parse_definition(path):
    """Parse a system or controller file.

    Returns
    -------
    LftSystem, LtiController or AffineLpv
        According to the ``kind`` field (``lft``, ``lti_controller``,
        ``affine_controller``).
    """
    obj = load_json(path)
    if not isinstance(obj, dict) or obj.get("kind") not in ("lft", "lti_controller", "affine_controller"):
        raise SchemaError(f"{path}: 'kind' must be one of lft, lti_controller, affine_controller")
    kind = obj["kind"]
    validate_schema(obj, kind, f"{path}: ")
    if kind == "lft":
        mats = {k: matrix_from_json(v, k) for k, v in obj["matrices"].items()}
        G = StateSpacePartition(**mats)
        blocks = [SltvBlock(b["alpha"], b["copies"]) for b in obj["uncertainty"]]
        return LftSystem(G, UncertaintyStructure(blocks), name=obj.get("name", ""))
    if kind == "lti_controller":
        return LtiController(*(matrix_from_json(obj[k], k) for k in ("A_c", "B_c", "C_c", "D_c")))
    lists = {k: [matrix_from_json(M, f"{k}[{i}]") for i, M in enumerate(obj[k])] for k in "ABCD"}
    return AffineLpv(lists["A"], lists["B"], lists["C"], lists["D"], obj["alphas"])


def system_to_json(sys: LftSystem) -> dict:
    G = sys.G
    mats = {k: matrix_to_json(getattr(G, k)) for k in _LFT_BLOCKS}
    if G.B_G3 is not None:
        mats.update({k: matrix_to_json(getattr(G, k)) for k in _LFT_CONTROL})
    out = {"format_version": FORMAT_VERSION, "kind": "lft", "matrices": mats,
           "uncertainty": [{"alpha": float(b.alpha), "copies": int(b.copies)} for b in sys.delta.blocks]}
    if sys.name:
        out["name"] = sys.name
    return out


def controller_to_json(K) -> dict:
    if isinstance(K, AffineLpv):
        return {"format_version": FORMAT_VERSION, "kind": "affine_controller",
                **{k: [matrix_to_json(M) for M in getattr(K, k)] for k in "ABCD"},
                "alphas": [float(a) for a in K.alphas]}
    return {"format_version": FORMAT_VERSION, "kind": "lti_controller",
            **{k: matrix_to_json(getattr(K, k)) for k in ("A_c", "B_c", "C_c", "D_c")}}


def polytope_from_json(obj) -> Polytope:
    if "box" in obj:
        return Polytope.box(obj["box"])
    return Polytope(matrix_from_json(obj["vertices"], "vertices"))


def polytope_to_json(D: Polytope) -> dict:
    if D.is_box():
        return {"box": [float(v) for v in D.box_bounds()]}
    return {"vertices": matrix_to_json(D.vertices)}


# ---------------------------------------------------------------------------
# certificates


def _scal_to_json(scalings):
    return [{"X": matrix_to_json(X), "Y": matrix_to_json(Y)} for X, Y in scalings]


def _scal_from_json(objs):
    return [(matrix_from_json(s["X"], "X"), matrix_from_json(s["Y"], "Y")) for s in objs]


def state_cert_to_json(c: EllipsoidCertificate) -> dict:
    return {"P": matrix_to_json(c.P), "S_x": matrix_to_json(c.S_x), "scalings": _scal_to_json(c.scalings),
            "tau1": float(c.tau1), "level": float(c.level), "margins": [float(m) for m in c.margins],
            "provenance": c.provenance}


def state_cert_from_json(obj) -> EllipsoidCertificate:
    return EllipsoidCertificate(matrix_from_json(obj["P"], "P"), matrix_from_json(obj["S_x"], "S_x"),
                                _scal_from_json(obj["scalings"]), float(obj["tau1"]), float(obj["level"]),
                                list(obj.get("margins", [])), dict(obj.get("provenance", {})))


def output_cert_to_json(c: OutputCertificate) -> dict:
    return {"Q": matrix_to_json(c.Q), "S_y": matrix_to_json(c.S_y), "scalings": _scal_to_json(c.scalings),
            "tau3": float(c.tau3), "level": float(c.level), "margins": [float(m) for m in c.margins],
            "provenance": c.provenance}


def output_cert_from_json(obj) -> OutputCertificate:
    return OutputCertificate(matrix_from_json(obj["Q"], "Q"), matrix_from_json(obj["S_y"], "S_y"),
                             _scal_from_json(obj["scalings"]), float(obj["tau3"]), float(obj["level"]),
                             list(obj.get("margins", [])), dict(obj.get("provenance", {})))
