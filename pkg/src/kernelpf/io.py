"""Kernel specification documents and report files.

A specification is a JSON object with a ``variant`` key:

``dense``
    ``M`` (row-major square matrix), ``g``, ``gamma``; optional ``m``
    (otherwise ``M - g gamma^T``) and ``labels``.
``rankone``
    ``g1``, ``gamma1``, ``g``, ``gamma`` with ``m = g1 gamma1^T``.
``analytic``
    ``a``, ``b``, ``c`` and ``grid`` (``T``, ``n``, ``rule``, ``order``).
``density``
    ``grid`` (either ``T``/``n``/``rule``/``order`` or explicit ``nodes``,
    ``weights`` and ``T``), ``point_masses``, ``density`` (expression in
    ``x`` and ``y``), ``support`` (``full`` or ``upper``), ``g`` (expression
    in ``x``) and ``gamma`` (``atoms`` on the point masses plus an optional
    ``density`` expression in ``y``).

Every variant accepts ``tol`` and ``tol_quad``.  Parsing validates the
document against a JSON schema (errors carry a JSON pointer), builds the
kernel and runs :func:`validate_atom` on it.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
import sympy

from .errors import SchemaError
from .kernel import (
    TOL_EXACT,
    TOL_QUAD,
    AnalyticKernel,
    AtomKernel,
    DenseKernel,
    DensityKernel,
    GridSpace,
    Measure,
    RankOneRemarkKernel,
    validate_atom,
)

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_tols = {"tol": {"type": "number", "exclusiveMinimum": 0}, "tol_quad": {"type": "number", "exclusiveMinimum": 0}}

_grid_regular = {
    "type": "object",
    "properties": {
        "T": {"type": "number", "exclusiveMinimum": 0},
        "n": {"type": "integer", "minimum": 2},
        "rule": {"enum": ["gauss", "trapezoid"]},
        "order": {"type": "integer", "minimum": 1},
    },
    "required": ["T", "n"],
    "additionalProperties": False,
}
_grid_explicit = {
    "type": "object",
    "properties": {
        "T": {"type": "number", "exclusiveMinimum": 0},
        "nodes": _vector,
        "weights": _vector,
    },
    "required": ["T", "nodes", "weights"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["variant"],
    "properties": {"variant": {"enum": ["dense", "rankone", "analytic", "density"]}},
    "allOf": [
        {
            "if": {"properties": {"variant": {"const": "dense"}}},
            "then": {
                "properties": {"variant": True, "M": _matrix, "m": _matrix, "g": _vector, "gamma": _vector,
                               "labels": {"type": "array", "items": {"type": ["string", "integer"]}}, **_tols},
                "required": ["M", "g", "gamma"],
                "additionalProperties": False,
            },
        },
        {
            "if": {"properties": {"variant": {"const": "rankone"}}},
            "then": {
                "properties": {"variant": True, "g1": _vector, "gamma1": _vector, "g": _vector, "gamma": _vector,
                               "labels": {"type": "array", "items": {"type": ["string", "integer"]}}, **_tols},
                "required": ["g1", "gamma1", "g", "gamma"],
                "additionalProperties": False,
            },
        },
        {
            "if": {"properties": {"variant": {"const": "analytic"}}},
            "then": {
                "properties": {"variant": True, "a": {"type": "number", "exclusiveMinimum": 0},
                               "b": {"type": "number", "exclusiveMinimum": -1},
                               "c": {"type": "number", "exclusiveMinimum": 0},
                               "grid": _grid_regular, **_tols},
                "required": ["a", "b", "c"],
                "additionalProperties": False,
            },
        },
        {
            "if": {"properties": {"variant": {"const": "density"}}},
            "then": {
                "properties": {
                    "variant": True,
                    "grid": {"oneOf": [_grid_regular, _grid_explicit]},
                    "point_masses": _vector | {"minItems": 0},
                    "density": {"type": "string"},
                    "support": {"enum": ["full", "upper"]},
                    "g": {"type": "string"},
                    "gamma": {
                        "type": "object",
                        "properties": {"atoms": _vector | {"minItems": 0}, "density": {"type": "string"}},
                        "additionalProperties": False,
                    },
                    **_tols,
                },
                "required": ["grid", "density", "g", "gamma"],
                "additionalProperties": False,
            },
        },
    ],
}

_validator = jsonschema.Draft202012Validator(SCHEMA)


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path) if path else "/"


def check_schema(doc) -> None:
    """Raise :class:`SchemaError` (with a JSON pointer) if ``doc`` is not a valid specification."""
    err = jsonschema.exceptions.best_match(_validator.iter_errors(doc))
    if err is not None:
        raise SchemaError(err.message, _pointer(err.absolute_path))


def _expression(text: str, variables: str, pointer: str):
    symbols = sympy.symbols(variables, seq=True)
    try:
        expr = sympy.sympify(text, locals={s.name: s for s in symbols})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise SchemaError(f"cannot parse expression {text!r}: {exc}", pointer) from None
    extra = expr.free_symbols - set(symbols)
    if extra:
        raise SchemaError(f"unknown symbols {sorted(map(str, extra))} in {text!r}", pointer)
    fn = sympy.lambdify(symbols, expr, modules="numpy")

    def vectorized(*args):
        out = np.asarray(fn(*args), dtype=float)
        return np.broadcast_to(out, np.broadcast(*[np.asarray(a) for a in args]).shape).copy()

    return vectorized


def _grid(spec: dict, point_masses) -> GridSpace:
    g = spec["grid"]
    if "nodes" in g:
        return GridSpace(float(g["T"]), np.asarray(g["nodes"], float), np.asarray(g["weights"], float),
                         tuple(point_masses), "custom")
    rule, order = g.get("rule", "gauss"), int(g.get("order", 8))
    try:
        return GridSpace.uniform(float(g["T"]), int(g["n"]), rule, order, point_masses=tuple(point_masses))
    except ValueError as exc:
        raise SchemaError(str(exc), "/grid") from None


def canonical(doc: dict) -> dict:
    """Fill defaults so that equal kernels have equal documents."""
    doc = json.loads(json.dumps(doc))
    doc.setdefault("tol", TOL_EXACT)
    doc.setdefault("tol_quad", TOL_QUAD)
    v = doc["variant"]
    if v in ("dense", "rankone"):
        n = len(doc["g"])
        doc.setdefault("labels", list(range(n)))
    if v == "analytic":
        from .kernel import default_truncation

        grid = doc.setdefault("grid", {})
        grid.setdefault("T", default_truncation(doc["b"]))
        grid.setdefault("n", 400)
        grid.setdefault("rule", "gauss")
        grid.setdefault("order", 8)
    if v == "density":
        doc.setdefault("point_masses", [])
        doc.setdefault("support", "full")
        doc["gamma"].setdefault("atoms", [0.0] * len(doc["point_masses"]))
        if "nodes" not in doc["grid"]:
            doc["grid"].setdefault("rule", "gauss")
            doc["grid"].setdefault("order", 8)
    for key in ("a", "b", "c", "tol", "tol_quad"):
        if key in doc:
            doc[key] = float(doc[key])
    for key in ("M", "m", "g1", "gamma1", "point_masses") + (("g", "gamma") if v != "density" else ()):
        if key in doc:
            doc[key] = np.asarray(doc[key], dtype=float).tolist()
    grid = doc.get("grid", {})
    for key in ("T", "nodes", "weights"):
        if key in grid:
            grid[key] = np.asarray(grid[key], dtype=float).tolist()
    if v == "density":
        doc["gamma"]["atoms"] = np.asarray(doc["gamma"]["atoms"], dtype=float).tolist()
    return doc


def build_kernel(doc: dict) -> AtomKernel:
    """Construct the kernel described by a schema-valid, canonical document."""
    v = doc["variant"]
    tols = {"tol": doc["tol"], "tol_quad": doc["tol_quad"]}
    if v == "dense":
        return DenseKernel(doc["M"], doc["g"], doc["gamma"], labels=doc["labels"], m=doc.get("m"), **tols)
    if v == "rankone":
        return RankOneRemarkKernel(doc["g1"], doc["gamma1"], doc["g"], doc["gamma"], labels=doc["labels"], **tols)
    if v == "analytic":
        g = doc["grid"]
        return AnalyticKernel(doc["a"], doc["b"], doc["c"], T=g["T"], n=g["n"], rule=g["rule"], order=g["order"], **tols)
    space = _grid(doc, doc["point_masses"])
    density = _expression(doc["density"], "x y", "/density")
    g_fn = _expression(doc["g"], "x", "/g")
    atoms = np.asarray(doc["gamma"]["atoms"], float)
    if atoms.shape != (space.n_atoms,):
        raise SchemaError("gamma atoms must match point_masses", "/gamma/atoms")
    dens = np.zeros(len(space.nodes))
    if "density" in doc["gamma"]:
        dens = _expression(doc["gamma"]["density"], "y", "/gamma/density")(space.nodes)
    gamma = Measure(space, atoms, dens)
    return DensityKernel(space, density, g_fn, gamma, support=doc["support"], spec=doc, **tols)


def parse_kernel_spec(doc) -> AtomKernel:
    """Validate a specification (dict or JSON text), build the kernel and check its atom."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from None
    check_schema(doc)
    K = build_kernel(canonical(doc))
    validate_atom(K)
    return K


def load_kernel(path) -> AtomKernel:
    return parse_kernel_spec(Path(path).read_text())


def canonical_json(doc: dict) -> str:
    return json.dumps(canonical(doc), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# report files


def jsonable(obj):
    """Recursively convert numpy values and non-finite floats for JSON output."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(report: dict) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n"


def write_atomic(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, report: dict) -> None:
    write_atomic(path, dumps(report))
