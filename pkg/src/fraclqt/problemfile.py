"""Strict JSON problem files, CSV tables and the run report.

A problem file is either a reference to a builtin::

    {"builtin": "mass_spring", "n_steps": 500,
     "overrides": {"example2_reference_constant": -1.3333333333333333}}

or a full description::

    {"name": "scalar", "alpha": 0.95, "t_final": 2.0, "n_steps": 400,
     "plant": {"kind": "linear", "A": [[-1.0]], "B": [[1.0]]},
     "weights": {"Q": {"diag": [1.0]}, "R": [[1.0]], "T": [[0.0]], "cost_order": 1.0},
     "reference": {"kind": "polynomial", "coefficients": [[0.0, 1.0]]},
     "x0": [1.0]}

Plants are ``linear`` (constant ``A``, ``B``, optional ``drift``),
``mass_spring`` (``L``, ``masses``, ``stiffnesses``) or ``van_der_pol``.
References are ``zero``, ``polynomial``, ``poly_cosine`` (list of
``{"coefficients", "omega"}``) or ``table`` (``times``, ``values``).
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
import math
import os
import warnings

import numpy as np

from . import model
from .errors import InputError, TheoremRangeWarning
from .fracops import THEOREM_RANGE, Grid
from .model import (
    LinearPlant,
    PolyCosineReference,
    PolynomialReference,
    TableReference,
    TrackingProblem,
    Weights,
    ZeroReference,
)

__all__ = [
    "DEFAULT_N_STEPS",
    "load_problem",
    "parse_problem",
    "problem_to_dict",
    "write_problem",
    "write_csv",
    "read_csv",
    "trajectory_table",
    "gains_table",
    "dumps_report",
]

DEFAULT_N_STEPS = 500

_TOP_FULL = {"name", "alpha", "t_final", "n_steps", "plant", "weights", "reference", "x0"}
_TOP_BUILTIN = {"builtin", "alpha", "n_steps", "overrides"}
_OVERRIDES = {"example2_reference_constant"}
_PLANT_KEYS = {
    "linear": {"kind", "A", "B", "drift"},
    "mass_spring": {"kind", "L", "masses", "stiffnesses"},
    "van_der_pol": {"kind"},
}
_WEIGHT_KEYS = {"Q", "R", "T", "cost_order"}
_REF_KEYS = {
    "zero": {"kind"},
    "polynomial": {"kind", "coefficients"},
    "poly_cosine": {"kind", "components"},
    "table": {"kind", "times", "values"},
}


def _check_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise InputError(f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise InputError(f"{where}: missing field(s) {', '.join(missing)}")


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _vector(v, where):
    if not isinstance(v, list) or not all(not isinstance(e, (list, dict)) for e in v):
        raise InputError(f"{where}: expected a flat list of numbers")
    return np.array([_number(e, f"{where}[{i}]") for i, e in enumerate(v)])


def _matrix(v, where):
    if isinstance(v, dict):
        _check_keys(v, {"diag"}, where, required=("diag",))
        return np.diag(_vector(v["diag"], f"{where}.diag"))
    if not isinstance(v, list) or not v or not all(isinstance(row, list) for row in v):
        raise InputError(f"{where}: expected a nested list (matrix) or {{'diag': [...]}}")
    width = len(v[0])
    for i, row in enumerate(v):
        if len(row) != width:
            raise InputError(f"{where}: row {i} has {len(row)} entries, row 0 has {width} (not rectangular)")
    return np.array([_vector(row, f"{where}[{i}]") for i, row in enumerate(v)]).reshape(len(v), width)


def _plant(spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InputError("plant: expected an object with a 'kind' field")
    kind = spec["kind"]
    if kind not in _PLANT_KEYS:
        raise InputError(f"plant.kind: unknown kind {kind!r}; valid: {', '.join(_PLANT_KEYS)}")
    req = {"linear": ("A", "B"), "mass_spring": ("L", "masses", "stiffnesses"), "van_der_pol": ()}[kind]
    _check_keys(spec, _PLANT_KEYS[kind], "plant", required=req)
    if kind == "linear":
        drift = _vector(spec["drift"], "plant.drift") if "drift" in spec else None
        return LinearPlant(_matrix(spec["A"], "plant.A"), _matrix(spec["B"], "plant.B"), drift)
    if kind == "mass_spring":
        L = spec["L"]
        if isinstance(L, bool) or not isinstance(L, int):
            raise InputError(f"plant.L: expected an integer, got {L!r}")
        return model.build_mass_spring(
            L, _vector(spec["masses"], "plant.masses"), _vector(spec["stiffnesses"], "plant.stiffnesses")
        )
    return model.van_der_pol_plant()


def _coeffs(v, where):
    if not isinstance(v, list) or not v:
        raise InputError(f"{where}: expected a non-empty list of coefficients")
    return tuple(_number(c, f"{where}[{i}]") for i, c in enumerate(v))


def _reference(spec, q):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InputError("reference: expected an object with a 'kind' field")
    kind = spec["kind"]
    if kind not in _REF_KEYS:
        raise InputError(f"reference.kind: unknown kind {kind!r}; valid: {', '.join(_REF_KEYS)}")
    _check_keys(spec, _REF_KEYS[kind], "reference", required=tuple(sorted(_REF_KEYS[kind])))
    if kind == "zero":
        return ZeroReference(q)
    if kind == "polynomial":
        cs = spec["coefficients"]
        if not isinstance(cs, list):
            raise InputError("reference.coefficients: expected a list per state component")
        return PolynomialReference(tuple(_coeffs(c, f"reference.coefficients[{i}]") for i, c in enumerate(cs)))
    if kind == "poly_cosine":
        comps = []
        if not isinstance(spec["components"], list):
            raise InputError("reference.components: expected a list")
        for i, c in enumerate(spec["components"]):
            where = f"reference.components[{i}]"
            _check_keys(c, {"coefficients", "omega"}, where, required=("coefficients", "omega"))
            comps.append((_coeffs(c["coefficients"], f"{where}.coefficients"), _number(c["omega"], f"{where}.omega")))
        return PolyCosineReference(tuple(comps))
    return TableReference(_vector(spec["times"], "reference.times"), _matrix(spec["values"], "reference.values"))


def _weights(spec, q):
    _check_keys(spec, _WEIGHT_KEYS, "weights", required=("Q", "R"))
    T = _matrix(spec["T"], "weights.T") if "T" in spec else np.zeros((q, q))
    order = _number(spec.get("cost_order", 1.0), "weights.cost_order")
    return Weights(_matrix(spec["Q"], "weights.Q"), _matrix(spec["R"], "weights.R"), T, order)


def _n_steps(doc):
    n = doc.get("n_steps", DEFAULT_N_STEPS)
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise InputError(f"n_steps: expected an integer >= 2, got {n!r}")
    return n


def _warn_range(alpha):
    lo, hi = THEOREM_RANGE
    if not lo < alpha <= hi:
        warnings.warn(
            f"alpha = {alpha:g} is outside ({lo:g}, {hi:g}], the range in which the optimality "
            "conditions are established; results are still computed",
            TheoremRangeWarning,
            stacklevel=3,
        )


def parse_problem(doc: dict) -> tuple[TrackingProblem, Grid]:
    """Validate a decoded problem document."""
    if not isinstance(doc, dict):
        raise InputError("problem file: top level must be an object")
    if "builtin" in doc:
        _check_keys(doc, _TOP_BUILTIN, "problem")
        overrides = doc.get("overrides", {})
        _check_keys(overrides, _OVERRIDES, "overrides")
        const = overrides.get("example2_reference_constant")
        if const is not None:
            const = _number(const, "overrides.example2_reference_constant")
        problem = model.builtin_problem(doc["builtin"], example2_reference_constant=const)
        if "alpha" in doc:
            problem = problem.replace(alpha=_number(doc["alpha"], "alpha"))
    else:
        _check_keys(doc, _TOP_FULL, "problem", required=sorted(_TOP_FULL - {"n_steps", "name"}))
        plant = _plant(doc["plant"])
        q = plant.state_dim
        name = doc.get("name", "")
        if not isinstance(name, str):
            raise InputError("name: expected a string")
        problem = TrackingProblem(
            plant=plant,
            weights=_weights(doc["weights"], q),
            reference=_reference(doc["reference"], q),
            x0=_vector(doc["x0"], "x0"),
            alpha=_number(doc["alpha"], "alpha"),
            t_final=_number(doc["t_final"], "t_final"),
            name=name,
        )
    _warn_range(problem.alpha)
    return problem, Grid(problem.t_final, _n_steps(doc))


def load_problem(path) -> tuple[TrackingProblem, Grid]:
    """Read and validate a problem file.

    Raises
    ------
    InputError
        On JSON syntax errors (with line and column), unknown or missing
        fields, non-rectangular matrices and dimension mismatches.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read problem file {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return parse_problem(doc)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def problem_to_dict(problem: TrackingProblem, grid: Grid | None = None) -> dict:
    """Full-form document for ``problem``; inverse of :func:`parse_problem`."""
    plant = problem.plant
    if isinstance(plant, LinearPlant):
        if not (plant.A.is_constant and plant.B.is_constant):
            raise InputError("only constant-coefficient linear plants can be written")
        p = {"kind": "linear", "A": _tolist(plant.A.values), "B": _tolist(plant.B.values)}
        if plant.drift is not None:
            if not plant.drift.is_constant:
                raise InputError("only constant drift can be written")
            p["drift"] = _tolist(plant.drift.values)
    elif plant.name == "van_der_pol":
        p = {"kind": "van_der_pol"}
    else:
        raise InputError(f"nonlinear plant {plant.name!r} has no file representation")
    W = problem.weights
    if not (W.Q.is_constant and W.R.is_constant):
        raise InputError("only constant weights can be written")
    ref = problem.reference
    if isinstance(ref, ZeroReference):
        r = {"kind": "zero"}
    elif isinstance(ref, PolynomialReference):
        r = {"kind": "polynomial", "coefficients": [list(c) for c in ref.coefficients]}
    elif isinstance(ref, PolyCosineReference):
        r = {"kind": "poly_cosine",
             "components": [{"coefficients": list(c), "omega": w} for c, w in ref.components]}
    elif isinstance(ref, TableReference):
        r = {"kind": "table", "times": _tolist(ref.times), "values": _tolist(ref.values)}
    else:
        raise InputError(f"reference type {type(ref).__name__} has no file representation")
    return {
        "name": problem.name,
        "alpha": problem.alpha,
        "t_final": problem.t_final,
        "n_steps": grid.n_steps if grid is not None else DEFAULT_N_STEPS,
        "plant": p,
        "weights": {"Q": _tolist(W.Q.values), "R": _tolist(W.R.values), "T": _tolist(W.T),
                    "cost_order": W.cost_order},
        "reference": r,
        "x0": _tolist(problem.x0),
    }


def write_problem(problem: TrackingProblem, path, grid: Grid | None = None) -> None:
    """Write ``problem`` so that :func:`load_problem` reproduces it exactly.

    JSON floats are written with ``repr``, which round-trips binary64.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(problem_to_dict(problem, grid), fh, indent=2)
        fh.write("\n")


# -- outputs ----------------------------------------------------------------


def write_csv(path, header, columns) -> None:
    """Columns of equal length as CSV, 17 significant digits, LF endings."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header),
               comments="", newline="\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise InputError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    return header, data


def trajectory_table(grid: Grid, x, u, lam, ref):
    """Header and columns of trajectory.csv."""
    q, r = x.shape[0], u.shape[0]
    header = (["t"] + [f"x_{i}" for i in range(q)] + [f"u_{i}" for i in range(r)]
              + [f"lam_{i}" for i in range(q)] + [f"r_{i}" for i in range(q)])
    cols = [grid.nodes, *x, *u, *lam, *ref]
    return header, cols


def gains_table(grid: Grid, K, l, P, z):
    """Header and columns of gains.csv; matrices flattened row-major."""
    r, q = K.shape[0], K.shape[1]
    header = ["t"]
    cols = [grid.nodes]
    header += [f"K_{i}_{j}" for i in range(r) for j in range(q)]
    cols += [K[i, j] for i in range(r) for j in range(q)]
    header += [f"l_{i}" for i in range(r)]
    cols += list(l)
    header += [f"P_{i}_{j}" for i in range(q) for j in range(q)]
    cols += [P[i, j] for i in range(q) for j in range(q)]
    header += [f"z_{i}" for i in range(q)]
    cols += list(z)
    return header, cols


def parse_gains_table(header, data, q: int, r: int):
    """Inverse of :func:`gains_table`; returns ``(t, K, l, P, z)``."""
    expected, _ = gains_table(Grid(1.0, 2), np.zeros((r, q, 3)), np.zeros((r, 3)),
                              np.zeros((q, q, 3)), np.zeros((q, 3)))
    if header != expected:
        raise InputError(f"gains table columns do not match q={q}, r={r}")
    n = data.shape[0]
    t = data[:, 0]
    o = 1
    K = data[:, o:o + r * q].T.reshape(r, q, n)
    o += r * q
    l = data[:, o:o + r].T
    o += r
    P = data[:, o:o + q * q].T.reshape(q, q, n)
    o += q * q
    z = data[:, o:o + q].T
    return t, K, l, P, z


def _emit(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _emit(obj.tolist(), indent, level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        return "%.17g" % v
    return json.dumps(str(obj))


def dumps_report(obj, indent: int = 2) -> str:
    """JSON text with every float printed to 17 significant digits.

    Non-finite floats become ``null``.
    """
    return _emit(obj, indent, 0) + "\n"


def write_report(path, obj) -> None:
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(obj))
