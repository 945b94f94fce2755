"""
Plain-text model files.

A model file is a JSON document::

    {
      "name": "cats-dilemma",
      "dims": {"r": 3, "n": 4, "p": 3},
      "C": [[...], ...],              # r x r
      "A0": [[...], ...],             # n x n
      "A": [[[...]], ...],            # r matrices, n x n
      "B": [[[[...]]], ...],          # p lists of r matrices, n x n
      "bounds": [[lo, hi], ...],      # p rows
      "V": [[...], ...],              # optional, n x r
      "cost": {"L": ..., "Phi": ..., "psi": "zero", "alpha": 0.0},  # optional
      "flags": {"self_financing": false}                              # optional
    }

Matrices are written row by row and use the column-sum-zero convention.
"""

import json

import numpy as np

from .cost import CostSpec
from .errors import DimensionMismatch, ModelParseError, NonAdmissibleModel
from .model import CascadeModel, check_admissible
from .zoo import ZooEntry

PSI_NAMES = {"zero": "zero", "quad": "quadratic", "quadratic": "quadratic"}


def _locate(text, key):
    """Line and column of the first occurrence of ``"key"`` in ``text``, 1-based."""
    i = text.find(f'"{key}"')
    if i < 0:
        return None, None
    line = text.count("\n", 0, i) + 1
    return line, i - (text.rfind("\n", 0, i) + 1) + 1


def _array(doc, key, shape, text):
    if key not in doc:
        raise ModelParseError(f"missing section {key!r}", None, None)
    line, col = _locate(text, key)
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelParseError(f"section {key!r} is not a numeric array: {exc}", line, col) from None
    if arr.shape != shape:
        raise ModelParseError(f"section {key!r} has shape {arr.shape}, expected {shape}", line, col)
    return arr


def _int(doc, key, text):
    try:
        v = doc[key]
    except KeyError:
        raise ModelParseError(f"dims needs {key!r}", *_locate(text, "dims")) from None
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise ModelParseError(f"dims.{key} must be a non-negative integer", *_locate(text, key))
    return v


class ParsedModel:
    """Result of :func:`parse_model`: the zoo entry and an optional cost."""

    def __init__(self, entry, cost=None):
        self.entry = entry
        self.cost = cost

    @property
    def model(self):
        return self.entry.model


def parse_model(text):
    """Parse model-file text.

    Raises
    ------
    ModelParseError
        Malformed JSON, missing sections, or arrays of the wrong shape.
    NonAdmissibleModel
        Well-formed but some generator fails the rate or column-sum checks.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ModelParseError("top level must be an object", 1, 1)
    if "dims" not in doc or not isinstance(doc["dims"], dict):
        raise ModelParseError("missing section 'dims'", None, None)
    dims = doc["dims"]
    r, n, p = (_int(dims, k, text) for k in ("r", "n", "p"))
    C = _array(doc, "C", (r, r), text)
    A0 = _array(doc, "A0", (n, n), text)
    A = _array(doc, "A", (r, n, n), text)
    if p > 0 or "B" in doc:
        B = _array(doc, "B", (p, r, n, n), text)
        bounds = _array(doc, "bounds", (p, 2), text)
    else:
        B = np.zeros((0, r, n, n))
        bounds = np.zeros((0, 2))
    try:
        model = CascadeModel(C, A0, A, B, bounds)
    except DimensionMismatch as exc:
        raise ModelParseError(str(exc), None, None) from None
    report = check_admissible(model)
    if not report.ok:
        raise NonAdmissibleModel(str(report.first))
    V = _array(doc, "V", (n, r), text) if "V" in doc else None
    flags = doc.get("flags", {})
    entry = ZooEntry(doc.get("name", "model"), model, V, bool(flags.get("self_financing", False)),
                     doc.get("description", ""))
    cost = None
    if "cost" in doc:
        spec = doc["cost"]
        psi = PSI_NAMES.get(spec.get("psi", "zero"))
        if psi is None:
            raise ModelParseError(f"unknown psi {spec.get('psi')!r}", *_locate(text, "psi"))
        cost = CostSpec(_array(spec, "L", (n, r), text), _array(spec, "Phi", (n, r), text),
                        psi=psi, alpha=float(spec.get("alpha", 0.0)))
    return ParsedModel(entry, cost)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _rows(a):
    return np.asarray(a, dtype=float).tolist()


def export_model(entry, cost=None):
    """Model-file text for ``entry``; floats keep full precision through ``repr``."""
    m = entry.model
    doc = {
        "name": entry.name,
        "description": entry.description,
        "dims": {"r": m.r, "n": m.n, "p": m.p},
        "C": _rows(m.C),
        "A0": _rows(m.A0),
        "A": _rows(m.A),
        "B": _rows(m.B),
        "bounds": _rows(m.bounds),
    }
    if entry.V is not None:
        doc["V"] = _rows(entry.V)
    if cost is not None:
        if not cost.time_invariant or cost.psi_kind == "custom":
            raise ValueError("only constant costs with zero or quadratic psi can be exported")
        doc["cost"] = {"L": _rows(cost.L), "Phi": _rows(cost.Phi), "psi": cost.psi, "alpha": cost.alpha}
    doc["flags"] = {"self_financing": bool(entry.self_financing)}
    return json.dumps(doc, indent=1) + "\n"
