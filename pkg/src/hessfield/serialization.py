"""JSON exchange format for meshes, fields and reports.

Floats are written with Python's shortest round-trip ``repr``; keys are
sorted, so serialize -> parse -> serialize is byte-identical. Non-finite
floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .domain import Domain, MatrixField
from .errors import FormatError, HessfieldError

_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def to_jsonable(obj):
    """Convert numpy scalars/arrays, tuples and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def as_float(x) -> float:
    return _NONFINITE[x] if isinstance(x, str) else float(x)


def dumps(doc) -> str:
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str):
    return json.loads(text)


def dump(path, doc) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------------ fields


def domain_to_dict(domain: Domain) -> dict:
    return {"vertices": domain.vertices.tolist(),
            "simplices": [list(s) for s in domain.simplices],
            "dim": domain.d}


def domain_from_dict(doc: dict) -> Domain:
    try:
        verts = np.asarray(doc["vertices"], dtype=float)
        if verts.ndim == 1 and verts.size == 0:
            verts = verts.reshape(len(doc["vertices"]), 0)
        return Domain(verts, tuple(tuple(s) for s in doc["simplices"]), int(doc["dim"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, HessfieldError):
            raise
        raise FormatError(f"malformed domain: {exc}") from exc


def values_to_dict(values: np.ndarray) -> dict:
    """Per-vertex matrices as row-major lists of ``[re, im]`` pairs."""
    v = np.asarray(values, dtype=complex)
    nv, n = v.shape[0], v.shape[-1]
    flat = v.reshape(nv, -1)
    pairs = np.stack([flat.real, flat.imag], axis=-1)
    doc = {"n": int(n), "values": pairs.tolist()}
    if v.ndim != 3 or v.shape[1] != v.shape[2]:
        doc["shape"] = list(v.shape[1:])
    return doc


def values_from_dict(doc: dict) -> np.ndarray:
    try:
        n = int(doc["n"])
        pairs = np.asarray(doc["values"], dtype=float)
        if pairs.ndim != 3 or pairs.shape[-1] != 2:
            raise ValueError("values must be lists of [re, im] pairs")
        z = pairs[..., 0] + 1j * pairs[..., 1]
        shape = doc.get("shape", [n, n])
        return z.reshape((len(z),) + tuple(int(x) for x in shape))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed field: {exc}") from exc


def field_document(domain: Domain, field, **extra) -> dict:
    """``{"domain": ..., "field": ...}`` plus any extra named entries."""
    values = field.values if isinstance(field, MatrixField) else field
    doc = {"domain": domain_to_dict(domain), "field": values_to_dict(values)}
    for key, val in extra.items():
        if isinstance(val, MatrixField):
            val = val.values
        doc[key] = values_to_dict(val) if isinstance(val, np.ndarray) and val.ndim >= 2 else val
    return doc


def read_field_document(doc: dict) -> tuple[Domain, MatrixField]:
    if not isinstance(doc, dict) or "domain" not in doc or "field" not in doc:
        raise FormatError("field documents need 'domain' and 'field' entries")
    domain = domain_from_dict(doc["domain"])
    return domain, MatrixField(domain, values_from_dict(doc["field"]))
