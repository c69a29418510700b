"""Reading matrices and vectors, and writing reports byte-for-byte reproducibly."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import scipy.io


def read_matrix(path) -> np.ndarray:
    """Matrix Market (coordinate or array) or whitespace-delimited dense text."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        head = fh.readline()
    if head.startswith("%%MatrixMarket"):
        mat = scipy.io.mmread(str(path))
        mat = mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat)
        return np.asarray(mat, dtype=float)
    return np.loadtxt(path, dtype=float, ndmin=2, comments="#")


def read_vector(path) -> np.ndarray:
    """One value per line (Matrix Market also accepted)."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        head = fh.readline()
    if head.startswith("%%MatrixMarket"):
        return read_matrix(path).reshape(-1)
    return np.loadtxt(path, dtype=float, ndmin=1, comments="#").reshape(-1)


def write_matrix(path, mat) -> None:
    """Dense Matrix Market array format with 17 significant digits."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = ["%%MatrixMarket matrix array real general", f"{mat.shape[0]} {mat.shape[1]}"]
    lines += [format_float(v) for v in mat.T.reshape(-1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_vector(path, vec) -> None:
    vec = np.asarray(vec, dtype=float).reshape(-1)
    Path(path).write_text("".join(format_float(v) + "\n" for v in vec), encoding="utf-8")


def format_float(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        return "null"
    return f"{value:.17g}"


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(obj, indent: int = 2) -> str:
    """JSON in the given key order, floats at 17 significant digits, non-finite as null."""
    return _encode(obj, indent, 0) + "\n"
