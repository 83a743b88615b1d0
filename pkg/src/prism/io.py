"""
Structure files, run configuration files and graph dumps.

Structure files are JSON-lines, one record per line::

    {"id": "nacl", "lattice": [[5.6, 0, 0], [0, 5.6, 0], [0, 0, 5.6]],
     "frac_coords": [[0, 0, 0], [0.5, 0.5, 0.5]], "atomic_numbers": [11, 17],
     "target": -3.2}

``lattice[r][c]`` is entry ``L[r, c]``: the *columns* of the nested list are
the lattice vectors in Angstrom. Blank lines and lines starting with ``#``
are skipped; writers emit one such header comment stating the convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import fields

import numpy as np

from .errors import ConfigError, InvalidFraction, InvalidLattice, ParseError, PrismError
from .lattice import DET_TOLERANCE, CrystalStructure

STRUCTURE_HEADER = (
    "# prism structures v1: lattice[r][c] = L[r][c], columns are lattice vectors "
    "(Angstrom); frac_coords are fractional; one JSON record per line"
)

#: Keys accepted in a run configuration file besides the training fields.
PATH_KEYS = ("input", "val_input", "out_dir")


def structure_to_record(s: CrystalStructure) -> dict:
    rec = {
        "id": s.id,
        "lattice": [[float(v) for v in row] for row in s.lattice],
        "frac_coords": [[float(v) for v in row] for row in s.frac],
        "atomic_numbers": [int(z) for z in s.numbers],
    }
    if s.target is not None:
        rec["target"] = float(s.target)
    return rec


def record_to_structure(rec: dict, line=None, strict: bool = False) -> CrystalStructure:
    """Validate one decoded record; errors carry ``line``."""
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", line)
    for key in ("lattice", "frac_coords", "atomic_numbers"):
        if key not in rec:
            raise ParseError(f"missing field {key!r}", line)
    try:
        L = np.array(rec["lattice"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidLattice(f"lattice is not numeric: {exc}", line) from None
    if L.shape != (3, 3) or not np.all(np.isfinite(L)):
        raise InvalidLattice(f"lattice must be 3x3 finite, got shape {L.shape}", line)
    if not abs(np.linalg.det(L)) > DET_TOLERANCE:
        raise InvalidLattice("lattice is singular", line)
    try:
        f = np.array(rec["frac_coords"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidFraction(f"frac_coords are not numeric: {exc}", line) from None
    if f.ndim != 2 or f.shape[1] != 3 or len(f) < 1:
        raise InvalidFraction(f"frac_coords must be N x 3 with N >= 1, got {f.shape}", line)
    if not np.all(np.isfinite(f)):
        raise InvalidFraction("frac_coords must be finite", line)
    if strict and (np.any(f < 0.0) or np.any(f >= 1.0)):
        raise InvalidFraction("frac_coords outside [0, 1) in strict mode", line)
    target = rec.get("target")
    if target is not None:
        if not isinstance(target, (int, float)) or isinstance(target, bool) or not math.isfinite(target):
            raise ParseError(f"target must be a finite number, got {target!r}", line)
        target = float(target)
    try:
        return CrystalStructure(L, f, rec["atomic_numbers"], id=str(rec.get("id", "")), target=target)
    except PrismError as exc:
        raise ParseError(str(exc), line) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line) from None


def parse_structures(path, strict: bool = False):
    """Read a JSON-lines structure file.

    Fractional coordinates outside ``[0, 1)`` are wrapped unless ``strict``.
    """
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            out.append(record_to_structure(rec, lineno, strict))
    return out


def write_structures(path, structures):
    with open(path, "w") as fh:
        fh.write(STRUCTURE_HEADER + "\n")
        for s in structures:
            fh.write(json.dumps(structure_to_record(s)) + "\n")


def write_graphs(path, records):
    """Graph dump: one ``PeriodicGraph.to_record`` JSON object per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _convert(value: str, kind, key: str):
    try:
        if kind is bool or kind == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int or kind == "int":
            return int(value)
        if kind is float or kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {getattr(kind, '__name__', kind)}") from None
    return value


def parse_run_config(path) -> tuple[dict, dict]:
    """Read a flat ``key = value`` file.

    Returns ``(train_fields, paths)``; unknown keys raise ``ConfigError``.
    """
    from .training import TrainConfig

    types = {f.name: f.type for f in fields(TrainConfig)}
    train_fields, paths = {}, {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (t.strip() for t in text.split("=", 1))
            if key in PATH_KEYS:
                paths[key] = value
            elif key in types:
                train_fields[key] = _convert(value, types[key], key)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return train_fields, paths
