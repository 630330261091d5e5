"""Snapshot directories: raw component files plus a JSON manifest.

A state is a directory holding one ``<name>[_<comp>].bin`` file per field
component (little-endian float64, x-fastest ordering) and a
``manifest.json`` describing grid size, time, stage label and the field
inventory.  The format is deliberately dumb so snapshots can be inspected
with ``np.fromfile`` alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IOFormatError
from .fields import Field, GridSpec, ScalarField, SymTensorField, VectorField

_SUFFIXES = {
    "scalar": ("",),
    "vector": ("x", "y", "z"),
    "symtensor": ("xx", "xy", "xz", "yy", "yz", "zz"),
}
_CLASSES = {"scalar": ScalarField, "vector": VectorField,
            "symtensor": SymTensorField}
DTYPE = "<f8"
FORMAT_VERSION = 1


def _kind(f: Field) -> str:
    for kind, cls in _CLASSES.items():
        if type(f) is cls:
            return kind
    raise IOFormatError(f"cannot snapshot field of type {type(f).__name__}")


def _comp_files(name: str, kind: str):
    if kind == "scalar":
        return [f"{name}.bin"]
    return [f"{name}_{suf}.bin" for suf in _SUFFIXES[kind]]


def save_state(path, fields: dict, *, time: float = 0.0, stage: str = "",
               meta: dict | None = None) -> Path:
    """Write fields to a snapshot directory (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    inventory = {}
    grid = None
    for name, f in fields.items():
        if grid is None:
            grid = f.grid
        elif f.grid != grid:
            raise IOFormatError("all snapshot fields must share one grid")
        kind = _kind(f)
        files = _comp_files(name, kind)
        phys = f.phys()
        comps = phys[None] if f.ncomp is None else phys
        for fn, comp in zip(files, comps):
            # transpose so that x is the fastest-varying index on disk
            comp.transpose(2, 1, 0).astype(DTYPE).tofile(path / fn)
        inventory[name] = {"kind": kind, "files": files}
    manifest = {
        "format_version": FORMAT_VERSION,
        "n": grid.n if grid else 0,
        "time": float(time),
        "stage": stage,
        "dtype": DTYPE,
        "ordering": "x-fastest",
        "fields": inventory,
    }
    if meta:
        manifest["meta"] = meta
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def load_state(path):
    """Read a snapshot directory back; returns (fields, manifest)."""
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.is_file():
        raise IOFormatError(f"no manifest.json in {path}")
    with open(mf) as fh:
        manifest = json.load(fh)
    try:
        n = int(manifest["n"])
        inventory = manifest["fields"]
    except KeyError as e:
        raise IOFormatError(f"manifest missing key {e}") from None
    if manifest.get("dtype", DTYPE) != DTYPE:
        raise IOFormatError(f"unsupported dtype {manifest.get('dtype')}")
    grid = GridSpec(n)
    fields = {}
    for name, entry in inventory.items():
        cls = _CLASSES.get(entry.get("kind"))
        if cls is None:
            raise IOFormatError(f"unknown field kind {entry.get('kind')!r}")
        comps = []
        for fn in entry["files"]:
            raw = np.fromfile(path / fn, dtype=DTYPE)
            if raw.size != n ** 3:
                raise IOFormatError(
                    f"{fn}: {raw.size} samples, expected {n ** 3}")
            comps.append(raw.reshape(n, n, n).transpose(2, 1, 0))
        arr = comps[0] if cls.ncomp is None else np.stack(comps)
        fields[name] = cls.from_phys(grid, arr)
    return fields, manifest
