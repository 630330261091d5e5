"""Legacy-format VTK output for the fields this package produces.

Structured points, binary, big-endian doubles -- the lowest common
denominator that ParaView and VisIt both read without plugins.  The
writer takes plain arrays or the field wrappers from ``fields`` and
handles the axis order itself (our arrays index [x, y, z]; VTK wants x
varying fastest in the flat stream).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _as_arrays(name, obj):
    """Yield (name, kind, array) with kind 'scalar' or 'vector'."""
    arr = obj.phys() if hasattr(obj, "phys") else np.asarray(obj)
    if arr.ndim == 3:
        yield name, "scalar", arr
    elif arr.ndim == 4 and arr.shape[0] == 3:
        yield name, "vector", arr
    elif arr.ndim == 4 and arr.shape[0] == 6:
        # symmetric tensor: six scalar channels, named by component
        for comp, a in zip(("xx", "xy", "xz", "yy", "yz", "zz"), arr):
            yield f"{name}_{comp}", "scalar", a
    else:
        raise ValueError(
            f"field '{name}' has unsupported shape {arr.shape}")


def write_vtk(path, fields: dict, *, spacing: float | None = None,
              title: str = "periodic fields") -> Path:
    """Write named fields on a common n^3 grid to one legacy VTK file."""
    path = Path(path)
    flat = [item for name, obj in fields.items()
            for item in _as_arrays(name, obj)]
    if not flat:
        raise ValueError("nothing to write")
    def spatial(kind, arr):
        return arr.shape if kind == "scalar" else arr.shape[1:]

    n = spatial(*flat[0][1:])[0]
    for name, kind, arr in flat:
        if spatial(kind, arr) != (n, n, n):
            raise ValueError(f"field '{name}' is not on the {n}^3 grid")
    h = (1.0 / n) if spacing is None else float(spacing)

    with open(path, "wb") as fh:
        fh.write(b"# vtk DataFile Version 3.0\n")
        fh.write(title.encode("ascii", "replace")[:255] + b"\n")
        fh.write(b"BINARY\n")
        fh.write(b"DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {n} {n} {n}\n".encode())
        fh.write(b"ORIGIN 0 0 0\n")
        fh.write(f"SPACING {h:.17g} {h:.17g} {h:.17g}\n".encode())
        fh.write(f"POINT_DATA {n ** 3}\n".encode())
        for name, kind, arr in flat:
            if kind == "scalar":
                fh.write(f"SCALARS {name} double 1\n".encode())
                fh.write(b"LOOKUP_TABLE default\n")
                fh.write(np.ascontiguousarray(
                    arr.transpose(2, 1, 0)).astype(">f8").tobytes())
            else:
                fh.write(f"VECTORS {name} double\n".encode())
                per_point = np.moveaxis(arr, 0, -1).transpose(2, 1, 0, 3)
                fh.write(np.ascontiguousarray(
                    per_point).astype(">f8").tobytes())
            fh.write(b"\n")
    return path
