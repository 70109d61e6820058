"""Minimal binary little-endian PLY reader/writer.

Only scalar per-vertex properties are supported (no list properties, no
ascii payloads). That covers the two formats this pipeline touches: splat
checkpoints and labeled ground-truth point clouds.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

_PLY_TO_NUMPY = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}
_NUMPY_TO_PLY = {
    "i1": "char",
    "u1": "uchar",
    "i2": "short",
    "u2": "ushort",
    "i4": "int",
    "u4": "uint",
    "f4": "float",
    "f8": "double",
}


def read_ply(path: str | Path) -> dict[str, np.ndarray]:
    """Read every scalar-property element of a binary PLY file.

    Returns a mapping from element name (e.g. ``"vertex"``) to a numpy
    structured array with one field per property.
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise FormatError(f"{path}: not a PLY file (missing 'ply' magic)")
        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        fmt_seen = False
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: truncated header (no end_header)")
            tokens = line.decode("ascii", errors="replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] != "binary_little_endian":
                    raise FormatError(
                        f"{path}: unsupported PLY format '{tokens[1]}' "
                        "(binary_little_endian required)"
                    )
                fmt_seen = True
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise FormatError(f"{path}: property before any element")
                if tokens[1] == "list":
                    raise FormatError(f"{path}: list properties are not supported")
                if tokens[1] not in _PLY_TO_NUMPY:
                    raise FormatError(f"{path}: unknown property type '{tokens[1]}'")
                elements[-1][2].append((tokens[2], _PLY_TO_NUMPY[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if not fmt_seen:
            raise FormatError(f"{path}: header has no format declaration")

        out: dict[str, np.ndarray] = {}
        for name, count, props in elements:
            dtype = np.dtype([(p, "<" + t) for p, t in props])
            raw = f.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise FormatError(f"{path}: element '{name}' payload is truncated")
            out[name] = np.frombuffer(raw, dtype=dtype, count=count)
        return out


def write_ply(path: str | Path, vertex: dict[str, np.ndarray]) -> None:
    """Write a single-element binary PLY with the given per-vertex columns.

    All columns must share the same length; dtypes are preserved (use
    float64 columns for lossless round-trips).
    """
    path = Path(path)
    names = list(vertex.keys())
    cols = {k: np.asarray(v) for k, v in vertex.items()}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) != 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    n = lengths.pop()

    dtype = np.dtype([(k, "<" + cols[k].dtype.str[1:]) for k in names])
    for k in names:
        code = cols[k].dtype.str[1:]
        if code not in _NUMPY_TO_PLY:
            raise ValueError(f"column '{k}' has unsupported dtype {cols[k].dtype}")

    packed = np.empty(n, dtype=dtype)
    for k in names:
        packed[k] = cols[k]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {_NUMPY_TO_PLY[cols[k].dtype.str[1:]]} {k}" for k in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(packed.tobytes())
