"""File formats: binary fields, array containers, VTK and CSV exports.

Binary field layout (all little-endian)::

    magic      8 bytes  b"RFFIELD\\0"
    version    uint32   (1)
    kind       uint32   0 = scalar, 1 = vector2, 2 = wall traction (WSS)
    count      uint64   number of cells (or wall faces)
    time       float64
    mesh_id    32 bytes ASCII, NUL padded
    values     count * ncomp float64
    face_ids   count int64 (WSS only)

Containers hold named arrays plus JSON metadata and are used for POD bases
and network weights. They carry no timestamps so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FieldFormatError
from .mesh import Field, WssField

FIELD_MAGIC = b"RFFIELD\0"
FIELD_VERSION = 1
_KINDS = {"scalar": (0, 1), "vector2": (1, 2), "wss": (2, 2)}
_KIND_BY_CODE = {code: (name, ncomp) for name, (code, ncomp) in _KINDS.items()}
_HEADER = struct.Struct("<8sIIQd32s")

CONTAINER_MAGIC = b"RFCONT\0\0"
CONTAINER_VERSION = 1


def write_field(path, f):
    path = Path(path)
    code, ncomp = _KINDS[f.kind]
    vals = np.asarray(f.values, dtype="<f8")
    if not np.all(np.isfinite(vals)):
        raise FieldFormatError("refusing to write non-finite values")
    mesh_id = f.mesh_id.encode("ascii")[:32]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, code, len(vals), float(f.time), mesh_id))
        fh.write(vals.tobytes())
        if f.kind == "wss":
            fh.write(np.asarray(f.face_ids, dtype="<i8").tobytes())
    return path


def read_field(path, mesh=None):
    """Read a binary field; ``mesh`` (optional) is attached after a checksum match."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FieldFormatError(f"{path}: truncated header")
    magic, version, code, count, time, mesh_id = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != FIELD_VERSION:
        raise FieldFormatError(f"{path}: unsupported version {version}")
    if code not in _KIND_BY_CODE:
        raise FieldFormatError(f"{path}: unknown kind code {code}")
    kind, ncomp = _KIND_BY_CODE[code]
    nvals = count * ncomp
    expected = _HEADER.size + 8 * nvals + (8 * count if kind == "wss" else 0)
    if len(data) != expected:
        raise FieldFormatError(
            f"{path}: length mismatch, expected {expected} bytes, found {len(data)}")
    vals = np.frombuffer(data, dtype="<f8", count=nvals, offset=_HEADER.size).astype(float)
    if not np.all(np.isfinite(vals)):
        raise FieldFormatError(f"{path}: non-finite entries")
    mesh_id = mesh_id.rstrip(b"\0").decode("ascii")
    if mesh is not None and mesh_id and mesh_id != mesh.checksum:
        raise FieldFormatError(f"{path}: mesh checksum mismatch")
    if kind == "wss":
        ids = np.frombuffer(data, dtype="<i8", count=count, offset=_HEADER.size + 8 * nvals)
        return WssField(values=vals.reshape(count, 2), face_ids=ids.astype(np.int64),
                        mesh=mesh, time=time, mesh_id=mesh_id)
    if kind == "vector2":
        vals = vals.reshape(count, 2)
    return Field(kind=kind, values=vals, mesh=mesh, time=time, mesh_id=mesh_id)


# ----------------------------------------------------------------------
# generic array container


def write_container(path, arrays, meta):
    """Write named float/int arrays plus JSON metadata deterministically."""
    names = sorted(arrays)
    index = []
    blobs = []
    for name in names:
        a = np.asarray(arrays[name])
        dt = "<f8" if a.dtype.kind == "f" else "<i8"
        a = np.ascontiguousarray(a, dtype=dt)
        index.append({"name": name, "dtype": dt, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"arrays": index, "meta": meta}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<IQ", CONTAINER_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return Path(path)


def read_container(path):
    data = Path(path).read_bytes()
    if data[:8] != CONTAINER_MAGIC:
        raise FieldFormatError(f"{path}: not a romforge container")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CONTAINER_VERSION:
        raise FieldFormatError(f"{path}: unsupported container version {version}")
    off = 20
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: corrupt header") from exc
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if off + 8 * n > len(data):
            raise FieldFormatError(f"{path}: truncated array {entry['name']!r}")
        a = np.frombuffer(data, dtype=entry["dtype"], count=n, offset=off)
        arrays[entry["name"]] = a.reshape(entry["shape"]).copy()
        off += 8 * n
    if off != len(data):
        raise FieldFormatError(f"{path}: trailing bytes")
    return arrays, header["meta"]


# ----------------------------------------------------------------------
# exports


def write_vtk(path, mesh, cell_data=None, title="romforge"):
    """Legacy ASCII VTK structured grid with optional cell data.

    ``cell_data`` maps names to :class:`Field` objects or raw arrays of shape
    ``(n_cells,)`` / ``(n_cells, 2)``.
    """
    cell_data = cell_data or {}
    nx, ny = mesh.nx, mesh.ny
    pts = mesh.vertices.transpose(1, 0, 2).reshape(-1, 2)
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        f"POINTS {len(pts)} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_cells}")
    for name, f in cell_data.items():
        vals = np.asarray(getattr(f, "values", f), dtype=float)
        if len(vals) != mesh.n_cells:
            raise FieldFormatError(f"cell data {name!r} has {len(vals)} entries")
        if vals.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{x:.17g}" for x in vals]
        else:
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.17g} {b:.17g} 0" for a, b in vals]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return Path(path)


def write_profile_csv(path, columns):
    """Write equal-length 1D arrays as named CSV columns."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    if len({len(c) for c in cols}) > 1:
        raise FieldFormatError("profile columns differ in length")
    return write_csv(path, names, zip(*cols))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FieldFormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)
