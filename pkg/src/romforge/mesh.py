"""Structured 2D finite-volume mesh and discrete fields.

Cells are indexed ``c = i + nx * j`` (x fastest). Faces are stored
OpenFOAM-style: internal faces first (owner < neighbour), then the boundary
patches ``inlet``, ``outlet``, ``wall_lower``, ``wall_upper`` in that order.
Face area vectors point from owner to neighbour on internal faces and outward
on boundary faces. Unit depth is assumed, so cell "volumes" are areas.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import DegenerateReferenceError, InvalidArgumentError

PATCH_NAMES = ("inlet", "outlet", "wall_lower", "wall_upper")
WALL_PATCHES = ("wall_lower", "wall_upper")


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class StructuredMesh:
    """Logically structured quadrilateral mesh built from a vertex grid.

    Parameters
    ----------
    vertices : ndarray of shape (nx + 1, ny + 1, 2)
        Vertex coordinates; ``vertices[i, j]`` is the lower-left corner of
        cell ``(i, j)``.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 3 or v.shape[2] != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise InvalidArgumentError(
                f"vertices must have shape (nx+1, ny+1, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("vertices contain non-finite values")
        self.nx = v.shape[0] - 1
        self.ny = v.shape[1] - 1
        self.vertices = _readonly(v)
        self._build()

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_faces(self):
        return len(self.owner)

    @property
    def n_internal_faces(self):
        return len(self.neighbour)

    def cell_index(self, i, j):
        return np.asarray(i) + self.nx * np.asarray(j)

    def _build(self):
        nx, ny, v = self.nx, self.ny, self.vertices
        cid = np.arange(nx * ny).reshape(ny, nx).T  # cid[i, j]

        # cell geometry via the shoelace formula on (v00, v10, v11, v01)
        quad = np.stack([v[:-1, :-1], v[1:, :-1], v[1:, 1:], v[:-1, 1:]], axis=2)
        x, y = quad[..., 0], quad[..., 1]
        xn, yn = np.roll(x, -1, axis=2), np.roll(y, -1, axis=2)
        cross = x * yn - xn * y
        area = 0.5 * cross.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            cx = ((x + xn) * cross).sum(axis=2) / (6.0 * area)
            cy = ((y + yn) * cross).sum(axis=2) / (6.0 * area)
        self.cell_volumes = _readonly(area.T.ravel())
        self.cell_centers = _readonly(np.stack([cx.T.ravel(), cy.T.ravel()], axis=1))

        def edge(a, b, sign):
            # normal of edge a->b rotated clockwise, i.e. (dy, -dx)
            d = b - a
            n = np.stack([d[..., 1], -d[..., 0]], axis=-1) * sign
            return n.reshape(-1, 2), (0.5 * (a + b)).reshape(-1, 2)

        owners, nbrs, areas, centers = [], [], [], []

        # internal x-faces: edge (i, j) -> (i, j+1), normal towards +x
        a, c = edge(v[1:-1, :-1], v[1:-1, 1:], 1.0)
        owners.append(cid[:-1, :].ravel())
        nbrs.append(cid[1:, :].ravel())
        areas.append(a)
        centers.append(c)
        # internal y-faces: edge (i+1, j) -> (i, j), normal towards +y
        a, c = edge(v[1:, 1:-1], v[:-1, 1:-1], 1.0)
        owners.append(cid[:, :-1].ravel())
        nbrs.append(cid[:, 1:].ravel())
        areas.append(a)
        centers.append(c)

        patches = {}
        start = sum(len(o) for o in owners)
        boundary = [
            ("inlet", v[0, :-1], v[0, 1:], -1.0, cid[0, :]),
            ("outlet", v[-1, :-1], v[-1, 1:], 1.0, cid[-1, :]),
            ("wall_lower", v[1:, 0], v[:-1, 0], -1.0, cid[:, 0]),
            ("wall_upper", v[1:, -1], v[:-1, -1], 1.0, cid[:, -1]),
        ]
        for name, va, vb, sign, own in boundary:
            a, c = edge(va, vb, sign)
            owners.append(own.ravel())
            areas.append(a)
            centers.append(c)
            patches[name] = _readonly(np.arange(start, start + len(own)))
            start += len(own)

        self.owner = _readonly(np.concatenate(owners))
        self.neighbour = _readonly(np.concatenate(nbrs))
        self.face_area_vectors = _readonly(np.concatenate(areas))
        self.face_centers = _readonly(np.concatenate(centers))
        self.boundary_patches = patches

    # ------------------------------------------------------------------
    # finite-volume geometric coefficients

    @cached_property
    def face_areas(self):
        return _readonly(np.linalg.norm(self.face_area_vectors, axis=1))

    @cached_property
    def face_normals(self):
        return _readonly(self.face_area_vectors / self.face_areas[:, None])

    @cached_property
    def interpolation_weights(self):
        """Owner weight ``w`` of linear interpolation on internal faces."""
        ni = self.n_internal_faces
        n = self.face_normals[:ni]
        cp = self.cell_centers[self.owner[:ni]]
        cn = self.cell_centers[self.neighbour]
        cf = self.face_centers[:ni]
        w = np.einsum("ij,ij->i", n, cn - cf) / np.einsum("ij,ij->i", n, cn - cp)
        return _readonly(w)

    @cached_property
    def delta_coeffs(self):
        """Inverse normal distance between the two points of each face stencil.

        Internal faces use owner and neighbour centres, boundary faces the
        owner centre and the face centre. No non-orthogonal correction.
        """
        ni = self.n_internal_faces
        n = self.face_normals
        d = np.empty(self.n_faces)
        cp = self.cell_centers[self.owner]
        d[:ni] = np.einsum("ij,ij->i", n[:ni], self.cell_centers[self.neighbour] - cp[:ni])
        d[ni:] = np.einsum("ij,ij->i", n[ni:], self.face_centers[ni:] - cp[ni:])
        return _readonly(1.0 / d)

    @cached_property
    def wall_faces(self):
        return _readonly(np.concatenate([self.boundary_patches[p] for p in WALL_PATCHES]))

    @cached_property
    def checksum(self):
        h = hashlib.sha256()
        h.update(np.array([self.nx, self.ny], dtype="<i8").tobytes())
        h.update(self.vertices.astype("<f8").tobytes())
        return h.hexdigest()[:32]

    def surface_sum(self):
        """Per-cell sum of outward face area vectors (zero for closed cells)."""
        s = np.zeros((self.n_cells, 2))
        ni = self.n_internal_faces
        np.add.at(s, self.owner, self.face_area_vectors)
        np.add.at(s, self.neighbour, -self.face_area_vectors[:ni])
        return s

    def divergence(self, face_flux):
        """Sum of outward face fluxes per cell."""
        ni = self.n_internal_faces
        div = np.bincount(self.owner, weights=face_flux, minlength=self.n_cells)
        div -= np.bincount(self.neighbour, weights=face_flux[:ni], minlength=self.n_cells)
        return div

    def with_vertices(self, vertices):
        return StructuredMesh(vertices)

    def __repr__(self):
        return f"StructuredMesh(nx={self.nx}, ny={self.ny}, checksum={self.checksum[:8]})"


def build_channel_mesh(length, height, nx, ny):
    """Uniform rectangular channel ``[0, length] x [0, height]``."""
    if not (length > 0 and height > 0):
        raise InvalidArgumentError(
            f"channel dimensions must be positive, got length={length}, height={height}")
    if int(nx) != nx or int(ny) != ny or nx < 4 or ny < 4:
        raise InvalidArgumentError(f"nx and ny must be integers >= 4, got {nx}, {ny}")
    x = np.linspace(0.0, length, int(nx) + 1)
    y = np.linspace(0.0, height, int(ny) + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    return StructuredMesh(np.stack([X, Y], axis=2))


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centred scalar or 2-vector field.

    ``values`` has shape ``(n_cells,)`` for scalars and ``(n_cells, 2)``
    for vectors.
    """

    kind: str
    values: np.ndarray
    mesh: StructuredMesh | None = None
    time: float = 0.0
    mesh_id: str = field(default="")

    def __post_init__(self):
        if self.kind not in ("scalar", "vector2"):
            raise InvalidArgumentError(f"unknown field kind {self.kind!r}")
        vals = np.array(self.values, dtype=float)
        if self.kind == "vector2" and (vals.ndim != 2 or vals.shape[1] != 2):
            raise InvalidArgumentError(f"vector2 field needs shape (n, 2), got {vals.shape}")
        if self.kind == "scalar" and vals.ndim != 1:
            raise InvalidArgumentError(f"scalar field needs shape (n,), got {vals.shape}")
        if self.mesh is not None and len(vals) != self.mesh.n_cells:
            raise InvalidArgumentError(
                f"field has {len(vals)} entries but mesh has {self.mesh.n_cells} cells")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("field contains non-finite values")
        object.__setattr__(self, "values", _readonly(vals))
        if self.mesh is not None and not self.mesh_id:
            object.__setattr__(self, "mesh_id", self.mesh.checksum)

    @property
    def n_entries(self):
        return len(self.values)

    def flat(self):
        """Component-interleaved 1D view (u0, v0, u1, v1, ...)."""
        return self.values.reshape(-1)

    def norm_weights(self):
        if self.mesh is None:
            raise InvalidArgumentError("field is not attached to a mesh")
        return self.mesh.cell_volumes

    def replace(self, values=None, time=None):
        return type(self)(
            kind=self.kind,
            values=self.values if values is None else values,
            mesh=self.mesh,
            time=self.time if time is None else time,
            mesh_id=self.mesh_id,
        )


@dataclass(frozen=True, eq=False)
class WssField:
    """Wall traction vectors, one per wall face (kinematic units m^2/s^2)."""

    values: np.ndarray
    face_ids: np.ndarray
    mesh: StructuredMesh | None = None
    time: float = 0.0
    mesh_id: str = field(default="")

    kind = "wss"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        ids = np.array(self.face_ids, dtype=np.int64)
        if vals.shape != (len(ids), 2):
            raise InvalidArgumentError(
                f"WSS values must have shape ({len(ids)}, 2), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("WSS field contains non-finite values")
        if self.mesh is not None and not np.all(np.isin(ids, self.mesh.wall_faces)):
            raise InvalidArgumentError("WSS face ids must belong to wall patches")
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "face_ids", _readonly(ids))
        if self.mesh is not None and not self.mesh_id:
            object.__setattr__(self, "mesh_id", self.mesh.checksum)

    @property
    def n_entries(self):
        return len(self.values)

    def flat(self):
        return self.values.reshape(-1)

    def norm_weights(self):
        if self.mesh is None:
            raise InvalidArgumentError("field is not attached to a mesh")
        return self.mesh.face_areas[self.face_ids]

    def replace(self, values=None, time=None):
        return WssField(
            values=self.values if values is None else values,
            face_ids=self.face_ids,
            mesh=self.mesh,
            time=self.time if time is None else time,
            mesh_id=self.mesh_id,
        )


def l2_norm(f):
    """Volume-weighted (face-length weighted for WSS) discrete L2 norm."""
    w = f.norm_weights()
    v = f.values.reshape(len(w), -1)
    return float(np.sqrt(np.sum(w[:, None] * v * v)))


def l2_relative_error(a, b):
    """``||a - b|| / ||b||`` in the weighted discrete L2 norm."""
    if a.kind != b.kind or a.values.shape != b.values.shape:
        raise InvalidArgumentError("fields differ in kind or shape")
    if a.mesh_id and b.mesh_id and a.mesh_id != b.mesh_id:
        raise InvalidArgumentError("fields live on different meshes")
    ref = l2_norm(b)
    if ref == 0.0:
        raise DegenerateReferenceError("reference field has zero L2 norm")
    return l2_norm(b.replace(values=a.values - b.values)) / ref
