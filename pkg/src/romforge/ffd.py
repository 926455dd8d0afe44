"""NURBS free-form deformation of embedded meshes.

The lattice is a tensor-product NURBS map from the unit parameter cube to
physical space. It is written for any number of parametric directions; the
channel workflow uses two. Axis 0 is streamwise, the remaining axes are
cross-stream.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    FieldFormatError,
    InvalidArgumentError,
    InvalidDeformationError,
    OutOfDomainError,
)
from .io import write_csv
from .mesh import StructuredMesh

LATTICE_FORMAT_VERSION = 1


# ----------------------------------------------------------------------
# B-spline basis


def clamped_uniform_knots(n_ctrl, degree):
    """Open uniform knot vector on [0, 1] with end multiplicity ``degree + 1``."""
    if n_ctrl < degree + 1:
        raise InvalidArgumentError(f"need at least {degree + 1} control points, got {n_ctrl}")
    inner = np.linspace(0.0, 1.0, n_ctrl - degree + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


def greville_abscissae(knots, degree):
    knots = np.asarray(knots, dtype=float)
    n = len(knots) - degree - 1
    if degree == 0:
        return 0.5 * (knots[:n] + knots[1:n + 1])
    return np.array([knots[i + 1:i + degree + 1].mean() for i in range(n)])


def find_span(u, degree, knots):
    """Knot span index ``k`` with ``knots[k] <= u < knots[k+1]`` (vectorised).

    The right end of the domain is assigned to the last non-empty span.
    """
    knots = np.asarray(knots, dtype=float)
    u = np.asarray(u, dtype=float)
    n = len(knots) - degree - 1
    lo, hi = knots[degree], knots[n]
    if np.any((u < lo) | (u > hi)) or not np.all(np.isfinite(u)):
        raise OutOfDomainError(f"parameter outside knot range [{lo}, {hi}]")
    span = np.searchsorted(knots, u, side="right") - 1
    return np.clip(span, degree, n - 1)


def basis_functions(u, degree, knots):
    """Non-zero basis values at each ``u`` by the Cox-de Boor triangle.

    Returns ``(span, values)`` with ``values`` of shape ``(len(u), degree+1)``;
    ``values[:, r]`` belongs to basis function ``span - degree + r``.
    """
    knots = np.asarray(knots, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    span = find_span(u, degree, knots)
    m = len(u)
    N = np.zeros((m, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, degree + 1))
    right = np.zeros((m, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = u - knots[span + 1 - j]
        right[:, j] = knots[span + j] - u
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return span, N


def bspline_basis(u, degree, knots):
    """Scalar form of :func:`basis_functions`: ``(span, values)``."""
    span, N = basis_functions([u], degree, knots)
    return int(span[0]), N[0]


# ----------------------------------------------------------------------
# lattice


@dataclass(frozen=True, eq=False)
class FfdLattice:
    """Tensor-product NURBS lattice.

    ``control_points`` has shape ``(*dims, ndim)`` and ``weights`` shape
    ``dims``. ``reference_points`` is the undisplaced grid used to locate
    embedded points.
    """

    degrees: tuple
    knots: tuple
    control_points: np.ndarray
    weights: np.ndarray
    box: tuple
    reference_points: np.ndarray = field(default=None)

    def __post_init__(self):
        cp = np.array(self.control_points, dtype=float)
        ndim = cp.shape[-1]
        dims = cp.shape[:-1]
        if len(dims) != ndim:
            raise InvalidArgumentError("control grid rank must equal spatial dimension")
        degrees = tuple(int(p) for p in self.degrees)
        knots = tuple(np.array(k, dtype=float) for k in self.knots)
        if len(degrees) != ndim or len(knots) != ndim:
            raise InvalidArgumentError("need one degree and knot vector per direction")
        for n, p, k in zip(dims, degrees, knots):
            if n < p + 1:
                raise InvalidArgumentError(f"{n} control points cannot carry degree {p}")
            if len(k) != n + p + 1:
                raise InvalidArgumentError("knot vector length must be n_ctrl + degree + 1")
            if np.any(np.diff(k) < 0):
                raise InvalidArgumentError("knot vector must be non-decreasing")
            if not (np.all(k[:p + 1] == k[0]) and np.all(k[-p - 1:] == k[-1])):
                raise InvalidArgumentError("knot vector must be clamped")
        w = np.array(self.weights, dtype=float)
        if w.shape != dims or np.any(w <= 0):
            raise InvalidArgumentError("weights must be positive with shape dims")
        lo, hi = (np.array(b, dtype=float) for b in self.box)
        if lo.shape != (ndim,) or hi.shape != (ndim,) or np.any(hi <= lo):
            raise InvalidArgumentError("box must be (lo, hi) with hi > lo")
        ref = cp if self.reference_points is None else np.array(self.reference_points, dtype=float)
        if ref.shape != cp.shape:
            raise InvalidArgumentError("reference grid shape differs from control grid")
        for name, val in (("control_points", cp), ("weights", w), ("reference_points", ref)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "box", (lo, hi))

    @property
    def dims(self):
        return self.control_points.shape[:-1]

    @property
    def ndim(self):
        return self.control_points.shape[-1]

    @classmethod
    def from_box(cls, lo, hi, dims=(7, 5), degrees=(2, 2), weights=None):
        """Undisplaced lattice whose control grid sits at the Greville points.

        With unit weights this makes the lattice map the affine map from the
        unit cube onto the box.
        """
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        knots = tuple(clamped_uniform_knots(n, p) for n, p in zip(dims, degrees))
        axes = [lo[d] + (hi[d] - lo[d]) * greville_abscissae(knots[d], degrees[d])
                for d in range(len(dims))]
        # pin the ends exactly so box faces carry no rounding
        for d, ax in enumerate(axes):
            ax[0], ax[-1] = lo[d], hi[d]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w = np.ones(tuple(dims)) if weights is None else np.asarray(weights, float)
        return cls(degrees=tuple(degrees), knots=knots, control_points=grid,
                   weights=w, box=(lo, hi), reference_points=grid)

    def with_control_points(self, control_points):
        return FfdLattice(degrees=self.degrees, knots=self.knots,
                          control_points=control_points, weights=self.weights,
                          box=self.box, reference_points=self.reference_points)

    @property
    def displacement(self):
        return self.control_points - self.reference_points

    def is_affine(self):
        """True when the undisplaced map is the affine box map (closed-form location)."""
        if not np.all(self.weights == 1.0):
            return False
        expected = FfdLattice.from_box(*self.box, dims=self.dims, degrees=self.degrees)
        same_knots = all(np.array_equal(a, b) for a, b in zip(self.knots, expected.knots))
        scale = np.max(self.box[1] - self.box[0])
        return same_knots and np.allclose(self.reference_points, expected.reference_points,
                                          rtol=0, atol=1e-14 * scale)

    # ------------------------------------------------------------------
    def rational_basis(self, params):
        """Local rational basis at parametric points.

        Returns ``(flat_index, values)``, both of shape ``(n, prod(p_d + 1))``;
        ``flat_index`` indexes ``control_points.reshape(-1, ndim)``.
        """
        params = np.atleast_2d(np.asarray(params, float))
        local = [basis_functions(params[:, d], self.degrees[d], self.knots[d])
                 for d in range(self.ndim)]
        combos = list(itertools.product(*[range(p + 1) for p in self.degrees]))
        n = len(params)
        idx = np.empty((n, len(combos)), dtype=np.int64)
        val = np.empty((n, len(combos)))
        w_flat = self.weights.reshape(-1)
        for c, offs in enumerate(combos):
            multi = [local[d][0] - self.degrees[d] + offs[d] for d in range(self.ndim)]
            flat = np.ravel_multi_index(multi, self.dims)
            prod = np.ones(n)
            for d in range(self.ndim):
                prod = prod * local[d][1][:, offs[d]]
            idx[:, c] = flat
            val[:, c] = prod * w_flat[flat]
        val /= val.sum(axis=1, keepdims=True)
        return idx, val

    def evaluate(self, params, reference=False):
        """Map parametric points (n, ndim) in [0, 1]^ndim to physical space."""
        idx, val = self.rational_basis(params)
        pts = (self.reference_points if reference else self.control_points).reshape(-1, self.ndim)
        return np.einsum("nc,ncd->nd", val, pts[idx])


# ----------------------------------------------------------------------
# point location


def _inside_box(lattice, points):
    lo, hi = lattice.box
    return np.all((points >= lo) & (points <= hi), axis=1)


def locate_parametric(lattice, points, max_depth=14, newton_iter=30, tol=1e-13):
    """Parametric coordinates of ``points`` on the undisplaced lattice.

    Returns ``(params, inside)``. Points outside the embedding box are
    flagged with ``inside = False`` and their params are NaN. Affine lattices
    use the closed-form inverse; otherwise an octree-style subdivision search
    picks a starting cell that Newton iterations then polish.
    """
    points = np.atleast_2d(np.asarray(points, float))
    inside = _inside_box(lattice, points)
    params = np.full(points.shape, np.nan)
    lo, hi = lattice.box
    if lattice.is_affine():
        params[inside] = np.clip((points[inside] - lo) / (hi - lo), 0.0, 1.0)
        return params, inside
    if np.any(inside):
        params[inside] = _subdivision_search(lattice, points[inside], max_depth,
                                             newton_iter, tol)
    return params, inside


def _subdivision_search(lattice, targets, max_depth, newton_iter, tol):
    n, d = targets.shape
    a = np.zeros((n, d))
    size = 1.0
    children = np.array(list(itertools.product((0.25, 0.75), repeat=d)))
    for _ in range(max_depth):
        best = np.full(n, np.inf)
        choice = np.zeros((n, d))
        for ch in children:
            centre = a + ch * size
            dist = np.linalg.norm(lattice.evaluate(centre, reference=True) - targets, axis=1)
            better = dist < best
            best[better] = dist[better]
            choice[better] = ch
        a = a + (choice - 0.25) * size
        size *= 0.5
    u = np.clip(a + 0.5 * size, 0.0, 1.0)
    # Newton polish with a central-difference Jacobian
    h = 1e-7
    for _ in range(newton_iter):
        r = lattice.evaluate(u, reference=True) - targets
        if np.max(np.abs(r)) < tol * max(1.0, np.max(np.abs(targets))):
            break
        J = np.empty((n, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            up = np.clip(u + e, 0, 1)
            um = np.clip(u - e, 0, 1)
            J[:, :, k] = ((lattice.evaluate(up, reference=True)
                           - lattice.evaluate(um, reference=True))
                          / (up[:, k] - um[:, k])[:, None])
        u = np.clip(u - np.linalg.solve(J, r[..., None])[..., 0], 0.0, 1.0)
    return u


def deform_points(lattice, points):
    """Push points through the displaced lattice; outside points are untouched."""
    points = np.atleast_2d(np.asarray(points, float))
    params, inside = locate_parametric(lattice, points)
    out = points.copy()
    if np.any(inside):
        out[inside] = lattice.evaluate(params[inside])
    return out


# ----------------------------------------------------------------------
# stenosis


@dataclass(frozen=True)
class StenosisSpec:
    """Symmetric narrowing of a channel lumen.

    ``wall_lower``/``wall_upper`` are the undeformed cross-stream wall
    positions (axis 1). Severities in [0, 0.9] are the supported range;
    anything below 1 is accepted so tangling can be demonstrated.
    """

    severity: float
    center_x: float
    extent: float
    wall_lower: float = 0.0
    wall_upper: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.severity < 1.0):
            raise InvalidArgumentError(f"severity must lie in [0, 1), got {self.severity}")
        if not self.extent > 0:
            raise InvalidArgumentError("extent must be positive")
        if not self.wall_upper > self.wall_lower:
            raise InvalidArgumentError("wall_upper must exceed wall_lower")

    @property
    def lumen_height(self):
        return self.wall_upper - self.wall_lower


def _bump_profile(lattice, spec):
    x = lattice.reference_points[(slice(None),) + (0,) * (lattice.ndim - 1) + (0,)]
    s = (x - spec.center_x) / spec.extent
    b = np.where(np.abs(s) < 0.5, np.cos(np.pi * s) ** 2, 0.0)
    b[0] = b[-1] = 0.0
    return b


def _contracted(lattice, spec, amplitude):
    ref = lattice.reference_points
    centre = 0.5 * (spec.wall_lower + spec.wall_upper)
    bump = _bump_profile(lattice, spec)
    shape = (-1,) + (1,) * (lattice.ndim - 1)
    factor = amplitude * bump.reshape(shape)
    interior = np.zeros(lattice.dims, dtype=bool)
    interior[tuple(slice(1, -1) for _ in range(lattice.ndim))] = True
    cp = ref.copy()
    for d in range(1, lattice.ndim):
        delta = factor * (centre - ref[..., d])
        cp[..., d] = np.where(interior, ref[..., d] + delta, ref[..., d])
    return lattice.with_control_points(cp)


def lumen_profile(lattice, spec, n_samples=2001):
    """Streamwise samples ``(x, height)`` of the deformed lumen (axis 1)."""
    lo, hi = lattice.box
    x = np.linspace(lo[0], hi[0], n_samples)
    rest = [0.5 * (lo[d] + hi[d]) for d in range(2, lattice.ndim)]
    base = np.column_stack([x] + [np.full_like(x, r) for r in rest])
    low = np.insert(base, 1, spec.wall_lower, axis=1)
    up = np.insert(base, 1, spec.wall_upper, axis=1)
    return x, deform_points(lattice, up)[:, 1] - deform_points(lattice, low)[:, 1]


def min_lumen_height(lattice, spec):
    return float(lumen_profile(lattice, spec)[1].min())


def apply_stenosis(lattice, spec):
    """Contract interior control layers towards the centreline.

    The contraction amplitude is calibrated by root finding so that the
    minimal deformed lumen equals ``(1 - severity) * lumen_height``.
    Boundary control layers never move.
    """
    lo, hi = lattice.box
    if spec.center_x - spec.extent / 2 <= lo[0] or spec.center_x + spec.extent / 2 >= hi[0]:
        raise InvalidArgumentError("stenosis support must lie strictly inside the lattice box")
    if not (lo[1] < spec.wall_lower and spec.wall_upper < hi[1]):
        raise InvalidArgumentError("walls must lie strictly inside the lattice box")
    if spec.severity == 0.0:
        return lattice.with_control_points(lattice.reference_points)
    if not np.any(_bump_profile(lattice, spec) > 0):
        raise InvalidArgumentError("stenosis support contains no interior control points")

    target = (1.0 - spec.severity) * spec.lumen_height

    def gap(a):
        return min_lumen_height(_contracted(lattice, spec, a), spec) - target

    a_hi = 1.0
    while gap(a_hi) > 0:
        a_hi *= 2.0
        if a_hi > 64:
            raise InvalidArgumentError(f"severity {spec.severity} is not reachable")
    a = brentq(gap, 0.0, a_hi, xtol=1e-14, rtol=1e-14)
    return _contracted(lattice, spec, a)


# ----------------------------------------------------------------------
# mesh warping


@dataclass(frozen=True)
class QualityReport:
    min_cell_volume: float
    max_non_orthogonality: float
    mean_non_orthogonality: float
    max_skewness: float
    max_aspect_ratio: float

    def rows(self):
        return [(k, v) for k, v in self.__dict__.items()]

    def write_csv(self, path):
        return write_csv(path, ["metric", "value"], self.rows())


def mesh_quality(mesh):
    ni = mesh.n_internal_faces
    n = mesh.face_normals[:ni]
    cp = mesh.cell_centers[mesh.owner[:ni]]
    d = mesh.cell_centers[mesh.neighbour] - cp
    dist = np.linalg.norm(d, axis=1)
    cosang = np.clip(np.einsum("ij,ij->i", n, d) / dist, -1.0, 1.0)
    nonorth = np.degrees(np.arccos(cosang))
    # distance from face centre to where the owner-neighbour line crosses the face plane
    lam = np.einsum("ij,ij->i", n, mesh.face_centers[:ni] - cp) / np.einsum("ij,ij->i", n, d)
    skew = np.linalg.norm(mesh.face_centers[:ni] - (cp + lam[:, None] * d), axis=1) / dist
    v = mesh.vertices
    ex = np.linalg.norm(v[1:, :, :] - v[:-1, :, :], axis=2)
    ey = np.linalg.norm(v[:, 1:, :] - v[:, :-1, :], axis=2)
    edges = np.stack([ex[:, :-1], ex[:, 1:], ey[:-1, :], ey[1:, :]], axis=0)
    aspect = edges.max(axis=0) / edges.min(axis=0)
    return QualityReport(
        min_cell_volume=float(mesh.cell_volumes.min()),
        max_non_orthogonality=float(nonorth.max()),
        mean_non_orthogonality=float(nonorth.mean()),
        max_skewness=float(skew.max()),
        max_aspect_ratio=float(aspect.max()),
    )


def deform_mesh(mesh, lattice):
    """Warp mesh vertices through the lattice; returns ``(mesh, QualityReport)``."""
    verts = mesh.vertices.reshape(-1, 2)
    moved = deform_points(lattice, verts).reshape(mesh.vertices.shape)
    if np.array_equal(moved, mesh.vertices):
        new = mesh
    else:
        new = StructuredMesh(moved)
    if np.any(~(new.cell_volumes > 0)):
        bad = int(np.sum(~(new.cell_volumes > 0)))
        raise InvalidDeformationError(
            f"deformation tangles the mesh: {bad} cells with non-positive volume")
    return new, mesh_quality(new)


# ----------------------------------------------------------------------
# persistence


def lattice_to_dict(lattice):
    return {
        "format": "romforge-ffd-lattice",
        "version": LATTICE_FORMAT_VERSION,
        "dims": list(lattice.dims),
        "degrees": list(lattice.degrees),
        "knots": [k.tolist() for k in lattice.knots],
        "box": [lattice.box[0].tolist(), lattice.box[1].tolist()],
        "control_points": lattice.control_points.reshape(-1, lattice.ndim).tolist(),
        "reference_points": lattice.reference_points.reshape(-1, lattice.ndim).tolist(),
        "weights": lattice.weights.reshape(-1).tolist(),
    }


def lattice_from_dict(d):
    if d.get("format") != "romforge-ffd-lattice":
        raise FieldFormatError("not a lattice document")
    if d.get("version") != LATTICE_FORMAT_VERSION:
        raise FieldFormatError(f"unsupported lattice version {d.get('version')}")
    dims = tuple(d["dims"])
    nd = len(dims)
    return FfdLattice(
        degrees=tuple(d["degrees"]),
        knots=tuple(np.array(k) for k in d["knots"]),
        control_points=np.array(d["control_points"]).reshape(dims + (nd,)),
        reference_points=np.array(d["reference_points"]).reshape(dims + (nd,)),
        weights=np.array(d["weights"]).reshape(dims),
        box=(np.array(d["box"][0]), np.array(d["box"][1])),
    )


def save_lattice(path, lattice):
    Path(path).write_text(json.dumps(lattice_to_dict(lattice), indent=1) + "\n")
    return Path(path)


def load_lattice(path):
    try:
        return lattice_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"{path}: invalid lattice file ({exc})") from exc


# ----------------------------------------------------------------------
# estimator front-end


def channel_lattice(length, height, center_x, extent, dims=(7, 5), degrees=(2, 2),
                    pad_x=0.25, margin=0.6):
    """Lattice box around a stenosis site in the channel ``[0, length] x [0, height]``.

    The box spans the stenosis support padded by ``pad_x * extent`` on each
    side and extends ``margin * height`` beyond both walls so the walls are
    interior to the lattice.
    """
    x0 = max(center_x - (0.5 + pad_x) * extent, 0.0)
    x1 = min(center_x + (0.5 + pad_x) * extent, length)
    return FfdLattice.from_box((x0, -margin * height), (x1, (1 + margin) * height),
                               dims=dims, degrees=degrees)


class StenosisDeformer(TransformerMixin, BaseEstimator):
    """Point-cloud transformer that inserts a calibrated stenosis.

    ``fit`` builds the lattice around the channel bounding box of ``X`` and
    calibrates the control-point displacement; ``transform`` warps points.
    """

    def __init__(self, severity=0.7, center_x=None, extent=None, dims=(7, 5),
                 degrees=(2, 2), margin=0.6, pad_x=0.25):
        self.severity = severity
        self.center_x = center_x
        self.extent = extent
        self.dims = dims
        self.degrees = degrees
        self.margin = margin
        self.pad_x = pad_x

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        lo, hi = X.min(axis=0), X.max(axis=0)
        length, height = hi[0] - lo[0], hi[1] - lo[1]
        cx = lo[0] + 0.5 * length if self.center_x is None else self.center_x
        ext = 0.3 * length if self.extent is None else self.extent
        lat = channel_lattice(hi[0], height, cx, ext, tuple(self.dims), tuple(self.degrees),
                              pad_x=self.pad_x, margin=self.margin)
        if lo[1] != 0.0:
            shift = np.array([0.0, lo[1]])
            lat = FfdLattice.from_box(lat.box[0] + shift, lat.box[1] + shift,
                                      dims=tuple(self.dims), degrees=tuple(self.degrees))
        self.spec_ = StenosisSpec(self.severity, cx, ext, lo[1], hi[1])
        self.lattice_ = apply_stenosis(lat, self.spec_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "lattice_")
        X = check_array(X, ensure_min_features=2)
        return deform_points(self.lattice_, X)

    def min_lumen_height(self):
        check_is_fitted(self, "lattice_")
        return min_lumen_height(self.lattice_, self.spec_)
