"""Proper orthogonal decomposition of snapshot matrices.

Snapshot matrices follow the column convention (one snapshot per column).
The estimator front-end :class:`POD` follows the scikit-learn convention
instead: ``X`` has one snapshot per *row*.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidArgumentError, RomforgeError
from .io import read_container, write_container, write_csv
from .mesh import Field, WssField

VARIABLES = ("pressure", "velocity", "wss")


class PodNumericError(RomforgeError):
    pass


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    variable: str
    data: np.ndarray
    times: np.ndarray
    mesh_id: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        times = np.array(self.times, dtype=float)
        if self.variable not in VARIABLES:
            raise InvalidArgumentError(f"unknown variable {self.variable!r}")
        if data.ndim != 2 or data.shape[1] != len(times):
            raise InvalidArgumentError("data must be (n_dof, n_snapshots) matching times")
        if data.shape[1] < 2:
            raise InvalidArgumentError("need at least two snapshots")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("snapshot times must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("snapshot matrix contains non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "times", times)

    @property
    def n_dof(self):
        return self.data.shape[0]

    @property
    def n_snapshots(self):
        return self.data.shape[1]


def assemble(snapshots, variable):
    """Stack fields column-wise; vector fields are component-interleaved."""
    snapshots = list(snapshots)
    if not snapshots:
        raise InvalidArgumentError("no snapshots given")
    ids = {s.mesh_id for s in snapshots}
    if len(ids) > 1:
        raise InvalidArgumentError("snapshots belong to different meshes")
    kinds = {s.kind for s in snapshots}
    if len(kinds) > 1:
        raise InvalidArgumentError("snapshots mix field kinds")
    data = np.column_stack([s.flat() for s in snapshots])
    return SnapshotMatrix(variable, data, [s.time for s in snapshots], mesh_id=ids.pop())


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Truncated left singular vectors plus the full retained spectrum."""

    modes: np.ndarray
    singular_values: np.ndarray
    rank: int
    energy_delta: float
    variable: str = "pressure"
    criterion: str = "sigma"
    mean: np.ndarray | None = None
    mesh_id: str = ""
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.modes.ndim != 2 or self.modes.shape[1] != self.rank:
            raise InvalidArgumentError("modes must have `rank` columns")
        if self.weights is not None and self.weights.shape != (self.modes.shape[0],):
            raise InvalidArgumentError("one norm weight per degree of freedom required")

    @property
    def n_dof(self):
        return self.modes.shape[0]

    def truncate(self, rank):
        return replace(self, modes=self.modes[:, :rank], rank=rank)


def compute_pod(S, method="auto", rank_tol=1e-12, center=False, weights=None):
    """Untruncated POD of a :class:`SnapshotMatrix` (``rank`` = numerical rank).

    With ``weights`` (positive, one per row) the decomposition is optimal in
    the weighted norm ``sum w x^2``: modes are orthonormal in that inner
    product and :func:`project` / :func:`reconstruct_vector` apply it.

    ``method`` is ``"svd"`` (thin LAPACK SVD), ``"snapshots"`` (eigen-
    decomposition of the correlation matrix ``S^T S``) or ``"auto"``, which
    currently resolves to ``"svd"``: the correlation route squares the
    condition number, so modes below ``sqrt(eps) * sigma_1`` lose
    orthogonality.
    """
    data = S.data
    mean = None
    if center:
        mean = data.mean(axis=1)
        data = data - mean[:, None]
    sqw = None
    if weights is not None:
        weights = np.asarray(weights, float)
        if weights.shape != (S.n_dof,) or np.any(weights <= 0):
            raise InvalidArgumentError("weights must be positive, one per degree of freedom")
        sqw = np.sqrt(weights)
        data = data * sqw[:, None]
    if method == "auto":
        method = "svd"
    try:
        if method == "svd":
            W, sigma, _ = np.linalg.svd(data, full_matrices=False)
        elif method == "snapshots":
            W, sigma = _method_of_snapshots(data)
        else:
            raise InvalidArgumentError(f"unknown POD method {method!r}")
    except np.linalg.LinAlgError as exc:
        raise PodNumericError(
            f"SVD failed for {data.shape} matrix, |S|_F={np.linalg.norm(data):.3e}, "
            f"max|S|={np.abs(data).max():.3e}") from exc
    if sigma.size == 0 or sigma[0] == 0.0:
        raise PodNumericError("snapshot matrix is identically zero")
    R = int(np.sum(sigma > rank_tol * sigma[0]))
    return PodBasis(W[:, :R], sigma[:R], R, 1.0, S.variable, "sigma", mean, S.mesh_id,
                    None if weights is None else weights)


def _method_of_snapshots(data):
    C = data.T @ data
    lam, Z = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam, Z = lam[order], Z[:, order]
    # eigenvalues below roundoff of C carry no usable mode
    keep = lam > np.finfo(float).eps * lam[0] * len(lam)
    sigma = np.sqrt(lam[keep])
    W = data @ Z[:, keep] / sigma
    return W, sigma


def energy_ratio(singular_values, criterion="sigma"):
    s = np.asarray(singular_values, float)
    if criterion == "sigma2":
        s = s * s
    elif criterion != "sigma":
        raise InvalidArgumentError(f"unknown energy criterion {criterion!r}")
    c = np.cumsum(s) / s.sum()
    c[-1] = 1.0
    return c


def select_rank(singular_values, delta, criterion="sigma"):
    """Smallest ``L`` whose cumulative energy fraction reaches ``delta``.

    ``criterion="sigma"`` sums plain singular values; ``"sigma2"`` sums their
    squares.
    """
    s = np.asarray(singular_values, float)
    if s.size == 0:
        raise InvalidArgumentError("empty spectrum")
    if not (0.0 < delta <= 1.0):
        raise InvalidArgumentError(f"delta must lie in (0, 1], got {delta}")
    if np.any(s <= 0) or np.any(np.diff(s) > 0):
        raise InvalidArgumentError("spectrum must be positive and non-increasing")
    return int(np.argmax(energy_ratio(s, criterion) >= delta)) + 1


def truncate(basis, delta, criterion="sigma"):
    L = select_rank(basis.singular_values, delta, criterion)
    return replace(basis.truncate(L), energy_delta=float(delta), criterion=criterion)


def _as_vector(x):
    return x.flat() if hasattr(x, "flat") and not isinstance(x, np.ndarray) else np.asarray(x, float)


def project(basis, snapshot):
    """Modal coefficients ``V^T (phi - mean)``; accepts a field or a raw vector."""
    v = _as_vector(snapshot)
    if v.shape[0] != basis.n_dof:
        raise InvalidArgumentError(f"snapshot length {v.shape[0]} != basis size {basis.n_dof}")
    if basis.mean is not None:
        v = v - _col(basis.mean, v)
    if basis.weights is not None:
        v = v * _col(np.sqrt(basis.weights), v)
    return basis.modes.T @ v


def _col(a, like):
    return a if like.ndim == 1 else a[:, None]


def reconstruct_vector(basis, coefficients):
    a = np.asarray(coefficients, float)
    if a.shape[0] != basis.rank:
        raise InvalidArgumentError(f"expected {basis.rank} coefficients, got {a.shape[0]}")
    out = basis.modes @ a
    if basis.weights is not None:
        out = out / _col(np.sqrt(basis.weights), out)
    if basis.mean is not None:
        out = out + _col(basis.mean, out)
    return out


def reconstruct(basis, coefficients, like=None, time=0.0):
    """Reconstructed field; ``like`` supplies kind/mesh (raw vector if omitted)."""
    vec = reconstruct_vector(basis, coefficients)
    if like is None:
        return vec
    if isinstance(like, WssField):
        return WssField(values=vec.reshape(-1, 2), face_ids=like.face_ids, mesh=like.mesh,
                        time=time, mesh_id=like.mesh_id)
    vals = vec.reshape(-1, 2) if like.kind == "vector2" else vec
    return Field(kind=like.kind, values=vals, mesh=like.mesh, time=time, mesh_id=like.mesh_id)


# ----------------------------------------------------------------------
# persistence


def save_basis(path, basis):
    arrays = {"modes": basis.modes, "singular_values": basis.singular_values}
    if basis.mean is not None:
        arrays["mean"] = basis.mean
    if basis.weights is not None:
        arrays["weights"] = basis.weights
    meta = {"kind": "pod-basis", "version": 1, "variable": basis.variable,
            "rank": basis.rank, "delta": basis.energy_delta,
            "criterion": basis.criterion, "mesh_id": basis.mesh_id}
    return write_container(path, arrays, meta)


def load_basis(path):
    arrays, meta = read_container(path)
    if meta.get("kind") != "pod-basis":
        raise InvalidArgumentError(f"{path}: not a POD basis file")
    return PodBasis(arrays["modes"], arrays["singular_values"], int(meta["rank"]),
                    float(meta["delta"]), meta["variable"], meta["criterion"],
                    arrays.get("mean"), meta["mesh_id"], arrays.get("weights"))


def write_spectrum_csv(path, singular_values):
    s = np.asarray(singular_values, float)
    e1, e2 = energy_ratio(s, "sigma"), energy_ratio(s, "sigma2")
    rows = [(i + 1, s[i], e1[i], e2[i]) for i in range(len(s))]
    return write_csv(path, ["index", "sigma", "cumulative_energy_sigma",
                            "cumulative_energy_sigma2"], rows)


# ----------------------------------------------------------------------
# estimator


class POD(TransformerMixin, BaseEstimator):
    """POD compression with energy-based truncation.

    Parameters
    ----------
    delta : float
        Energy threshold in (0, 1].
    criterion : {"sigma", "sigma2"}
        Sum plain or squared singular values in the energy ratio.
    n_modes : int or None
        Fixed rank; overrides ``delta`` when given.
    center : bool
        Subtract the snapshot mean before decomposing.
    method : {"auto", "svd", "snapshots"}
    rank_tol : float
        Relative cut-off defining the numerical rank.

    Attributes
    ----------
    basis_ : PodBasis
    singular_values_ : ndarray
    n_components_ : int
    """

    def __init__(self, delta=0.99, criterion="sigma", n_modes=None, center=False,
                 method="auto", rank_tol=1e-12, variable="pressure"):
        self.delta = delta
        self.criterion = criterion
        self.n_modes = n_modes
        self.center = center
        self.method = method
        self.rank_tol = rank_tol
        self.variable = variable

    def fit(self, X, y=None, times=None, dof_weights=None):
        """``dof_weights`` (one per column of ``X``) selects a weighted norm."""
        X = check_array(X, ensure_min_samples=2)
        t = np.arange(X.shape[0], dtype=float) if times is None else times
        S = SnapshotMatrix(self.variable, X.T, t)
        full = compute_pod(S, self.method, self.rank_tol, self.center, dof_weights)
        if self.n_modes is not None:
            L = min(int(self.n_modes), full.rank)
            b = full.truncate(L)
            self.basis_ = replace(b, energy_delta=float(self.delta), criterion=self.criterion)
        else:
            self.basis_ = truncate(full, self.delta, self.criterion)
        self.singular_values_ = full.singular_values
        self.n_components_ = self.basis_.rank
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        return project(self.basis_, X.T).T

    def inverse_transform(self, A):
        check_is_fitted(self, "basis_")
        A = check_array(A)
        return reconstruct_vector(self.basis_, A.T).T

    def projection_error(self, X):
        """Relative Frobenius error of the rank-L projection of ``X``."""
        X = check_array(X)
        R = self.inverse_transform(self.transform(X))
        w = self.basis_.weights
        if w is not None:
            X, R = X * np.sqrt(w), R * np.sqrt(w)
        return float(np.linalg.norm(X - R) / np.linalg.norm(X))
