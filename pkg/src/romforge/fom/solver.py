"""Collocated finite-volume incompressible Navier-Stokes solver.

Time: BDF2 (implicit Euler on the first step). Space: central face
interpolation for convection, two-point normal gradients for diffusion and
pressure, Gauss cell gradients. The convective flux is frozen at the
previous step. Pressure-velocity coupling is PISO: one momentum predictor
followed by ``piso_correctors`` pressure corrections, each of which leaves
the face fluxes discretely divergence-free up to the pressure-solver
residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, cg

from ..exceptions import ConfigurationError, InvalidArgumentError, SolverFailureError, StepFailureError
from ..mesh import PATCH_NAMES, Field
from .waveform import WaveformBc, channel_boundaries, default_waveform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    nu: float = 4.0e-3
    dt: float = 2.0e-3
    period: float = 0.8
    n_cycles: int = 3
    piso_correctors: int = 2
    linear_tol: float = 1e-10
    div_tol: float = 1e-8
    waveform: WaveformBc = field(default_factory=default_waveform)
    inlet_profile: str = "parabolic"
    n_snapshots: int = 100
    max_linear_iter: int = 5000
    convection: str = "frozen"

    def __post_init__(self):
        if self.convection not in ("frozen", "extrapolated"):
            raise InvalidArgumentError("convection must be 'frozen' or 'extrapolated'")
        if not self.nu > 0:
            raise InvalidArgumentError("nu must be positive")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if not self.period > 0:
            raise InvalidArgumentError("period must be positive")
        ratio = self.period / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise InvalidArgumentError(f"period/dt = {ratio} is not an integer")
        if self.piso_correctors < 2:
            raise InvalidArgumentError("PISO needs at least two correctors")
        if self.n_cycles < 2:
            raise InvalidArgumentError("n_cycles must include at least one warm-up cycle")
        if self.n_snapshots < 1 or self.steps_per_cycle % self.n_snapshots:
            raise InvalidArgumentError(
                f"{self.n_snapshots} snapshots do not divide {self.steps_per_cycle} steps per cycle")

    @property
    def steps_per_cycle(self):
        return int(round(self.period / self.dt))

    @property
    def warmup_cycles(self):
        return self.n_cycles - 1


@dataclass(frozen=True, eq=False)
class FlowState:
    """Velocity, kinematic pressure, face fluxes and boundary face velocities."""

    u: Field
    p: Field
    face_flux: np.ndarray
    time: float
    u_boundary: np.ndarray

    @property
    def mesh(self):
        return self.u.mesh

    def max_divergence(self):
        return float(np.max(np.abs(self.mesh.divergence(self.face_flux))))


def quiescent_state(mesh, time=0.0):
    nb = mesh.n_faces - mesh.n_internal_faces
    return FlowState(
        u=Field("vector2", np.zeros((mesh.n_cells, 2)), mesh, time),
        p=Field("scalar", np.zeros(mesh.n_cells), mesh, time),
        face_flux=np.zeros(mesh.n_faces),
        time=time,
        u_boundary=np.zeros((nb, 2)),
    )


def state_from_arrays(mesh, u, p=None, time=0.0, u_boundary=None, face_flux=None):
    """Build a state from raw arrays; fluxes default to interpolated ``u``."""
    nb = mesh.n_faces - mesh.n_internal_faces
    u = np.asarray(u, float)
    p = np.zeros(mesh.n_cells) if p is None else np.asarray(p, float)
    ub = u[mesh.owner[mesh.n_internal_faces:]] if u_boundary is None else np.asarray(u_boundary, float)
    if ub.shape != (nb, 2):
        raise InvalidArgumentError("u_boundary must have one vector per boundary face")
    ops = FvOps.of(mesh)
    phi = ops.face_flux(u, ub) if face_flux is None else np.asarray(face_flux, float)
    return FlowState(Field("vector2", u, mesh, time), Field("scalar", p, mesh, time), phi, time, ub)


# ----------------------------------------------------------------------
# discrete operators


class FvOps:
    """Geometric coefficients and sparse patterns cached per mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.nc = mesh.n_cells
        self.ni = mesh.n_internal_faces
        self.own = np.asarray(mesh.owner)
        self.own_i = self.own[: self.ni]
        self.nbr = np.asarray(mesh.neighbour)
        self.bown = self.own[self.ni:]
        self.w = np.asarray(mesh.interpolation_weights)
        self.S = np.asarray(mesh.face_area_vectors)
        self.magS = np.asarray(mesh.face_areas)
        self.delta = np.asarray(mesh.delta_coeffs)
        self.V = np.asarray(mesh.cell_volumes)
        # |S| / (n . d) : two-point normal-gradient coefficient per face
        self.gamma = self.magS * self.delta
        self.patch_slices = {}
        for name in PATCH_NAMES:
            ids = mesh.boundary_patches[name]
            self.patch_slices[name] = ids - self.ni
        rows = np.concatenate([np.arange(self.nc), self.own_i, self.nbr])
        cols = np.concatenate([np.arange(self.nc), self.nbr, self.own_i])
        self._pattern = (rows, cols)

    @classmethod
    def of(cls, mesh):
        ops = mesh.__dict__.get("_fv_ops")
        if ops is None:
            ops = cls(mesh)
            mesh.__dict__["_fv_ops"] = ops
        return ops

    def csr(self, diag, upper, lower):
        data = np.concatenate([diag, upper, lower])
        return sp.csr_matrix((data, self._pattern), shape=(self.nc, self.nc))

    def sum_faces(self, internal, boundary):
        """Owner-positive/neighbour-negative accumulation of face quantities."""
        out = np.bincount(self.own_i, weights=internal, minlength=self.nc)
        out -= np.bincount(self.nbr, weights=internal, minlength=self.nc)
        out += np.bincount(self.bown, weights=boundary, minlength=self.nc)
        return out

    def interpolate(self, cell_values):
        w = self.w if cell_values.ndim == 1 else self.w[:, None]
        return w * cell_values[self.own_i] + (1.0 - w) * cell_values[self.nbr]

    def face_flux(self, u, u_boundary):
        """``u_f . S_f`` with linear interpolation inside, boundary values outside."""
        uf = self.interpolate(u)
        phi = np.empty(self.mesh.n_faces)
        phi[: self.ni] = np.einsum("ij,ij->i", uf, self.S[: self.ni])
        phi[self.ni:] = np.einsum("ij,ij->i", u_boundary, self.S[self.ni:])
        return phi

    def gradient(self, phi_cells, phi_boundary):
        """Gauss cell gradient of a scalar field given boundary face values."""
        pf = self.interpolate(phi_cells)
        g = np.empty((self.nc, 2))
        for c in range(2):
            g[:, c] = self.sum_faces(pf * self.S[: self.ni, c], phi_boundary * self.S[self.ni:, c])
        return g / self.V[:, None]


def _jacobi(A):
    d = A.diagonal()
    inv = np.where(d != 0, 1.0 / d, 1.0)
    return LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def _solve(method, A, b, x0, tol, maxiter, what):
    history = []
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), history

    def record(xk):
        history.append(float(np.linalg.norm(b - A @ xk)) / bnorm)

    x, info = method(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=_jacobi(A),
                     callback=record)
    if info != 0:
        raise SolverFailureError(
            f"{what}: {method.__name__} did not converge (info={info}, "
            f"last residual {history[-1] if history else float('nan'):.3e})", history)
    return x, history


# ----------------------------------------------------------------------
# boundary conditions


def _boundary_values(ops, bcs, u_cells, t):
    """Boundary face velocities: prescribed on fixed patches, owner values otherwise."""
    ub = np.empty((ops.mesh.n_faces - ops.ni, 2))
    for name, sl in ops.patch_slices.items():
        spec = bcs.velocity[name]
        if spec == "zero_gradient":
            ub[sl] = u_cells[ops.bown[sl]]
        else:
            ub[sl] = spec(ops.mesh, ops.mesh.boundary_patches[name], t)
    return ub


def apply_boundary_conditions(state, bcs, t):
    """Return ``state`` with boundary face velocities evaluated at time ``t``."""
    ops = FvOps.of(state.mesh)
    ub = _boundary_values(ops, bcs, np.asarray(state.u.values), t)
    return replace(state, u_boundary=ub)


def _pressure_boundary(ops, bcs, p_cells):
    pb = p_cells[ops.bown].copy()
    fixed = np.zeros(len(pb), bool)
    for name, sl in ops.patch_slices.items():
        v = bcs.pressure[name]
        if v != "zero_gradient":
            pb[sl] = float(v)
            fixed[sl] = True
    return pb, fixed


# ----------------------------------------------------------------------
# momentum


@dataclass(frozen=True, eq=False)
class MomentumSystem:
    """Per-cell integrated momentum equations ``A u = source - V grad p``.

    ``diag``/``upper``/``lower`` are shared by both velocity components;
    ``source`` has shape ``(n_cells, 2)``.
    """

    ops: FvOps
    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    source: np.ndarray
    u_boundary: np.ndarray

    def matrix(self):
        return self.ops.csr(self.diag, self.upper, self.lower)

    def offdiag_product(self, u):
        o = self.ops
        out = np.empty_like(u)
        for c in range(u.shape[1]):
            out[:, c] = (np.bincount(o.own_i, weights=self.upper * u[o.nbr, c], minlength=o.nc)
                         + np.bincount(o.nbr, weights=self.lower * u[o.own_i, c], minlength=o.nc))
        return out


def assemble_momentum(state_n, state_nm1, cfg, t_np1, bcs=None, time_scheme=None):
    """Assemble the linearised momentum system for the step to ``t_np1``.

    ``state_nm1 = None`` (or ``time_scheme="euler"``) selects implicit Euler.
    The pressure gradient is added by the caller.
    """
    bcs = bcs or channel_boundaries(cfg.waveform, cfg.inlet_profile)
    mesh = state_n.mesh
    ops = FvOps.of(mesh)
    ni = ops.ni
    dt, nu = cfg.dt, cfg.nu
    scheme = time_scheme or ("euler" if state_nm1 is None else "bdf2")
    phi = state_n.face_flux
    if scheme == "bdf2" and cfg.convection == "extrapolated":
        phi = 2.0 * phi - state_nm1.face_flux
    un = np.asarray(state_n.u.values)

    if scheme == "bdf2":
        c0 = 1.5 / dt
        source = ops.V[:, None] * (2.0 * un - 0.5 * np.asarray(state_nm1.u.values)) / dt
    elif scheme == "euler":
        c0 = 1.0 / dt
        source = ops.V[:, None] * un / dt
    else:
        raise InvalidArgumentError(f"unknown time scheme {scheme!r}")
    diag = c0 * ops.V

    # internal faces: central convection + two-point diffusion
    pi, w = phi[:ni], ops.w
    g = nu * ops.gamma[:ni]
    upper = pi * (1.0 - w) - g
    lower = -pi * w - g
    diag = diag + np.bincount(ops.own_i, weights=pi * w + g, minlength=ops.nc)
    diag = diag + np.bincount(ops.nbr, weights=-pi * (1.0 - w) + g, minlength=ops.nc)

    # boundary faces
    ub = _boundary_values(ops, bcs, un, t_np1)
    pb, gb = phi[ni:], nu * ops.gamma[ni:]
    fixed = np.zeros(len(pb), bool)
    for name, sl in ops.patch_slices.items():
        fixed[sl] = bcs.velocity_fixed(name)
    d_b = np.where(fixed, gb, pb)
    diag = diag + np.bincount(ops.bown, weights=d_b, minlength=ops.nc)
    coef = np.where(fixed, gb - pb, 0.0)
    for c in range(2):
        source[:, c] += np.bincount(ops.bown, weights=coef * ub[:, c], minlength=ops.nc)
    return MomentumSystem(ops, diag, upper, lower, source, ub)


def momentum_predictor(system, state_n, cfg, bcs):
    ops = system.ops
    pb, _ = _pressure_boundary(ops, bcs, np.asarray(state_n.p.values))
    gradp = ops.gradient(np.asarray(state_n.p.values), pb)
    rhs = system.source - ops.V[:, None] * gradp
    A = system.matrix()
    u = np.empty_like(rhs)
    x0 = np.asarray(state_n.u.values)
    for c in range(2):
        u[:, c], _ = _solve(bicgstab, A, rhs[:, c], x0[:, c], cfg.linear_tol,
                            cfg.max_linear_iter, f"momentum[{c}]")
    return u


# ----------------------------------------------------------------------
# pressure


def laplacian_matrix(ops, face_coeff, dirichlet_mask):
    """SPD matrix of ``-sum_f k_f (p_N - p_P)`` with Dirichlet boundary faces."""
    k = face_coeff[: ops.ni]
    kb = np.where(dirichlet_mask, face_coeff[ops.ni:], 0.0)
    diag = (np.bincount(ops.own_i, weights=k, minlength=ops.nc)
            + np.bincount(ops.nbr, weights=k, minlength=ops.nc)
            + np.bincount(ops.bown, weights=kb, minlength=ops.nc))
    return ops.csr(diag, -k, -k), kb


def solve_poisson(mesh, face_coeff, rhs, dirichlet_mask=None, dirichlet_values=None,
                  pin=None, x0=None, tol=1e-10, maxiter=5000):
    """Solve ``sum_f k_f (p_N - p_P) = rhs_P`` per cell (rhs volume-integrated).

    Boundary faces flagged in ``dirichlet_mask`` take ``dirichlet_values``;
    all others are homogeneous Neumann. If no face is Dirichlet the system is
    singular: ``pin`` (a cell index fixed at zero) is required and the source
    is projected onto zero mean for compatibility.

    Returns ``(p, residual_history)``.
    """
    ops = FvOps.of(mesh)
    nb = mesh.n_faces - ops.ni
    mask = np.zeros(nb, bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    vals = np.zeros(nb) if dirichlet_values is None else np.asarray(dirichlet_values, float)
    A, kb = laplacian_matrix(ops, np.asarray(face_coeff, float), mask)
    b = -np.asarray(rhs, float) + np.bincount(ops.bown, weights=kb * vals, minlength=ops.nc)
    if not mask.any():
        if pin is None:
            raise ConfigurationError(
                "pressure system is all-Neumann and singular: set a pressure pin "
                "or a fixed-pressure patch")
        b = b - b.mean()
        keep = np.ones(ops.nc, bool)
        keep[pin] = False
        D = sp.diags(keep.astype(float))
        A = (D @ A @ D + sp.diags((~keep).astype(float))).tocsr()
        b = np.where(keep, b, 0.0)
    x0 = None if x0 is None else np.asarray(x0, float)
    return _solve(cg, A, b, x0, tol, maxiter, "pressure")


def solve_pressure_poisson(ops, hbya_flux, rAU, bcs, cfg, p0=None):
    """Pressure making ``hbya_flux - rAU_f grad(p)_f . S_f`` divergence-free."""
    kf = np.empty(ops.mesh.n_faces)
    kf[: ops.ni] = ops.interpolate(rAU) * ops.gamma[: ops.ni]
    kf[ops.ni:] = rAU[ops.bown] * ops.gamma[ops.ni:]
    pb, fixed = _pressure_boundary(ops, bcs, np.zeros(ops.nc))
    div = ops.sum_faces(hbya_flux[: ops.ni], hbya_flux[ops.ni:])
    p, _ = solve_poisson(ops.mesh, kf, div, fixed, pb, pin=bcs.pressure_pin, x0=p0,
                         tol=cfg.linear_tol, maxiter=cfg.max_linear_iter)
    return p, kf, pb, fixed


# ----------------------------------------------------------------------
# PISO


def piso_loop(system, u_star, state_n, cfg, t_np1, bcs, n_correctors=None):
    """Run the pressure correctors on a predicted velocity; returns the new state."""
    n_corr = cfg.piso_correctors if n_correctors is None else n_correctors
    if n_corr < 1:
        raise InvalidArgumentError("PISO needs at least one corrector")
    ops = system.ops
    ni = ops.ni
    u = u_star
    p = np.asarray(state_n.p.values)
    rAU = ops.V / system.diag
    ub = system.u_boundary.copy()
    fixed_u = np.zeros(len(ub), bool)
    for name, sl in ops.patch_slices.items():
        fixed_u[sl] = bcs.velocity_fixed(name)
    for _ in range(n_corr):
        hbya = (system.source - system.offdiag_product(u)) / system.diag[:, None]
        ub_h = np.where(fixed_u[:, None], ub, hbya[ops.bown])
        phi_h = ops.face_flux(hbya, ub_h)
        p, kf, pb, fixed_p = solve_pressure_poisson(ops, phi_h, rAU, bcs, cfg, p0=p)
        phi = phi_h.copy()
        phi[:ni] -= kf[:ni] * (p[ops.nbr] - p[ops.own_i])
        phi[ni:] -= np.where(fixed_p, kf[ni:] * (pb - p[ops.bown]), 0.0)
        pb_full = np.where(fixed_p, pb, p[ops.bown])
        u = hbya - rAU[:, None] * ops.gradient(p, pb_full)
    ub = np.where(fixed_u[:, None], ub, u[ops.bown])
    mesh = ops.mesh
    return FlowState(Field("vector2", u, mesh, t_np1), Field("scalar", p, mesh, t_np1),
                     phi, t_np1, ub)


def bdf2_step(state_n, state_nm1, cfg, t_np1, bcs=None, n_correctors=None):
    """Advance one step; ``state_nm1 = None`` bootstraps with implicit Euler."""
    bcs = bcs or channel_boundaries(cfg.waveform, cfg.inlet_profile)
    system = assemble_momentum(state_n, state_nm1, cfg, t_np1, bcs)
    u_star = momentum_predictor(system, state_n, cfg, bcs)
    new = piso_loop(system, u_star, state_n, cfg, t_np1, bcs, n_correctors)
    div = new.max_divergence()
    if not np.isfinite(div) or div > cfg.div_tol:
        raise StepFailureError(
            f"max cell divergence {div:.3e} exceeds {cfg.div_tol:.1e} at t={t_np1:.6g}",
            time=t_np1)
    return new


class FlowSolver:
    """Stateful time stepper wrapping :func:`bdf2_step`."""

    def __init__(self, mesh, cfg, bcs=None, state=None):
        self.mesh = mesh
        self.cfg = cfg
        self.bcs = bcs or channel_boundaries(cfg.waveform, cfg.inlet_profile)
        self.state = state or quiescent_state(mesh)
        self.previous = None
        self.n_steps = 0

    @property
    def time(self):
        return self.state.time

    def step(self):
        t_new = (self.n_steps + 1) * self.cfg.dt + self._t0
        try:
            new = bdf2_step(self.state, self.previous, self.cfg, t_new, self.bcs)
        except SolverFailureError as exc:
            raise StepFailureError(f"t={t_new:.6g}: {exc}", time=t_new) from exc
        self.previous, self.state = self.state, new
        self.n_steps += 1
        return new

    @property
    def _t0(self):
        if not hasattr(self, "_start_time"):
            self._start_time = self.state.time
        return self._start_time

    def advance(self, n_steps):
        for _ in range(n_steps):
            self.step()
        return self.state
