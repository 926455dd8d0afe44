"""Offline/online reduced-order pipeline, convergence studies and timing.

Offline: deform the channel, run the flow solver over a few periods, compress
each variable with POD and fit one coefficient network per variable. Online:
evaluate the networks at a new time and expand in the POD basis.
"""

from __future__ import annotations

import json
import logging
import os
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ann import CoefficientNetwork, forward, load_model, save_model
from .exceptions import ArtifactMismatchError, InvalidArgumentError, RomforgeError, StageError
from .ffd import StenosisSpec, apply_stenosis, channel_lattice, deform_mesh
from .fom import (FlowSolver, SolverConfig, read_snapshots, run_cycles,
                  waveform_from_spec, write_snapshots)
from .io import write_csv, write_field, write_vtk
from .mesh import Field, WssField, build_channel_mesh, l2_relative_error
from .pod import (POD, VARIABLES, load_basis, project, reconstruct_vector, save_basis,
                  write_spectrum_csv)

log = logging.getLogger(__name__)

SUBDIRS = ("snapshots", "basis", "models", "reports", "fields")
SHORT = {"pressure": "p", "velocity": "u", "wss": "wss"}


def n_workers():
    """Worker count from ``ROMFORGE_THREADS`` (default 1, i.e. serial)."""
    raw = os.environ.get("ROMFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidArgumentError(f"ROMFORGE_THREADS must be an integer, got {raw!r}") from exc
    return max(n, 1)


def _map(fn, jobs, workers=None):
    workers = n_workers() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except RomforgeError as exc:
        raise StageError(name, exc) from exc


# ----------------------------------------------------------------------
# geometry and full-order runs


@dataclass(frozen=True, eq=False)
class Geometry:
    mesh: object
    reference_mesh: object
    lattice: object
    quality: object


def build_geometry(cfg):
    m, f = cfg.mesh, cfg.ffd
    ref = build_channel_mesh(m.length, m.height, m.nx, m.ny)
    lat = channel_lattice(m.length, m.height, f.center_x, f.extent, tuple(f.dims),
                          tuple(f.degrees), pad_x=f.pad_x, margin=f.margin)
    lat = apply_stenosis(lat, StenosisSpec(f.severity, f.center_x, f.extent, 0.0, m.height))
    mesh, quality = deform_mesh(ref, lat)
    return Geometry(mesh, ref, lat, quality)


def solver_config(cfg, n_snapshots=None):
    s = cfg.solver
    wf = waveform_from_spec(s.waveform, s.period, s.flow_factor, s.mean_rate)
    return SolverConfig(nu=s.nu, dt=s.dt, period=s.period, n_cycles=s.n_cycles,
                        piso_correctors=s.piso_correctors, linear_tol=s.linear_tol,
                        div_tol=s.div_tol, waveform=wf, inlet_profile=s.inlet_profile,
                        n_snapshots=s.n_snapshots if n_snapshots is None else n_snapshots,
                        convection=s.convection)


def run_fom(cfg, mesh, n_snapshots=None, log_=None):
    """All snapshots of the sampled cycle as a list."""
    return list(run_cycles(solver_config(cfg, n_snapshots), mesh, log=log_))


def subsample(snapshots, n):
    """Every ``len/n``-th snapshot, re-indexed from zero."""
    total = len(snapshots)
    if n < 1 or total % n:
        raise InvalidArgumentError(f"cannot take {n} equispaced samples from {total}")
    stride = total // n
    picked = snapshots[::stride]
    return [type(s)(k, s.time, s.u, s.p, s.wss) for k, s in enumerate(picked)]


def evaluation_indices(n_total, n_eval):
    """Indices at the cell mid-points ``(k + 1/2) T / n_eval`` of a fine sampling."""
    if n_total % n_eval or (n_total // n_eval) % 2:
        raise InvalidArgumentError(
            f"{n_eval} mid-interval evaluation times are not on a {n_total}-sample grid")
    step = n_total // n_eval
    return np.arange(n_eval) * step + step // 2


def dof_weights(mesh, variable):
    if variable == "pressure":
        return np.asarray(mesh.cell_volumes, float)
    if variable == "velocity":
        return np.repeat(np.asarray(mesh.cell_volumes, float), 2)
    return np.repeat(np.asarray(mesh.face_areas[mesh.wall_faces], float), 2)


def snapshot_arrays(snapshots, variable):
    """``(times, X)`` with one flattened snapshot per row of ``X``."""
    t = np.array([s.time for s in snapshots])
    X = np.stack([s.field(variable).flat() for s in snapshots])
    return t, X


# ----------------------------------------------------------------------
# estimator


def _network_params(train_cfg):
    return dict(neurons=train_cfg.neurons, hidden_layers=train_cfg.hidden_layers,
                activation=train_cfg.activation, epochs=train_cfg.epochs,
                learning_rate=train_cfg.learning_rate, optimizer=train_cfg.optimizer,
                train_fraction=train_cfg.train_fraction, seed=train_cfg.seed)


class PodAnnRegressor(RegressorMixin, BaseEstimator):
    """Time -> full field regressor: POD compression plus a coefficient network.

    ``X`` is a single time column, ``y`` holds one flattened snapshot per
    row. ``predict`` returns reconstructed snapshots in the same layout.
    """

    def __init__(self, delta=0.99, criterion="sigma", n_modes=None, center=False,
                 pod_method="auto", neurons=64, hidden_layers=3, activation="tanh",
                 epochs=5000, learning_rate=1e-3, optimizer="adam", train_fraction=0.95,
                 seed=0, variable="pressure"):
        self.delta = delta
        self.criterion = criterion
        self.n_modes = n_modes
        self.center = center
        self.pod_method = pod_method
        self.neurons = neurons
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.train_fraction = train_fraction
        self.seed = seed
        self.variable = variable

    def fit(self, X, y, dof_weights=None):
        X = check_array(X, ensure_min_samples=2)
        Y = check_array(y, ensure_min_samples=2)
        self.pod_ = POD(delta=self.delta, criterion=self.criterion, n_modes=self.n_modes,
                        center=self.center, method=self.pod_method,
                        variable=self.variable).fit(Y, times=X[:, 0], dof_weights=dof_weights)
        coeffs = self.pod_.transform(Y)
        self.net_ = CoefficientNetwork(
            neurons=self.neurons, hidden_layers=self.hidden_layers, activation=self.activation,
            epochs=self.epochs, learning_rate=self.learning_rate, optimizer=self.optimizer,
            train_fraction=self.train_fraction, seed=self.seed).fit(X, coeffs)
        self.n_features_in_ = 1
        return self

    @property
    def basis_(self):
        return self.pod_.basis_

    def predict_coefficients(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict(X).reshape(len(X), -1)

    def predict(self, X):
        return self.pod_.inverse_transform(self.predict_coefficients(check_array(X)))


def _fit_job(job):
    """Picklable unit of work: one variable, one truncation, one sample set."""
    reg = PodAnnRegressor(variable=job["variable"], **job["params"])
    reg.fit(job["times"][:, None], job["X"], dof_weights=job["weights"])
    return reg.basis_, reg.pod_.singular_values_, reg.net_.model_, reg.net_.history_, \
        reg.net_.train_mask_


def _job(cfg, variable, times, X, weights, delta=None, n_modes=None):
    params = dict(delta=cfg.pod.delta if delta is None else delta, criterion=cfg.pod.criterion,
                  n_modes=n_modes, center=cfg.pod.center, pod_method=cfg.pod.method,
                  **_network_params(cfg.ann[variable]))
    return dict(variable=variable, times=times, X=X, weights=weights, params=params)


# ----------------------------------------------------------------------
# artifacts


@dataclass(eq=False)
class RomArtifacts:
    bases: dict
    models: dict
    mesh_checksum: str
    period: float
    wall_faces: np.ndarray
    provenance: dict = field(default_factory=dict)
    spectra: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    train_masks: dict = field(default_factory=dict)

    def __post_init__(self):
        for v, b in self.bases.items():
            if b.mesh_id and b.mesh_id != self.mesh_checksum:
                raise ArtifactMismatchError(f"{v} basis belongs to mesh {b.mesh_id}")
            if v in self.models and self.models[v].n_outputs != b.rank:
                raise ArtifactMismatchError(
                    f"{v}: network width {self.models[v].n_outputs} != basis rank {b.rank}")

    @property
    def ranks(self):
        return {v: b.rank for v, b in self.bases.items()}

    def save(self, out_dir):
        out = Path(out_dir)
        for sub in ("basis", "models", "reports"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        for v in VARIABLES:
            if v in self.bases:
                save_basis(out / "basis" / f"{v}.bin", self.bases[v])
            if v in self.spectra:
                write_spectrum_csv(out / "reports" / f"{v}_spectrum.csv", self.spectra[v])
            if v in self.models:
                save_model(out / "models" / f"{v}.bin", self.models[v],
                           {"variable": v, "mesh_id": self.mesh_checksum, "period": self.period})
            if v in self.histories:
                self.histories[v].write_csv(out / "reports" / f"{v}_loss.csv")
        np.asarray(self.wall_faces, "<i8").tofile(out / "basis" / "wall_faces.bin")
        return out

    @classmethod
    def load(cls, out_dir):
        out = Path(out_dir)
        bases, models, period = {}, {}, None
        for v in VARIABLES:
            bases[v] = load_basis(out / "basis" / f"{v}.bin")
            models[v], meta = load_model(out / "models" / f"{v}.bin")
            period = float(meta["period"])
        checks = {b.mesh_id for b in bases.values()}
        if len(checks) != 1:
            raise ArtifactMismatchError("bases were built on different meshes")
        wall = np.fromfile(out / "basis" / "wall_faces.bin", dtype="<i8")
        prov = {}
        man = out / "manifest.json"
        if man.is_file():
            prov = json.loads(man.read_text()).get("provenance", {})
        return cls(bases, models, checks.pop(), period, wall, prov)


def _write_manifest(out, cfg, artifacts, stages):
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    doc = {
        "provenance": {"config_digest": cfg.digest(), "seed": cfg.seed,
                       "mesh_checksum": artifacts.mesh_checksum,
                       "created": datetime.now(timezone.utc).isoformat(timespec="seconds")},
        "ranks": artifacts.ranks,
        "stages": stages,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def prepare_out_dir(out_dir):
    out = Path(out_dir)
    for sub in SUBDIRS:
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# offline stages


def pod_stage(cfg, snapshots, mesh, delta=None):
    """POD basis per variable; returns ``(bases, full spectra)``."""
    bases, spectra = {}, {}
    for v in VARIABLES:
        t, X = snapshot_arrays(snapshots, v)
        pod = POD(delta=cfg.pod.delta if delta is None else delta, criterion=cfg.pod.criterion,
                  center=cfg.pod.center, method=cfg.pod.method, variable=v)
        pod.fit(X, times=t, dof_weights=dof_weights(mesh, v))
        bases[v] = _tag(pod.basis_, mesh)
        spectra[v] = pod.singular_values_
    return bases, spectra


def _tag(basis, mesh):
    return replace(basis, mesh_id=mesh.checksum)


def train_stage(cfg, snapshots, bases):
    """One coefficient network per variable fitted to projected snapshots."""
    models, hist, masks = {}, {}, {}
    for v in VARIABLES:
        t, X = snapshot_arrays(snapshots, v)
        coeffs = project(bases[v], X.T).T
        net = CoefficientNetwork(**_network_params(cfg.ann[v])).fit(t[:, None], coeffs)
        models[v], hist[v], masks[v] = net.model_, net.history_, net.train_mask_
    return models, hist, masks


def offline(cfg, out_dir=None, snapshots=None, geometry=None):
    """Deformation, full-order run, POD and training, end to end.

    ``snapshots`` (already sampled) skip the flow solve. With ``out_dir``
    every artifact is persisted; all files except ``manifest.json`` are
    byte-identical across reruns with the same config and seed.
    """
    stages = {}
    tic = time.perf_counter()
    geo = geometry or _stage("ffd", build_geometry, cfg)
    stages["ffd"] = time.perf_counter() - tic
    out = prepare_out_dir(out_dir) if out_dir is not None else None
    if snapshots is None:
        tic = time.perf_counter()
        snapshots = _stage("fom", run_fom, cfg, geo.mesh)
        stages["fom"] = time.perf_counter() - tic
    if out is not None:
        write_snapshots(out / "snapshots", snapshots)
        geo.quality.write_csv(out / "reports" / "mesh_quality.csv")
    tic = time.perf_counter()
    bases, spectra = _stage("pod", pod_stage, cfg, snapshots, geo.mesh)
    stages["pod"] = time.perf_counter() - tic
    tic = time.perf_counter()
    models, hist, masks = _stage("train", train_stage, cfg, snapshots, bases)
    stages["train"] = time.perf_counter() - tic
    art = RomArtifacts(bases, models, geo.mesh.checksum, cfg.solver.period,
                       np.asarray(geo.mesh.wall_faces), {"config_digest": cfg.digest(),
                                                         "seed": cfg.seed},
                       spectra, hist, masks)
    if out is not None:
        art.save(out)
        res = online_evaluate(art, cfg.study.eval_time, geo.mesh)
        write_rom_fields(out / "fields", res, geo.mesh)
        _write_manifest(out, cfg, art, {k: round(v, 3) for k, v in stages.items()})
    return art


# ----------------------------------------------------------------------
# online stage


@dataclass(frozen=True, eq=False)
class OnlineResult:
    time: float
    fields: dict
    coefficients: dict
    seconds: float
    warnings: tuple = ()


def check_mesh(artifacts, mesh):
    if mesh.checksum != artifacts.mesh_checksum:
        raise ArtifactMismatchError(
            f"artifacts were built on mesh {artifacts.mesh_checksum[:12]}, "
            f"configuration gives mesh {mesh.checksum[:12]}; rebuild the artifacts")


def online_evaluate(artifacts, t_new, mesh=None):
    """Reduced-order fields at ``t_new`` (cycle-relative seconds).

    Times outside ``[0, T]`` are evaluated anyway; a warning is attached to
    the result and emitted through :mod:`warnings`.
    """
    tic = time.perf_counter()
    t = float(t_new)
    notes = ()
    if not (0.0 <= t <= artifacts.period):
        notes = (f"t={t} lies outside the trained cycle [0, {artifacts.period}]; "
                 "the networks are extrapolating",)
        warnings.warn(notes[0], RuntimeWarning, stacklevel=2)
    if mesh is not None:
        check_mesh(artifacts, mesh)
    coeffs, out = {}, {}
    for v in VARIABLES:
        a = forward(artifacts.models[v], t)[0]
        coeffs[v] = a
        vec = reconstruct_vector(artifacts.bases[v], a)
        if v == "pressure":
            out[v] = Field("scalar", vec, mesh, t, artifacts.mesh_checksum)
        elif v == "velocity":
            out[v] = Field("vector2", vec.reshape(-1, 2), mesh, t, artifacts.mesh_checksum)
        else:
            out[v] = WssField(vec.reshape(-1, 2), artifacts.wall_faces, mesh, t,
                              artifacts.mesh_checksum)
    return OnlineResult(t, out, coeffs, time.perf_counter() - tic, notes)


def write_rom_fields(directory, result, mesh=None, prefix="rom"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for v, f in result.fields.items():
        write_field(d / f"{prefix}_{SHORT[v]}.bin", f)
    if mesh is not None:
        write_vtk(d / f"{prefix}.vtk", mesh, {"p": result.fields["pressure"].values,
                                              "U": result.fields["velocity"].values})
    return d


def rom_errors(artifacts, snapshots, mesh):
    """Relative L2 error of the ROM against each reference snapshot, per variable."""
    errs = {v: np.empty(len(snapshots)) for v in VARIABLES}
    for k, s in enumerate(snapshots):
        res = online_evaluate(artifacts, s.time, mesh)
        for v in VARIABLES:
            errs[v][k] = l2_relative_error(res.fields[v], s.field(v))
    return errs


def projection_errors(bases, snapshots):
    """Relative weighted L2 distance from each snapshot to the span of its basis."""
    errs = {}
    for v, b in bases.items():
        _, X = snapshot_arrays(snapshots, v)
        R = reconstruct_vector(b, project(b, X.T)).T
        w = b.weights if b.weights is not None else np.ones(X.shape[1])
        errs[v] = np.sqrt(((X - R) ** 2 * w).sum(1) / (X ** 2 * w).sum(1))
    return errs


# ----------------------------------------------------------------------
# studies


def reference_run(cfg, geometry=None, log_=None):
    """Full-order run sampled at every time step of the final cycle."""
    geo = geometry or build_geometry(cfg)
    steps = int(round(cfg.solver.period / cfg.solver.dt))
    return geo, run_fom(cfg, geo.mesh, n_snapshots=steps, log_=log_)


def _split_reference(cfg, reference):
    idx = evaluation_indices(len(reference), cfg.study.n_eval)
    return [reference[i] for i in idx]


def _artifacts_from_job(result, cfg, mesh):
    bases, models, spectra, hist, masks = {}, {}, {}, {}, {}
    for v, (basis, sv, model, h, mask) in result.items():
        bases[v] = _tag(basis, mesh)
        models[v], spectra[v], hist[v], masks[v] = model, sv, h, mask
    return RomArtifacts(bases, models, mesh.checksum, cfg.solver.period,
                        np.asarray(mesh.wall_faces), {"config_digest": cfg.digest()},
                        spectra, hist, masks)


def _run_grid(cfg, mesh, cases):
    """Fit every ``(key, snapshots, delta)`` case; returns artifacts per key."""
    jobs, keys = [], []
    for key, snaps, delta in cases:
        for v in VARIABLES:
            t, X = snapshot_arrays(snaps, v)
            jobs.append(_job(cfg, v, t, X, dof_weights(mesh, v), delta=delta))
            keys.append((key, v))
    results = _map(_fit_job, jobs)
    grouped = {}
    for (key, v), r in zip(keys, results):
        grouped.setdefault(key, {})[v] = r
    return {key: _artifacts_from_job(r, cfg, mesh) for key, r in grouped.items()}


def _summarise(art, snaps_train, eval_snaps, mesh):
    eps = rom_errors(art, eval_snaps, mesh)
    val = {}
    for v in VARIABLES:
        held = [s for s, m in zip(snaps_train, art.train_masks[v]) if not m]
        val[v] = float(np.mean(rom_errors(art, held, mesh)[v])) if held else float("nan")
    return eps, val


def study_mode_convergence(cfg, reference=None, geometry=None, out_dir=None):
    """Errors for each energy threshold at fixed ``solver.n_snapshots``.

    Returns a dict with per-threshold ranks, time-averaged errors on the
    mid-interval evaluation times and on the validation samples, and a
    per-variable ``monotone`` flag (errors non-increasing in delta).
    """
    if reference is None:
        geometry, reference = reference_run(cfg, geometry)
    mesh = geometry.mesh
    train = subsample(reference, cfg.solver.n_snapshots)
    evals = _split_reference(cfg, reference)
    arts = _run_grid(cfg, mesh, [(d, train, d) for d in cfg.study.deltas])
    rows, curves, report = [], {}, {"deltas": list(cfg.study.deltas), "cases": {}}
    for d in cfg.study.deltas:
        eps, val = _summarise(arts[d], train, evals, mesh)
        report["cases"][d] = {"ranks": arts[d].ranks,
                              "mean_error": {v: float(eps[v].mean()) for v in VARIABLES},
                              "max_error": {v: float(eps[v].max()) for v in VARIABLES},
                              "validation_error": val}
        curves[d] = eps
        for v in VARIABLES:
            rows.append((d, v, arts[d].ranks[v], eps[v].mean(), eps[v].max(), val[v]))
    report["monotone"] = {
        v: all(report["cases"][b]["mean_error"][v] <= report["cases"][a]["mean_error"][v]
               for a, b in zip(cfg.study.deltas[:-1], cfg.study.deltas[1:]))
        for v in VARIABLES}
    report["passed"] = all(report["monotone"].values())
    if out_dir is not None:
        rep = prepare_out_dir(out_dir) / "reports"
        write_csv(rep / "mode_convergence.csv",
                  ["delta", "variable", "rank", "mean_error", "max_error", "validation_error"],
                  rows)
        _write_curves(rep / "mode_convergence_eps_t.csv", evals, curves, "delta")
    return report


def study_snapshot_convergence(cfg, reference=None, geometry=None, out_dir=None):
    """Errors for each snapshot count at fixed ``pod.delta``.

    ``ratio`` is the largest over smallest time-averaged error across the
    counts, per variable; ``passed`` compares it with ``study.ratio_band``.
    """
    if reference is None:
        geometry, reference = reference_run(cfg, geometry)
    mesh = geometry.mesh
    evals = _split_reference(cfg, reference)
    counts = list(cfg.study.snapshot_counts)
    trains = {n: subsample(reference, n) for n in counts}
    arts = _run_grid(cfg, mesh, [(n, trains[n], None) for n in counts])
    rows, curves, report = [], {}, {"counts": counts, "cases": {}}
    for n in counts:
        eps, val = _summarise(arts[n], trains[n], evals, mesh)
        report["cases"][n] = {"ranks": arts[n].ranks,
                              "mean_error": {v: float(eps[v].mean()) for v in VARIABLES},
                              "max_error": {v: float(eps[v].max()) for v in VARIABLES},
                              "validation_error": val}
        curves[n] = eps
        for v in VARIABLES:
            rows.append((n, v, arts[n].ranks[v], eps[v].mean(), eps[v].max(), val[v]))
    means = {v: [report["cases"][n]["mean_error"][v] for n in counts] for v in VARIABLES}
    report["ratio"] = {v: max(m) / min(m) for v, m in means.items()}
    report["passed"] = all(r <= cfg.study.ratio_band for r in report["ratio"].values())
    if out_dir is not None:
        rep = prepare_out_dir(out_dir) / "reports"
        write_csv(rep / "snapshot_convergence.csv",
                  ["n_snapshots", "variable", "rank", "mean_error", "max_error",
                   "validation_error"], rows)
        _write_curves(rep / "snapshot_convergence_eps_t.csv", evals, curves, "n_snapshots")
    return report


def _write_curves(path, evals, curves, key):
    rows = []
    for case, eps in curves.items():
        for k, s in enumerate(evals):
            rows.append((case, s.time, *(eps[v][k] for v in VARIABLES)))
    write_csv(path, [key, "time", *(f"eps_{SHORT[v]}" for v in VARIABLES)], rows)


# ----------------------------------------------------------------------
# timing


def time_fom_cycles(cfg, mesh, n_runs=2, warmup_cycles=1):
    """Wall time of ``n_runs`` consecutive cycles after ``warmup_cycles``."""
    scfg = solver_config(cfg, n_snapshots=1)
    solver = FlowSolver(mesh, scfg)
    solver.advance(warmup_cycles * scfg.steps_per_cycle)
    out = []
    for _ in range(n_runs):
        tic = time.perf_counter()
        solver.advance(scfg.steps_per_cycle)
        out.append(time.perf_counter() - tic)
    return out


def time_online(artifacts, mesh, n_calls=100, t_new=None):
    """Per-call wall times of :func:`online_evaluate` (first call discarded)."""
    t = artifacts.period * 0.8 if t_new is None else t_new
    online_evaluate(artifacts, t, mesh)
    out = []
    for _ in range(n_calls):
        tic = time.perf_counter()
        online_evaluate(artifacts, t, mesh)
        out.append(time.perf_counter() - tic)
    return out


def report_speedup(artifacts, cfg, geometry=None, out_dir=None, fom_seconds=None):
    """Median FOM cycle time over median online evaluation time.

    ``fom_seconds`` (a list of cycle timings) skips the flow re-run.
    """
    geo = geometry or build_geometry(cfg)
    check_mesh(artifacts, geo.mesh)
    fom = list(fom_seconds) if fom_seconds is not None else \
        time_fom_cycles(cfg, geo.mesh, cfg.study.fom_timing_runs)
    online = time_online(artifacts, geo.mesh, cfg.study.speedup_calls)
    fom_med = statistics.median(fom)
    on_med = statistics.median(online)
    report = {
        "fom_seconds": fom,
        "fom_median_s": fom_med,
        "fom_spread": (max(fom) - min(fom)) / min(fom) if len(fom) > 1 else 0.0,
        "online_median_ms": 1e3 * on_med,
        "online_mean_ms": 1e3 * statistics.fmean(online),
        "online_std_ms": 1e3 * (statistics.stdev(online) if len(online) > 1 else 0.0),
        "online_calls": len(online),
        "speedup": fom_med / on_med,
    }
    report["passed"] = report["speedup"] >= cfg.study.speedup_min
    if out_dir is not None:
        rep = prepare_out_dir(out_dir) / "reports"
        write_csv(rep / "speedup.csv", ["quantity", "value"],
                  [(k, v) for k, v in report.items() if k != "fom_seconds"])
    return report


def load_reference(out_dir, mesh):
    """Snapshots previously written under ``out_dir/snapshots``."""
    return read_snapshots(Path(out_dir) / "snapshots", mesh)

