"""Acceptance criteria 1-9 at their stated tolerances.

Each check records its outcome before asserting so that the terminal
summary lists every criterion as PASS or FAIL. Criteria 3, 4 and 8 share
one desk-scale reference run (64x32 stenosed channel, every time step of
the final cycle stored) and take several minutes.
"""

import time

import numpy as np
import pytest
from scipy.linalg import svdvals

from romforge.ann import (CoefficientDataset, TrainConfig, backward, fit_scalers, init_model,
                          split_dataset, train)
from romforge.config import ExperimentConfig, parse_config
from romforge.ffd import (FfdLattice, StenosisSpec, apply_stenosis, channel_lattice, deform_mesh,
                          min_lumen_height)
from romforge.fom import (FlowSolver, SolverConfig, WaveformBc, compute_wss,
                          dirichlet_boundaries, solve_poisson, state_from_arrays)
from romforge.mesh import build_channel_mesh
from romforge.pipeline import (offline, reference_run, report_speedup,
                               study_mode_convergence, study_snapshot_convergence, subsample)
from romforge.pod import SnapshotMatrix, compute_pod, project, reconstruct_vector, select_rank

VARS = ("pressure", "velocity", "wss")


# ----------------------------------------------------------------------
# 1. POD optimality


def test_criterion_1_eckart_young(acceptance):
    r = np.random.default_rng(2024)
    tic = time.perf_counter()
    worst = 0.0
    for k in range(50):
        m = int(r.integers(20, 501))
        n = int(r.integers(2, min(m, 100) + 1))
        # graded spectrum so truncation errors span many orders of magnitude
        U, _ = np.linalg.qr(r.normal(size=(m, n)))
        V, _ = np.linalg.qr(r.normal(size=(n, n)))
        A = (U * np.logspace(0, -r.uniform(1, 6), n)) @ V.T
        b = compute_pod(SnapshotMatrix("pressure", A, np.arange(n, dtype=float)),
                        method="svd" if k % 2 else "auto")
        s = svdvals(A)  # independent LAPACK driver (gesdd via scipy)
        for L in sorted({1, n // 2, max(n - 1, 1)}):
            bl = b.truncate(min(L, b.rank))
            R = reconstruct_vector(bl, project(bl, A))
            lhs = np.linalg.norm(A - R) ** 2 / np.linalg.norm(A) ** 2
            rhs = np.sum(s[L:] ** 2) / np.sum(s ** 2)
            worst = max(worst, abs(lhs - rhs))
    elapsed = time.perf_counter() - tic
    ok = worst <= 1e-10 and elapsed < 60
    acceptance(1, "eckart-young", ok, f"max |err^2 - tail| = {worst:.2e}, {elapsed:.1f} s")
    assert ok


# ----------------------------------------------------------------------
# 2. energy criterion


def test_criterion_2_select_rank(acceptance):
    cases = [
        ([3, 2, 1], 0.5, "sigma", 1), ([3, 2, 1], 0.6, "sigma", 2),
        ([3, 2, 1], 0.9, "sigma", 3), ([3, 2, 1], 1.0, "sigma", 3),
        ([3, 2, 1], 0.64, "sigma2", 1), ([3, 2, 1], 0.65, "sigma2", 2),
        ([3, 2, 1], 0.92, "sigma2", 2), ([3, 2, 1], 0.93, "sigma2", 3),
        ([10, 1, 1, 1, 1], 0.7, "sigma", 1), ([10, 1, 1, 1, 1], 0.72, "sigma", 2),
        ([1, 1, 1, 1], 0.5, "sigma", 2), ([5], 0.99, "sigma", 1),
    ]
    # hand values: [3,2,1] cumulative sigma 3/6, 5/6, 1; sigma^2 9/14, 13/14 = 0.928.., 1;
    # [10,1,1,1,1] cumulative 10/14 = 0.714..
    got = [select_rank(s, d, c) for s, d, c, _ in cases]
    exact = got == [c[3] for c in cases]
    deltas = np.linspace(0.01, 1.0, 200)
    mono = all(np.all(np.diff([select_rank(s, d, c) for d in deltas]) >= 0)
               for s in ([3, 2, 1], [10, 1, 1, 1, 1], np.logspace(0, -5, 30))
               for c in ("sigma", "sigma2"))
    ok = exact and mono
    acceptance(2, "select_rank", ok, f"hand cases {sum(g == c[3] for g, c in zip(got, cases))}"
                                     f"/{len(cases)}, monotone={mono}")
    assert ok


# ----------------------------------------------------------------------
# 3, 4, 8. desk pipeline


@pytest.fixture(scope="module")
def desk():
    cfg = ExperimentConfig()
    geo, ref = reference_run(cfg)
    return cfg, geo, ref


@pytest.mark.slow
def test_criterion_3_mode_convergence(desk, acceptance, tmp_path):
    cfg, geo, ref = desk
    tic = time.perf_counter()
    rep = study_mode_convergence(cfg, ref, geo, tmp_path)
    elapsed = time.perf_counter() - tic
    final = rep["cases"][max(cfg.study.deltas)]["mean_error"]
    curve = {v: [rep["cases"][d]["mean_error"][v] for d in cfg.study.deltas] for v in VARS}
    ranks = {v: [rep["cases"][d]["ranks"][v] for d in cfg.study.deltas] for v in VARS}
    mono = all(rep["monotone"].values())
    within = all(final[v] <= 0.05 for v in VARS)
    ok = mono and within and elapsed < 2 * 3600
    detail = "; ".join(f"{v}: ranks {ranks[v]} errors "
                       + "/".join(f"{e:.2%}" for e in curve[v]) for v in VARS)
    acceptance(3, "monotone over delta", mono, detail)
    acceptance(3, "delta=0.99 error <= 5%", within,
               ", ".join(f"{v}={final[v]:.2%}" for v in VARS) + f", study {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_4_snapshot_insensitivity(desk, acceptance, tmp_path):
    cfg, geo, ref = desk
    rep = study_snapshot_convergence(cfg, ref, geo, tmp_path)
    errs = {v: [rep["cases"][n]["mean_error"][v] for n in rep["counts"]] for v in VARS}
    ok = all(rep["ratio"][v] <= 2.0 for v in VARS)
    acceptance(4, "max/min error over N <= 2", ok, "; ".join(
        f"{v}: ratio {rep['ratio'][v]:.2f} ("
        + "/".join(f"{e:.2%}" for e in errs[v]) + f" for N={rep['counts']})" for v in VARS))
    assert ok


@pytest.mark.slow
def test_criterion_8_speedup(desk, acceptance, tmp_path):
    cfg, geo, ref = desk
    art = offline(cfg, snapshots=subsample(ref, cfg.solver.n_snapshots), geometry=geo)
    # full cycles timed after one warm-up cycle, median over study.fom_timing_runs
    rep = report_speedup(art, cfg, geo, tmp_path)
    ok = rep["speedup"] >= 100
    acceptance(8, "online >= 100x faster than one cycle", ok,
               f"FOM cycle {rep['fom_median_s']:.1f} s (spread {rep['fom_spread']:.0%}), online {rep['online_median_ms']:.3f} ms "
               f"(+-{rep['online_std_ms']:.3f}), speed-up {rep['speedup']:.3g}")
    assert ok


# ----------------------------------------------------------------------
# 5. full-order verification

NU_TG = 0.5


def _vortex(x, t):
    e = np.exp(-2 * NU_TG * t)
    return np.stack([np.sin(x[:, 0]) * np.cos(x[:, 1]) * e,
                     -np.cos(x[:, 0]) * np.sin(x[:, 1]) * e], axis=1)


def _vortex_run(mesh, dt, t_end=0.4):
    cfg = SolverConfig(nu=NU_TG, dt=dt, period=t_end, n_snapshots=1, piso_correctors=4)
    ni = mesh.n_internal_faces
    st = state_from_arrays(mesh, _vortex(mesh.cell_centers, 0.0),
                           u_boundary=_vortex(mesh.face_centers[ni:], 0.0))
    solver = FlowSolver(mesh, cfg, dirichlet_boundaries(_vortex, 0), st)
    worst_div = 0.0
    for _ in range(cfg.steps_per_cycle):
        worst_div = max(worst_div, solver.step().max_divergence())
    return solver.state.u.values, worst_div


def test_criterion_5_temporal_order(acceptance):
    # Richardson triplet: successive differences of the solution at t = 0.4
    mesh = build_channel_mesh(np.pi, np.pi, 64, 64)
    runs = [_vortex_run(mesh, dt) for dt in (0.025, 0.0125, 0.00625)]
    V = mesh.cell_volumes[:, None]
    d1 = np.sqrt(np.sum((runs[0][0] - runs[1][0]) ** 2 * V))
    d2 = np.sqrt(np.sum((runs[1][0] - runs[2][0]) ** 2 * V))
    order = np.log2(d1 / d2)
    div = max(r[1] for r in runs)
    ok = abs(order - 2.0) <= 0.2
    acceptance(5, "BDF2 temporal order", ok, f"observed {order:.3f}")
    acceptance(5, "divergence on vortex runs", div <= 1e-8, f"max {div:.2e}")
    assert ok and div <= 1e-8


def test_criterion_5_spatial_order(acceptance):
    errs = []
    for n in (16, 32, 64):
        m = build_channel_mesh(1, 1, n, n)
        c = m.cell_centers
        exact = np.cos(np.pi * c[:, 0]) * np.cos(np.pi * c[:, 1])
        p, _ = solve_poisson(m, m.face_areas * m.delta_coeffs,
                             -2 * np.pi ** 2 * exact * m.cell_volumes, pin=0)
        d = p - exact
        d -= np.sum(d * m.cell_volumes)  # pressure is defined up to a constant
        errs.append(np.sqrt(np.sum(d * d * m.cell_volumes)))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    ok = bool(np.all(np.abs(orders - 2.0) <= 0.2))
    acceptance(5, "Poisson spatial order", ok, "observed " + ", ".join(f"{o:.3f}" for o in orders))
    assert ok


def test_criterion_5_poiseuille(acceptance):
    H, rate = 0.1, 0.015
    mesh = build_channel_mesh(0.6, H, 64, 32)
    cfg = SolverConfig(waveform=WaveformBc([0.0, 0.8], [rate, rate]))
    solver = FlowSolver(mesh, cfg)
    worst_div = 0.0
    for _ in range(400):
        worst_div = max(worst_div, solver.step().max_divergence())
    u_centre = 1.5 * rate / H  # analytic centreline speed for this flow rate
    target = 2 * cfg.nu * u_centre / (H / 2)
    w = compute_wss(solver.state, cfg)
    x = mesh.face_centers[w.face_ids, 0]
    developed = x > 0.4
    mag = np.linalg.norm(w.values[developed], axis=1)
    err = np.abs(mag - target).max() / target
    acceptance(5, "divergence <= 1e-8 every step", worst_div <= 1e-8, f"max {worst_div:.2e}")
    acceptance(5, "Poiseuille WSS within 2%", err <= 0.02,
               f"max rel. error {err:.3%} vs 2 nu U / H = {target:.4e}")
    assert worst_div <= 1e-8 and err <= 0.02


# ----------------------------------------------------------------------
# 6. free-form deformation


def test_criterion_6_ffd(acceptance):
    ref = build_channel_mesh(0.6, 0.1, 64, 32)
    lat = channel_lattice(0.6, 0.1, 0.2, 0.2)
    ident, _ = deform_mesh(ref, apply_stenosis(lat, StenosisSpec(0.0, 0.2, 0.2, 0.0, 0.1)))
    d0 = float(np.abs(ident.vertices - ref.vertices).max())
    spec = StenosisSpec(0.7, 0.2, 0.2, 0.0, 0.1)
    sten = apply_stenosis(lat, spec)
    h = min_lumen_height(sten, spec)
    # the lumen seen by the mesh: narrowest wall-to-wall gap over vertex columns
    mesh, q = deform_mesh(ref, sten)
    v = mesh.vertices
    h_mesh = float((v[:, -1, 1] - v[:, 0, 1]).min())
    r = np.random.default_rng(6)
    wl = FfdLattice.from_box((0, 0), (1, 1), dims=(7, 5), weights=r.uniform(0.1, 10, (7, 5)))
    _, vals = wl.rational_basis(r.uniform(0, 1, (10_000, 2)))
    pou = float(np.abs(vals.sum(axis=1) - 1).max())
    checks = [
        ("severity 0 identity", d0 <= 1e-12, f"max displacement {d0:.1e}"),
        ("lumen 0.3 H +- 2%", abs(h / 0.03 - 1) <= 0.02 and abs(h_mesh / 0.03 - 1) <= 0.02,
         f"lattice {h / 0.1:.4f} H, mesh {h_mesh / 0.1:.4f} H"),
        ("positive cell volumes", q.min_cell_volume > 0, f"min volume {q.min_cell_volume:.3e}"),
        ("partition of unity", pou <= 1e-12, f"max deviation {pou:.1e} at 1e4 points"),
    ]
    for name, ok, detail in checks:
        acceptance(6, name, ok, detail)
    assert all(c[1] for c in checks)


# ----------------------------------------------------------------------
# 7. networks


def _max_rel_grad_error(model, x, y, h=1e-4):
    """Largest per-parameter relative difference, analytic vs finite differences.

    The oracle is the fourth-order central stencil: with ``h = 1e-4`` its
    truncation error is ~1e-16 and its roundoff ~1e-12, so components of a
    few 1e-6 are still resolved to better than 1e-5. Below an absolute 1e-10
    both numbers are roundoff (dead ReLU units have exactly zero gradient).
    """
    _, gW, gb = backward(model, x, y)
    params = [w.copy() for w in model.weights] + [b.copy() for b in model.biases]
    nW = len(model.weights)

    def loss():
        return backward(model.with_params(params[:nW], params[nW:]), x, y)[0]

    worst = 0.0
    for p, g in zip(params, gW + gb):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            f = {}
            for k in (-2, -1, 1, 2):
                flat[i] = old + k * h
                f[k] = loss()
            flat[i] = old
            fd = (f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * h)
            scale = max(abs(fd), abs(gflat[i]))
            if scale > 1e-10:
                worst = max(worst, abs(fd - gflat[i]) / scale)
    return worst


def test_criterion_7_gradient_check(acceptance):
    worst = {}
    for seed in range(5):
        r = np.random.default_rng(seed)
        x = r.uniform(-1, 1, 8)
        y = r.normal(size=(8, 3))
        for act in ("tanh", "relu"):
            model = init_model([1, 12, 12, 12, 3], act, seed)
            model = model.with_params(model.weights, [b + 0.05 for b in model.biases])
            worst[(seed, act)] = _max_rel_grad_error(model, x, y)
    m = max(worst.values())
    ok = m <= 1e-5
    acceptance(7, "gradient check, 5 seeds", ok, f"max relative error {m:.2e}")
    assert ok


def test_criterion_7_determinism_and_split(acceptance):
    t = np.linspace(0, 0.8, 100, endpoint=False)
    y = np.column_stack([np.sin(2 * np.pi * t / 0.8), np.cos(4 * np.pi * t / 0.8)])
    cfg = TrainConfig(epochs=300, learning_rate=1e-3, neurons=32, activation="tanh", seed=11)

    def fit():
        data = CoefficientDataset(t, y).split(cfg.train_fraction, cfg.seed)
        model = init_model(cfg.layer_sizes(2), cfg.activation, cfg.seed)
        model = fit_scalers(model, t[data.train_mask], y[data.train_mask])
        out, hist = train(model, data, cfg)
        return b"".join(w.tobytes() for w in out.weights + out.biases) + hist.train.tobytes()

    same = fit() == fit()
    tr, va = split_dataset(100, 0.95, 0)
    split_ok = tr.sum() == 95 and va.sum() == 5 and not np.any(tr & va)
    acceptance(7, "bit-identical retraining", same)
    acceptance(7, "95/5 split of 100", split_ok, f"{tr.sum()}/{va.sum()}")
    assert same and split_ok


# ----------------------------------------------------------------------
# 9. determinism

SMALL = """
mesh.nx = 32
mesh.ny = 16
solver.dt = 0.004
solver.n_cycles = 2
solver.n_snapshots = 50
ffd.severity = 0.5
ann.epochs = 500
study.snapshot_counts = 50, 100
study.n_eval = 20
run.seed = 5
"""


def test_criterion_9_determinism(acceptance, tmp_path):
    cfg = parse_config(SMALL)
    offline(cfg, tmp_path / "a")
    offline(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    wanted = [f for f in files if f.parts[0] in ("basis", "models", "fields", "snapshots")]
    differ = [str(f) for f in wanted
              if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = not differ and any(f.parts[0] == "models" for f in wanted)
    acceptance(9, "byte-identical offline reruns", ok,
               f"{len(wanted)} files compared, {len(differ)} differ {differ[:3]}")
    assert ok
