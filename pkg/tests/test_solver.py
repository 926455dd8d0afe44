import numpy as np
import pytest

from romforge.exceptions import ConfigurationError, InvalidArgumentError, StepFailureError
from romforge.fom import (FlowSolver, FvOps, SolverConfig, WaveformBc, compute_wss,
                          dirichlet_boundaries, quiescent_state, read_snapshots, run_cycles,
                          snapshot_times, solve_poisson, state_from_arrays, write_snapshots)
from romforge.mesh import build_channel_mesh

CONSTANT = WaveformBc([0.0, 0.8], [0.015, 0.015])


def test_config_validation():
    for bad in (dict(nu=0.0), dict(dt=-1.0), dict(dt=0.003), dict(piso_correctors=1),
                dict(n_cycles=1), dict(n_snapshots=7), dict(convection="upwind")):
        with pytest.raises(InvalidArgumentError):
            SolverConfig(**bad)
    cfg = SolverConfig()
    assert cfg.steps_per_cycle == 400 and cfg.warmup_cycles == 2


def test_snapshot_times():
    np.testing.assert_allclose(snapshot_times(SolverConfig(), 4), [0, 0.2, 0.4, 0.6])


def test_fv_ops_cached(channel):
    assert FvOps.of(channel) is FvOps.of(channel)


def test_gradient_exact_for_linear_field(channel):
    ops = FvOps.of(channel)
    f = lambda x: 2.0 * x[:, 0] - 3.0 * x[:, 1] + 1.0
    g = ops.gradient(f(channel.cell_centers),
                     f(channel.face_centers[channel.n_internal_faces:]))
    np.testing.assert_allclose(g, np.tile([2.0, -3.0], (channel.n_cells, 1)), atol=1e-12)


def _poisson_error(n):
    m = build_channel_mesh(1, 1, n, n)
    c = m.cell_centers
    exact = np.cos(np.pi * c[:, 0]) * np.cos(np.pi * c[:, 1])
    k = m.face_areas * m.delta_coeffs
    p, hist = solve_poisson(m, k, -2 * np.pi ** 2 * exact * m.cell_volumes, pin=0)
    d = p - exact
    d -= np.sum(d * m.cell_volumes)
    return np.sqrt(np.sum(d * d * m.cell_volumes)), hist


def test_poisson_converges_and_records_residuals():
    e8, h8 = _poisson_error(8)
    e16, _ = _poisson_error(16)
    assert 1.7 < np.log2(e8 / e16) < 2.3
    assert len(h8) >= 1 and h8[-1] <= 1e-10 * 10


def test_poisson_dirichlet_linear_exact():
    m = build_channel_mesh(1, 1, 6, 6)
    ni = m.n_internal_faces
    mask = np.ones(m.n_faces - ni, bool)
    vals = 3 * m.face_centers[ni:, 0] + 1
    p, _ = solve_poisson(m, m.face_areas * m.delta_coeffs, np.zeros(m.n_cells), mask, vals)
    # linear fields are harmonic and exactly represented on a uniform mesh
    np.testing.assert_allclose(p, 3 * m.cell_centers[:, 0] + 1, atol=1e-8)


def test_all_neumann_without_pin_raises(channel):
    k = channel.face_areas * channel.delta_coeffs
    with pytest.raises(ConfigurationError):
        solve_poisson(channel, k, np.zeros(channel.n_cells))


def test_quiescent_stays_quiescent():
    m = build_channel_mesh(1, 1, 6, 6)
    bcs = dirichlet_boundaries(lambda x, t: np.zeros_like(x))
    s = FlowSolver(m, SolverConfig(dt=0.1, period=0.8, n_snapshots=1), bcs)
    s.advance(3)
    assert np.abs(s.state.u.values).max() < 1e-14


def _channel_solver(nx=24, ny=12, **kw):
    m = build_channel_mesh(0.6, 0.1, nx, ny)
    cfg = SolverConfig(waveform=CONSTANT, dt=0.004, n_snapshots=1, **kw)
    return m, cfg, FlowSolver(m, cfg)


def test_divergence_after_every_step():
    _, cfg, s = _channel_solver()
    for _ in range(30):
        assert s.step().max_divergence() <= cfg.div_tol


def test_poiseuille_small_mesh():
    m, cfg, s = _channel_solver()
    s.advance(150)
    ny, nx = 12, 24
    ux = s.state.u.values[:, 0].reshape(ny, nx)[:, nx - 3]
    y = m.cell_centers[:, 1].reshape(ny, nx)[:, nx - 3]
    umax = 1.5 * 0.015 / 0.1
    exact = umax * 4 * y * (0.1 - y) / 0.01
    assert np.abs(ux - exact).max() / umax < 0.02
    w = compute_wss(s.state, cfg)
    assert len(w.face_ids) == 2 * nx
    lower = w.values[:nx]
    upper = w.values[nx:]
    # fluid drags both walls downstream
    assert np.all(lower[nx // 2:, 0] < 0) and np.all(upper[nx // 2:, 0] < 0)
    np.testing.assert_allclose(lower[-4:, 0], upper[-4:, 0], rtol=1e-8)
    target = 2 * cfg.nu * umax / 0.05
    np.testing.assert_allclose(-lower[-4:, 0], target, rtol=0.03)


def test_wss_mostly_tangential():
    # continuity makes the wall-normal strain vanish up to discretisation error
    _, cfg, s = _channel_solver()
    s.advance(20)
    w = compute_wss(s.state, cfg.nu)
    n = s.mesh.face_normals[w.face_ids]
    normal = np.abs(np.einsum("ij,ij->i", w.values, n))
    tangential = np.abs(w.values[:, 0] * n[:, 1] - w.values[:, 1] * n[:, 0])
    assert normal.max() < 0.05 * tangential.min()


def test_step_failure_carries_time():
    m = build_channel_mesh(0.6, 0.1, 12, 6)
    cfg = SolverConfig(waveform=CONSTANT, dt=0.004, n_snapshots=1, div_tol=1e-30)
    with pytest.raises(StepFailureError) as err:
        FlowSolver(m, cfg).step()
    assert err.value.time == pytest.approx(0.004)


def test_state_from_arrays_validates(channel):
    with pytest.raises(InvalidArgumentError):
        state_from_arrays(channel, np.zeros((40, 2)), u_boundary=np.zeros((3, 2)))
    st = quiescent_state(channel)
    assert st.max_divergence() == 0.0


def test_run_cycles_and_snapshot_io(tmp_path):
    m = build_channel_mesh(0.6, 0.1, 12, 6)
    cfg = SolverConfig(dt=0.02, period=0.8, n_cycles=2, n_snapshots=8, piso_correctors=3)
    snaps = list(run_cycles(cfg, m))
    assert [s.index for s in snaps] == list(range(8))
    np.testing.assert_allclose([s.time for s in snaps], np.arange(8) * 0.1)
    write_snapshots(tmp_path, snaps)
    back = read_snapshots(tmp_path, m)
    for a, b in zip(snaps, back):
        assert a.time == b.time
        for v in ("pressure", "velocity", "wss"):
            assert np.array_equal(a.field(v).values, b.field(v).values)
    assert (tmp_path / "manifest.csv").read_text().startswith("index,time,path_u,path_p,path_wss")
    with pytest.raises(InvalidArgumentError):
        list(run_cycles(cfg, m, n_snapshots=7))
