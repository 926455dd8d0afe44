import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.utils.validation import check_is_fitted

from romforge.exceptions import InvalidArgumentError
from romforge.mesh import Field, build_channel_mesh
from romforge.pod import (POD, PodNumericError, SnapshotMatrix, assemble, compute_pod,
                          energy_ratio, load_basis, project, reconstruct, reconstruct_vector,
                          save_basis, select_rank, truncate, write_spectrum_csv)


def _matrix(rng, m, n):
    return SnapshotMatrix("pressure", rng.normal(size=(m, n)), np.arange(n, dtype=float))


@pytest.mark.parametrize("method", ["svd", "snapshots"])
def test_modes_orthonormal(rng, method):
    b = compute_pod(_matrix(rng, 80, 20), method=method)
    np.testing.assert_allclose(b.modes.T @ b.modes, np.eye(b.rank), atol=1e-10)
    assert np.all(np.diff(b.singular_values) <= 0)


def test_methods_agree(rng):
    S = _matrix(rng, 60, 12)
    a, b = compute_pod(S, "svd"), compute_pod(S, "snapshots")
    np.testing.assert_allclose(a.singular_values, b.singular_values, rtol=1e-10)
    np.testing.assert_allclose(np.abs(a.modes.T @ b.modes), np.eye(12), atol=1e-8)


def test_weighted_modes_orthonormal_in_weighted_product(rng):
    S = _matrix(rng, 40, 10)
    w = rng.uniform(0.1, 2.0, 40)
    b = compute_pod(S, weights=w)
    phys = reconstruct_vector(b, np.eye(b.rank))
    np.testing.assert_allclose(phys.T @ (w[:, None] * phys), np.eye(b.rank), atol=1e-10)
    # full-rank projection reproduces the data
    np.testing.assert_allclose(reconstruct_vector(b, project(b, S.data)), S.data, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_rank_l_projection_is_optimal_vs_random_subspace(seed, L):
    r = np.random.default_rng(seed)
    S = _matrix(r, 30, 10)
    b = compute_pod(S).truncate(L)
    err = np.linalg.norm(S.data - reconstruct_vector(b, project(b, S.data)))
    Q, _ = np.linalg.qr(r.normal(size=(30, L)))
    err_q = np.linalg.norm(S.data - Q @ (Q.T @ S.data))
    assert err <= err_q * (1 + 1e-12)


@given(st.integers(0, 10_000))
def test_projection_idempotent(seed):
    r = np.random.default_rng(seed)
    b = compute_pod(_matrix(r, 25, 8)).truncate(3)
    v = r.normal(size=25)
    p1 = reconstruct_vector(b, project(b, v))
    p2 = reconstruct_vector(b, project(b, p1))
    np.testing.assert_allclose(p1, p2, atol=1e-12)


def test_centering_roundtrip(rng):
    S = SnapshotMatrix("velocity", rng.normal(size=(20, 6)) + 5.0, np.arange(6.0))
    b = compute_pod(S, center=True)
    assert b.rank == 5  # centring removes one dimension
    np.testing.assert_allclose(reconstruct_vector(b, project(b, S.data)), S.data, atol=1e-10)


def test_zero_matrix_raises():
    with pytest.raises(PodNumericError):
        compute_pod(SnapshotMatrix("wss", np.zeros((5, 3)), [0, 1, 2]))


def test_snapshot_matrix_validation():
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrix("temperature", np.zeros((3, 3)), [0, 1, 2])
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrix("pressure", np.zeros((3, 1)), [0])
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrix("pressure", np.zeros((3, 3)), [0, 2, 1])
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrix("pressure", np.full((3, 2), np.inf), [0, 1])


def test_assemble_interleaves_vectors(channel):
    fields = [Field("vector2", np.full((40, 2), [k, -k], float), channel, time=k)
              for k in range(3)]
    S = assemble(fields, "velocity")
    assert S.data.shape == (80, 3)
    np.testing.assert_array_equal(S.data[:4, 2], [2, -2, 2, -2])
    other = Field("vector2", np.ones((40, 2)), build_channel_mesh(1, 0.3, 10, 4), time=5)
    with pytest.raises(InvalidArgumentError):
        assemble(fields + [other], "velocity")


def test_select_rank_hand_cases():
    s = [3.0, 2.0, 1.0]
    # cumulative sigma fractions: 1/2, 5/6, 1
    assert select_rank(s, 0.5) == 1
    assert select_rank(s, 0.51) == 2
    assert select_rank(s, 5 / 6) == 2
    assert select_rank(s, 0.9) == 3
    assert select_rank(s, 1.0) == 3
    # squared: 9/14, 13/14, 1
    assert select_rank(s, 0.6, "sigma2") == 1
    assert select_rank(s, 0.9, "sigma2") == 2
    assert select_rank(s, 0.95, "sigma2") == 3
    assert select_rank([1.0], 0.3) == 1
    assert select_rank([1.0] * 4, 0.75) == 3


@pytest.mark.parametrize("bad", [[], [1.0, 2.0], [1.0, 0.0], [1.0, -1.0]])
def test_select_rank_rejects_bad_spectra(bad):
    with pytest.raises(InvalidArgumentError):
        select_rank(bad, 0.9)


@pytest.mark.parametrize("delta", [0.0, -0.1, 1.01, np.nan])
def test_select_rank_rejects_bad_delta(delta):
    with pytest.raises(InvalidArgumentError):
        select_rank([3, 2, 1], delta)


@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=30),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_select_rank_monotone(vals, d1, d2):
    s = np.sort(vals)[::-1]
    lo, hi = sorted((d1, d2))
    for crit in ("sigma", "sigma2"):
        L1, L2 = select_rank(s, lo, crit), select_rank(s, hi, crit)
        assert 1 <= L1 <= L2 <= len(s)
        assert energy_ratio(s, crit)[L2 - 1] >= hi or L2 == len(s)
        if L2 > 1:
            assert energy_ratio(s, crit)[L2 - 2] < hi


def test_truncate_records_delta(rng):
    b = truncate(compute_pod(_matrix(rng, 20, 6)), 0.5)
    assert b.energy_delta == 0.5 and b.modes.shape[1] == b.rank


def test_save_load_roundtrip(tmp_path, rng):
    b = compute_pod(_matrix(rng, 20, 6), center=True, weights=rng.uniform(1, 2, 20))
    save_basis(tmp_path / "b.bin", b)
    c = load_basis(tmp_path / "b.bin")
    assert c.rank == b.rank and c.variable == b.variable
    for a in ("modes", "singular_values", "mean", "weights"):
        assert np.array_equal(getattr(b, a), getattr(c, a))
    write_spectrum_csv(tmp_path / "s.csv", b.singular_values)
    assert (tmp_path / "s.csv").read_text().startswith("index,sigma,")


def test_reconstruct_field(channel, rng):
    fields = [Field("scalar", rng.normal(size=40), channel, time=k) for k in range(5)]
    b = compute_pod(assemble(fields, "pressure"))
    f = reconstruct(b, project(b, fields[2]), like=fields[2], time=7.0)
    assert f.time == 7.0 and f.mesh_id == channel.checksum
    np.testing.assert_allclose(f.values, fields[2].values, atol=1e-12)


def test_estimator_api(rng):
    X = rng.normal(size=(12, 30))  # sklearn layout: samples x dofs
    est = POD(delta=1.0).fit(X)
    check_is_fitted(est)
    assert est.n_components_ == 12
    A = est.transform(X)
    assert A.shape == (12, 12)
    np.testing.assert_allclose(est.inverse_transform(A), X, atol=1e-10)
    assert POD(n_modes=3).fit(X).n_components_ == 3
    assert POD(n_modes=3).fit(X).projection_error(X) > 0
    assert POD().get_params()["delta"] == 0.99
