import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmdcpd.errors import ConfigError, StateError
from dmdcpd.online_svd import OnlineSVD, principal_angles, signed_qr


def low_rank(rng, rows, cols, rank, noise=0.0):
    x = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    return x + noise * rng.standard_normal((rows, cols))


def test_signed_qr_has_nonnegative_diagonal():
    a = np.random.default_rng(0).standard_normal((6, 3))
    q, r = signed_qr(a)
    assert np.all(np.diag(r) >= 0)
    np.testing.assert_allclose(q @ r, a, atol=1e-12)


def test_principal_angles_known_value():
    theta = 1e-6
    a = np.array([[1.0], [0.0]])
    b = np.array([[np.cos(theta)], [np.sin(theta)]])
    # the sine formulation resolves angles far below sqrt(eps)
    np.testing.assert_allclose(principal_angles(a, b), [theta], rtol=1e-9)
    e = np.eye(3)
    np.testing.assert_allclose(principal_angles(e[:, :2], e[:, 1:]), [0, np.pi / 2], atol=1e-15)


def test_initialize_rejects_bad_rank():
    with pytest.raises(ConfigError):
        OnlineSVD.initialize(np.ones((3, 5)), 4)
    with pytest.raises(ConfigError):
        OnlineSVD.initialize(np.ones((3, 5)), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.lists(st.integers(1, 5), min_size=1, max_size=8))
def test_updates_on_exact_rank_data_match_batch(seed, rank, chunks):
    """Appending columns of an exact rank-r matrix reproduces its batch SVD."""
    rng = np.random.default_rng(seed)
    n0 = rank + 2
    X = low_rank(rng, 12, n0 + sum(chunks), rank)
    svd = OnlineSVD.initialize(X[:, :n0], rank)
    i = n0
    for c in chunks:
        svd.update(X[:, i:i + c])
        i += c
    np.testing.assert_allclose(svd.reconstruct(), X, atol=1e-8 * np.abs(X).max())
    s = np.linalg.svd(X, compute_uv=False)[:rank]
    np.testing.assert_allclose(svd.s, s, rtol=1e-9)
    U = np.linalg.svd(X)[0][:, :rank]
    assert principal_angles(svd.U, U).max() < 1e-8


def test_update_then_revert_tracks_sliding_window():
    rng = np.random.default_rng(1)
    X = low_rank(rng, 20, 200, 3)
    d = 30
    svd = OnlineSVD.initialize(X[:, :d], 3)
    for t in range(d, 200):
        svd.revert(1)
        svd.update(X[:, t:t + 1])
        assert svd.n_cols == d
    W = X[:, 200 - d:]
    U = np.linalg.svd(W)[0][:, :3]
    assert principal_angles(svd.U, U).max() < 1e-8
    np.testing.assert_allclose(svd.reconstruct(), W, atol=1e-8 * np.abs(W).max())


def test_revert_multiple_columns_matches_batch_truncation():
    """On full-rank data the revert is exact up to the truncation of the retained part."""
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 12))
    svd = OnlineSVD.initialize(X, 5)
    svd.revert(4)
    np.testing.assert_allclose(svd.reconstruct(), X[:, 4:], atol=1e-10)
    np.testing.assert_allclose(svd.s, np.linalg.svd(X[:, 4:], compute_uv=False), rtol=1e-10)


def test_revert_errors():
    svd = OnlineSVD.initialize(np.random.default_rng(0).standard_normal((4, 6)), 2)
    with pytest.raises(StateError):
        svd.revert(7)
    with pytest.raises(StateError):
        svd.revert(5)
    svd.revert(0)
    assert svd.n_cols == 6


def test_in_subspace_updates_are_buffered():
    rng = np.random.default_rng(4)
    X = low_rank(rng, 10, 40, 2)
    svd = OnlineSVD.initialize(X[:, :10], 2, max_buffer=50)
    svd.update(X[:, 10:11])
    assert svd.q_u == 1 and svd.V.shape[0] == 10
    svd.update(X[:, 11:20])
    assert svd.q_u == 10 and svd.n_cols == 20
    svd.flush()
    assert svd.q_u == 0 and svd.V.shape[0] == 20
    np.testing.assert_allclose(svd.reconstruct(), X[:, :20], atol=1e-9)


def test_buffer_folded_before_out_of_subspace_update():
    rng = np.random.default_rng(5)
    X = low_rank(rng, 10, 12, 2)
    svd = OnlineSVD.initialize(X[:, :8], 3, max_buffer=50)
    svd.update(X[:, 8:10])
    new = rng.standard_normal((10, 1))
    svd.update(new)
    Y = np.hstack([X[:, :10], new])
    np.testing.assert_allclose(svd.reconstruct(), Y, atol=1e-9)


def test_orthogonality_after_long_run():
    rng = np.random.default_rng(6)
    X = low_rank(rng, 30, 3000, 4, noise=1e-3)
    svd = OnlineSVD.initialize(X[:, :50], 4)
    for t in range(50, 3000):
        svd.revert(1)
        svd.update(X[:, t:t + 1])
    svd.flush()
    assert np.linalg.norm(svd.U.T @ svd.U - np.eye(4)) < 1e-10
    assert np.linalg.norm(svd.V.T @ svd.V - np.eye(4)) < 1e-10


def test_update_rejects_wrong_rows():
    svd = OnlineSVD.initialize(np.eye(3), 2)
    with pytest.raises(ConfigError):
        svd.update(np.ones((4, 1)))


def test_wide_update_on_few_rows():
    """A batch wider than the row count still matches the batch factorization."""
    rng = np.random.default_rng(8)
    X = rng.standard_normal((3, 20))
    svd = OnlineSVD.initialize(X[:, :4], 2)
    before = svd.reconstruct()
    svd.update(X[:, 4:12])
    # one update equals the batch truncation of [current approximation, new columns]
    ref = OnlineSVD.initialize(np.hstack([before, X[:, 4:12]]), 2)
    assert svd.reconstruct().shape == (3, 12)
    assert np.linalg.norm(svd.U.T @ svd.U - np.eye(2)) < 1e-12
    np.testing.assert_allclose(svd.s, ref.s, rtol=1e-10)
    np.testing.assert_allclose(svd.reconstruct(), ref.reconstruct(), atol=1e-10)
