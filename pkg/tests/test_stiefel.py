import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from stiefel_ekf.exceptions import (
    CutLocusError,
    NotFullRankError,
    NotOnManifoldError,
    NotTangentError,
    ShapeError,
)
from stiefel_ekf.matcore import transpose
from stiefel_ekf.stiefel import (
    LOG_CUT_LOCUS,
    LOG_OK,
    Stiefel,
    canonical_inner,
    canonical_norm,
    check_stiefel,
    check_tangent,
    exp_map,
    geodesic_distance,
    log_map,
    log_with_status,
    manifold_dim,
    projection,
    sample_uniform,
    tangent_project,
)

SHAPES = [(3, 1), (4, 2), (3, 2), (3, 3), (5, 3), (6, 3), (12, 3)]


def random_tangent(X, rng, norm):
    V = tangent_project(X, rng.standard_normal(X.shape))
    return V * (norm / canonical_norm(X, V))


def test_manifold_dim():
    assert manifold_dim(4, 2) == 5
    assert manifold_dim(15, 5) == 60
    assert manifold_dim(3, 1) == 2
    assert Stiefel(6, 3).dim == 12
    with pytest.raises(ShapeError):
        Stiefel(2, 3)


@pytest.mark.parametrize("n,k", SHAPES)
def test_projection_idempotent_and_polar(n, k):
    rng = np.random.default_rng(n * 10 + k)
    X = rng.standard_normal((20, n, k))
    P = projection(X)
    np.testing.assert_allclose(transpose(P) @ P, np.broadcast_to(np.eye(k), (20, k, k)), atol=1e-12)
    np.testing.assert_allclose(projection(P), P, atol=1e-12)
    # polar factor: X = P H with H symmetric positive definite
    H = transpose(P) @ X
    np.testing.assert_allclose(H, transpose(H), atol=1e-10)
    assert np.all(np.linalg.eigvalsh(H) > 0)


def test_projection_rank_deficient():
    with pytest.raises(NotFullRankError):
        projection(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))


def test_projection_equivariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        X = rng.standard_normal((5, 2))
        phi = sample_uniform(5, 5, rng=rng)
        np.testing.assert_allclose(projection(phi @ X), phi @ projection(X), atol=1e-12)


def test_check_stiefel_repair_and_reject():
    X = np.eye(4, 2)
    assert check_stiefel(X) is not None
    Y = X + 1e-7 * np.ones((4, 2))
    R = check_stiefel(Y)
    np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-12)
    with pytest.raises(NotOnManifoldError):
        check_stiefel(2 * X)
    with pytest.raises(NotOnManifoldError):
        check_stiefel(Y, repair=False)


def test_tangent_space():
    rng = np.random.default_rng(6)
    X = sample_uniform(6, 3, rng=rng)
    W = rng.standard_normal((6, 3))
    V = tangent_project(X, W)
    check_tangent(X, V)
    np.testing.assert_allclose(tangent_project(X, V), V, atol=1e-14)
    with pytest.raises(NotTangentError):
        check_tangent(X, X)


def test_canonical_metric_weights():
    X = np.eye(4, 2)
    A = np.zeros((4, 2))
    A[1, 0], A[0, 1] = 1.0, -1.0  # X-part: skew block
    N = np.zeros((4, 2))
    N[2, 0] = 1.0  # normal part
    assert canonical_inner(X, A, A) == pytest.approx(1.0)  # half of Frobenius 2
    assert canonical_inner(X, N, N) == pytest.approx(1.0)
    assert canonical_inner(X, A, N) == pytest.approx(0.0)


def _geodesic_rhs(n, k):
    def rhs(t, y):
        Y = y[: n * k].reshape(n, k)
        D = y[n * k:].reshape(n, k)
        YtD = Y.T @ D
        acc = -(D @ D.T @ Y) - Y @ (YtD @ YtD + D.T @ D)
        return np.concatenate([D.ravel(), acc.ravel()])
    return rhs


@pytest.mark.parametrize("n,k", [(4, 2), (3, 2), (5, 2), (6, 3), (3, 1)])
def test_exp_matches_geodesic_ode(n, k):
    rng = np.random.default_rng(7)
    X = sample_uniform(n, k, rng=rng)
    V = random_tangent(X, rng, 1.3)
    sol = integrate.solve_ivp(_geodesic_rhs(n, k), (0.0, 1.0), np.concatenate([X.ravel(), V.ravel()]),
                              rtol=1e-11, atol=1e-12, method="DOP853")
    Y_ode = sol.y[: n * k, -1].reshape(n, k)
    np.testing.assert_allclose(exp_map(X, V), Y_ode, atol=1e-8)


@pytest.mark.parametrize("n,k", SHAPES + [(15, 5)])
def test_exp_log_roundtrip(n, k):
    rng = np.random.default_rng(8)
    X = sample_uniform(n, k, size=30, rng=rng)
    V = np.stack([random_tangent(x, rng, r) for x, r in zip(X, rng.uniform(0.05, 1.0, 30))])
    Y = exp_map(X, V)
    np.testing.assert_allclose(transpose(Y) @ Y, np.broadcast_to(np.eye(k), (30, k, k)), atol=1e-12)
    W, status, _ = log_with_status(X, Y)
    assert np.all(status == LOG_OK)
    assert np.max(np.linalg.norm(W - V, axis=(-2, -1))) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.5))
def test_exp_log_roundtrip_property(seed, r):
    rng = np.random.default_rng(seed)
    X = sample_uniform(4, 2, rng=rng)
    V = random_tangent(X, rng, r)
    W, status, _ = log_with_status(X, exp_map(X, V))
    if r < 1.5:  # inside the injectivity radius bound, the geodesic is minimal
        assert status == LOG_OK
        np.testing.assert_allclose(W, V, atol=1e-8)
    if status == LOG_OK:
        assert canonical_norm(X, W) <= r + 1e-8


@pytest.mark.parametrize("n", [2, 3, 5])
def test_sphere_distance_is_arccos(n):
    rng = np.random.default_rng(9)
    X = sample_uniform(n, 1, size=200, rng=rng)
    Y = sample_uniform(n, 1, size=200, rng=rng)
    d = geodesic_distance(X, Y)
    ref = np.arccos(np.clip(np.sum(X * Y, axis=(-2, -1)), -1, 1))
    np.testing.assert_allclose(d, ref, atol=1e-8)


def test_antipode():
    x = np.array([[1.0], [0.0]])
    assert geodesic_distance(x, -x) == pytest.approx(np.pi)
    _, status, _ = log_with_status(x, -x)
    assert status == LOG_CUT_LOCUS
    with pytest.raises(CutLocusError):
        log_map(x, -x)


def test_distance_equivariance_and_symmetry():
    rng = np.random.default_rng(10)
    X = sample_uniform(6, 3, size=50, rng=rng)
    Y = exp_map(X, np.stack([random_tangent(x, rng, 1.0) for x in X]))
    phi = sample_uniform(6, 6, size=50, rng=rng)
    d = geodesic_distance(X, Y)
    np.testing.assert_allclose(geodesic_distance(phi @ X, phi @ Y), d, atol=1e-8)
    np.testing.assert_allclose(geodesic_distance(Y, X), d, atol=1e-8)
    V = log_map(X, Y)
    np.testing.assert_allclose(log_map(phi @ X, phi @ Y), phi @ V, atol=1e-8)


def test_uniform_sampling_marginal_s2():
    # a coordinate of a uniform point on S^2 is uniform on [-1, 1]
    X = sample_uniform(3, 1, size=20000, rng=11)
    assert stats.kstest(X[:, 0, 0], stats.uniform(-1, 2).cdf).pvalue > 1e-3


def test_uniform_sampling_invariance():
    # E[X X^T] = (k/n) I for Haar-uniform X
    X = sample_uniform(5, 2, size=40000, rng=12)
    np.testing.assert_allclose(np.mean(X @ transpose(X), axis=0), 0.4 * np.eye(5), atol=0.01)


def test_stiefel_class():
    M = Stiefel(3, 1)
    assert M.maxvar == pytest.approx((np.pi**2 - 4) / 4)  # S^2
    M = Stiefel(4, 2)
    assert M.maxvar == pytest.approx(1.0245, abs=0.01)
    assert M.maxvar_info["source"] == "file"
    assert Stiefel(4, 2, maxvar=2.0).maxvar == 2.0
    X = M.identity()
    V = M.proj_tangent(X, np.arange(8.0).reshape(4, 2) / 10)
    np.testing.assert_allclose(M.log(X, M.exp(X, V)), V, atol=1e-10)
    assert M.dist(X, M.exp(X, V)) == pytest.approx(M.norm(X, V))
    assert M.random_uniform(size=3, rng=0).shape == (3, 4, 2)
