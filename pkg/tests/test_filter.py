import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stiefel_ekf.exceptions import FilterStepError, VarianceError
from stiefel_ekf.filter import (
    FilterState,
    StiefelEKF,
    SystemModel,
    diagnostics,
    gain_recursion,
    predict,
    run,
    run_batch,
    update,
)
from stiefel_ekf.stats import IsotropicNormal, eta_hat, eta_hat_inv, sample_projected_normal, ProjectedNormal
from stiefel_ekf.stiefel import Stiefel, exp_map, geodesic_distance, log_map, sample_uniform


def model(n=4, k=2, xi2=0.1, maxvar=1.0245, **kw):
    return SystemModel(Stiefel(n, k, maxvar=maxvar), xi2, **kw)


def test_model_validation():
    with pytest.raises(VarianceError):
        model(xi2=0.0)
    with pytest.raises(ValueError):
        model(drift=np.ones((4, 4)))
    A = np.zeros((4, 4))
    A[0, 1], A[1, 0] = 1.0, -1.0
    assert not model(drift=A).is_constant
    assert model().is_constant
    with pytest.raises(VarianceError):
        FilterState.initial(np.eye(4, 2), 0.0, 1.0)


def test_single_step_matches_closed_form():
    M = model()
    s0 = FilterState.initial(np.eye(4, 2), 0.5, M.manifold.maxvar)
    z = sample_uniform(4, 2, rng=0)
    z = exp_map(np.eye(4, 2), 0.3 * log_map(np.eye(4, 2), z) / np.linalg.norm(log_map(np.eye(4, 2), z)))
    s1, rep = update(predict(s0, M), z, M)
    K = 0.5 / 0.6
    assert rep.gain == pytest.approx(K, abs=1e-15)
    assert s1.intrinsic_var == pytest.approx((1 - K) * eta_hat(0.5, M.manifold.maxvar), abs=1e-15)
    np.testing.assert_allclose(s1.mean, exp_map(np.eye(4, 2), K * log_map(np.eye(4, 2), z)), atol=1e-12)
    # the mean moves along the geodesic to z by the fraction K
    d = geodesic_distance(np.eye(4, 2), z)
    assert geodesic_distance(np.eye(4, 2), s1.mean) == pytest.approx(K * d, abs=1e-9)
    assert geodesic_distance(s1.mean, z) == pytest.approx((1 - K) * d, abs=1e-9)


def test_sphere_update_closed_form():
    # on S^1 the update is a rotation of the angle by K times the innovation angle
    M = SystemModel(Stiefel(2, 1), 0.2)
    theta0, theta = 0.3, 1.2
    mean = np.array([[math.cos(theta0)], [math.sin(theta0)]])
    z = np.array([[math.cos(theta)], [math.sin(theta)]])
    s, rep = update(predict(FilterState.initial(mean, 1.0, M.manifold.maxvar), M), z, M)
    K = 1.0 / 1.2
    ang = theta0 + K * (theta - theta0)
    np.testing.assert_allclose(s.mean, [[math.cos(ang)], [math.sin(ang)]], atol=1e-12)
    assert rep.innovation_norm == pytest.approx(theta - theta0)


def test_backmap_matches_closed_form():
    Mv = 1.0245
    for s2 in (1.0, 0.5, 0.1):
        for xi2 in (0.1, 0.5):
            K = s2 / (s2 + xi2)
            r = (1 - K) * eta_hat(s2, Mv)
            closed = r * Mv / (Mv - r)
            assert eta_hat_inv(r, Mv) == pytest.approx(closed, rel=1e-15)
            gains, v2s, _ = gain_recursion(s2, xi2, Mv, 1)
            assert v2s[0] == pytest.approx(closed, rel=1e-15)
            assert gains[0] == K


def test_run_matches_scalar_recursion():
    M = model()
    rng = np.random.default_rng(1)
    Z = sample_projected_normal(ProjectedNormal(np.eye(4, 2), 0.1), 30, rng=rng)
    reps = run(IsotropicNormal(np.eye(4, 2), 0.5), M, [(m + 1.0, z) for m, z in enumerate(Z)])
    gains, v2s, Ps = gain_recursion(0.5, 0.1, M.manifold.maxvar, 30)
    np.testing.assert_allclose([r.gain for r in reps], gains, rtol=0, atol=1e-12)
    np.testing.assert_allclose([r.state.intrinsic_var for r in reps], Ps, rtol=0, atol=1e-12)
    np.testing.assert_allclose([r.state.ambient_var for r in reps], v2s, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.05, 3.0))
def test_variance_dominated_by_linear_kalman(s2, xi2, Mv):
    _, v2s, Ps = gain_recursion(s2, xi2, Mv, 300)
    m = np.arange(1, 301)
    assert np.all(v2s <= s2 * xi2 / (xi2 + m * s2) + 1e-12)
    assert np.all(np.diff(Ps) < 0)


def test_update_equivariance():
    M = model(n=6, k=3, maxvar=0.59)
    rng = np.random.default_rng(2)
    mean = sample_uniform(6, 3, rng=rng)
    z = sample_projected_normal(ProjectedNormal(mean, 0.1), rng=rng)
    phi = sample_uniform(6, 6, rng=rng)
    s = FilterState.initial(mean, 0.3, M.manifold.maxvar)
    s_phi = FilterState.initial(phi @ mean, 0.3, M.manifold.maxvar)
    a, _ = update(predict(s, M), z, M)
    b, _ = update(predict(s_phi, M), phi @ z, M)
    np.testing.assert_allclose(b.mean, phi @ a.mean, atol=1e-8)
    assert a.intrinsic_var == b.intrinsic_var


def test_predict_with_drift_and_process_noise():
    A = np.zeros((4, 4))
    A[0, 1], A[1, 0] = -0.5, 0.5
    M = model(drift=A, nu2=0.2)
    s = FilterState.initial(np.eye(4, 2), 0.1, M.manifold.maxvar)
    p = predict(s, M, 2.0)
    assert p.ambient_var == pytest.approx(0.1 + 0.4)
    assert p.intrinsic_var == pytest.approx(eta_hat(0.5, M.manifold.maxvar))
    np.testing.assert_allclose(p.mean.T @ p.mean, np.eye(2), atol=1e-12)
    c, sn = math.cos(1.0), math.sin(1.0)
    np.testing.assert_allclose(p.mean[:2, :2], [[c, -sn], [sn, c]], atol=1e-12)
    with pytest.raises(ValueError):
        predict(s, M, -1.0)


def test_update_raises_on_cut_locus():
    M = SystemModel(Stiefel(2, 1), 0.1)
    s = FilterState.initial(np.array([[1.0], [0.0]]), 0.5, M.manifold.maxvar)
    with pytest.raises(FilterStepError):
        update(predict(s, M), np.array([[-1.0], [0.0]]), M)


def test_run_batch_matches_run():
    M = model()
    rng = np.random.default_rng(3)
    R, N = 4, 25
    truth = sample_projected_normal(ProjectedNormal(np.eye(4, 2), 0.3), R, rng=rng)
    Z = np.stack([sample_projected_normal(ProjectedNormal(t, 0.1), N, rng=rng) for t in truth])
    res = run_batch(np.eye(4, 2), 0.5, M, Z, truth=truth)
    assert np.all(res.failed_at == -1)
    for r in range(R):
        reps = run(IsotropicNormal(np.eye(4, 2), 0.5), M, [(m + 1.0, z) for m, z in enumerate(Z[r])])
        P, d2 = diagnostics(reps, truth[r])
        np.testing.assert_allclose(res.PK, P, atol=1e-15)
        np.testing.assert_allclose(res.dist2_norm[r], d2, atol=1e-10)
        np.testing.assert_allclose(res.final_mean[r], reps[-1].state.mean, atol=1e-10)
        np.testing.assert_allclose(res.innov_norm[r], [x.innovation_norm for x in reps], atol=1e-10)


def test_converges_to_truth():
    M = model()
    rng = np.random.default_rng(4)
    truth = sample_uniform(4, 2, rng=rng)
    Z = sample_projected_normal(ProjectedNormal(truth, 0.1), (1, 300), rng=rng)
    res = run_batch(truth, 0.5, M, Z, truth=truth)
    assert res.dist2_norm[0, -1] < 0.01
    assert res.PK[-1] / res.PK[0] < 0.05


def test_estimator_api():
    rng = np.random.default_rng(5)
    Z = sample_projected_normal(ProjectedNormal(np.eye(4, 2), 0.1), 20, rng=rng)
    est = StiefelEKF(sigma0_2=0.5, xi2=0.1, maxvar=1.0245).fit(Z[:10])
    est.partial_fit(Z[10:])
    ref = StiefelEKF(sigma0_2=0.5, xi2=0.1, maxvar=1.0245).fit(Z)
    np.testing.assert_allclose(est.mean_, ref.mean_, atol=1e-12)
    assert est.intrinsic_var_ == ref.intrinsic_var_
    assert len(est.gains_) == 20
    np.testing.assert_allclose(est.predict(3.0), est.mean_)
    assert est.get_params()["xi2"] == 0.1
    P, d2 = est.diagnostics(np.eye(4, 2))
    assert P.shape == d2.shape == (20,)
    with pytest.raises(ValueError):
        est.partial_fit(Z[:2], times=[1.0, 2.0])
