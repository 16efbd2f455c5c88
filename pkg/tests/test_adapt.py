import numpy as np
import pytest
from hypothesis import given, strategies as st

from gris.adapt import FactorizationError, current_scale, factorize, new_adapt_state, observe, \
    update_covariance, update_moments
from gris.core import ContractError


def recursive_state(X, s_d, eps, t0=0):
    st_ = update_moments(new_adapt_state(X.shape[1], t0=t0, s_d=s_d, eps=eps), X[0])
    for x in X[1:]:
        st_ = update_covariance(st_, x)
    return st_


def batch_scale(X, s_d, eps):
    return s_d * (np.atleast_2d(np.cov(X, rowvar=False)) + eps * np.eye(X.shape[1]))


def test_update_moments_examples():
    s = update_moments(new_adapt_state(2), [0.0, 0.0])
    np.testing.assert_array_equal(update_moments(s, [2.0, 0.0]).mean, [1.0, 0.0])
    np.testing.assert_array_equal(update_moments(new_adapt_state(2), [3.0, -1.0]).mean, [3.0, -1.0])


def test_running_mean_matches_batch(rng):
    X = rng.normal(size=(100, 3))
    s = new_adapt_state(3)
    for x in X:
        s = update_moments(s, x)
    np.testing.assert_allclose(s.mean, X.mean(axis=0), atol=1e-12)


@pytest.mark.parametrize("eps, expected", [(0.0, [[2.0, 0.0], [0.0, 0.0]]),
                                           (0.1, [[2.1, 0.0], [0.0, 0.1]])])
def test_two_point_covariance(eps, expected):
    s = recursive_state(np.array([[0.0, 0.0], [2.0, 0.0]]), 1.0, eps)
    np.testing.assert_allclose(s.cov, expected, atol=1e-15)


def test_identical_samples_leave_ridge():
    s = recursive_state(np.ones((7, 2)), 1.0, 0.1)
    np.testing.assert_allclose(s.cov, 0.1 * np.eye(2), atol=1e-15)


def test_covariance_needs_prior_sample():
    with pytest.raises(ContractError):
        update_covariance(new_adapt_state(2), np.zeros(2))


@pytest.mark.parametrize("d", [1, 2, 5, 10])
def test_recursion_equals_batch(d, rng):
    for _ in range(10):
        n = int(rng.integers(2, 51))
        s_d, eps = rng.uniform(0.1, 3.0), rng.uniform(0.0, 0.1)
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10.0) + rng.normal(size=d)
        s = recursive_state(X, s_d, eps)
        assert s.t == n
        np.testing.assert_allclose(s.cov, batch_scale(X, s_d, eps), rtol=0, atol=1e-10)


@given(st.integers(1, 4), st.integers(2, 30), st.integers(1, 7), st.integers(0, 2 ** 32 - 1))
def test_observe_matches_recursion(d, n, n_split, seed):
    X = np.random.default_rng(seed).normal(size=(n, d)) * 3.0
    ref = recursive_state(X, 0.7, 1e-3)
    s = new_adapt_state(d, s_d=0.7, eps=1e-3)
    for chunk in np.array_split(X, min(n_split, n)):
        s = observe(s, chunk)
    assert s.t == n
    np.testing.assert_allclose(s.mean, ref.mean, atol=1e-12)
    np.testing.assert_allclose(s.cov, ref.cov, atol=1e-10 * max(1.0, np.abs(ref.cov).max()))


def test_current_scale_warmup_boundary(rng):
    C0 = np.diag([3.0, 5.0])
    s = new_adapt_state(2, t0=4, C0=C0)
    s = observe(s, rng.normal(size=(4, 2)))
    assert s.t == 4
    np.testing.assert_array_equal(current_scale(s), C0)
    s = observe(s, rng.normal(size=(1, 2)))
    np.testing.assert_array_equal(current_scale(s), s.cov)
    s0 = observe(new_adapt_state(2, t0=0), rng.normal(size=(1, 2)))
    np.testing.assert_array_equal(current_scale(s0), s0.cov)


def test_factor_tracks_scale(rng):
    s = new_adapt_state(3, t0=5, eps=1e-6)
    for _ in range(6):
        s = observe(s, rng.normal(size=(3, 3)))
        C = current_scale(s)
        np.testing.assert_allclose(s.factor @ s.factor.T, C, rtol=1e-9, atol=1e-12)
    assert np.linalg.eigvalsh(current_scale(s)).min() >= s.s_d * s.eps - 1e-12


@pytest.mark.parametrize("C, L", [(np.eye(3), np.eye(3)), (np.diag([4.0, 9.0]), np.diag([2.0, 3.0]))])
def test_factorize_examples(C, L):
    np.testing.assert_allclose(factorize(C), L)


def test_factorize_indefinite_with_jitter():
    C = np.array([[1.0, 2.0], [2.0, 1.0]])   # eigenvalues 3 and -1
    L = factorize(C, jitter0=0.5)
    # 0 and 0.5 leave a negative eigenvalue, 5 is the first jitter that works
    j = (L @ L.T - C)[0, 0]
    assert j == pytest.approx(5.0, rel=1e-12)
    np.testing.assert_allclose(L @ L.T, C + j * np.eye(2), atol=1e-12)


def test_factorize_failure_names_matrix():
    with pytest.raises(FactorizationError, match="not positive definite"):
        factorize(-np.eye(2), jitter0=1e-12)


def test_factorize_rejects_asymmetric():
    with pytest.raises(ContractError):
        factorize(np.array([[1.0, 0.5], [0.0, 1.0]]))
