import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from mftune.errors import InvalidInputError
from mftune.gp import (
    Dataset,
    FitSettings,
    Standardizer,
    fit_kernel,
    gp_append,
    gp_fit,
    gp_predict,
    log_marginal_likelihood,
)
from mftune.kernels import KernelSpec, kernel_matrix


def brute_force_posterior(spec, X, y, noise, Xs):
    """Condition the joint Gaussian of ``(f(Xs), y)`` with a dense solve."""
    Kyy = kernel_matrix(spec, X) + noise * np.eye(len(X))
    Ksy = kernel_matrix(spec, Xs, X)
    mean = Ksy @ np.linalg.solve(Kyy, y)
    cov = kernel_matrix(spec, Xs) - Ksy @ np.linalg.solve(Kyy, Ksy.T)
    return mean, np.sqrt(np.maximum(np.diag(cov), 0))


def random_problem(rng, t, d=2):
    spec = KernelSpec(rng.uniform(0.5, 2.0), tuple(rng.uniform(0.3, 1.5, d)))
    X = rng.uniform(-1, 1, (t, d))
    y = rng.standard_normal(t)
    return spec, X, y, rng.uniform(1e-3, 0.1)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_predict_matches_joint_conditioning(t, seed):
    rng = np.random.default_rng(seed)
    spec, X, y, noise = random_problem(rng, t)
    Xs = rng.uniform(-1, 1, (4, 2))
    post = gp_fit(spec, Dataset(X, y, noise))
    mean, std = post.predict(Xs)
    m_ref, s_ref = brute_force_posterior(spec, X, y, noise, Xs)
    np.testing.assert_allclose(mean, m_ref, atol=1e-8)
    np.testing.assert_allclose(std, s_ref, atol=1e-8)


def test_gp_predict_single_point_and_dimension_check(rng):
    spec, X, y, noise = random_problem(rng, 4)
    post = gp_fit(spec, Dataset(X, y, noise))
    m, s = gp_predict(post, X[0])
    assert isinstance(m, float) and s >= 0
    with pytest.raises(InvalidInputError):
        gp_predict(post, [0.0, 0.0, 0.0])


def test_empty_data_returns_prior():
    spec = KernelSpec(2.0, (1.0,))
    post = gp_fit(spec, Dataset.empty(1, 0.01))
    m, s = post.predict([[0.3], [0.5]])
    np.testing.assert_array_equal(m, 0.0)
    np.testing.assert_allclose(s, np.sqrt(2.0))


def test_noiseless_interpolation():
    spec = KernelSpec(1.0, (0.5,))
    X = np.array([[0.0], [1.0]])
    post = gp_fit(spec, Dataset(X, [1.0, -1.0], 0.0))
    m, s = post.predict(X)
    np.testing.assert_allclose(m, [1.0, -1.0], atol=1e-9)
    np.testing.assert_allclose(s, 0.0, atol=1e-5)


def test_append_matches_refit(rng):
    spec, X, y, noise = random_problem(rng, 5)
    post = gp_fit(spec, Dataset(X[:4], y[:4], noise))
    post = gp_append(post, X[4], y[4])
    ref = gp_fit(spec, Dataset(X, y, noise))
    Xs = rng.uniform(-1, 1, (6, 2))
    for a, b in zip(post.predict(Xs), ref.predict(Xs)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_append_duplicate_point_without_noise_falls_back():
    spec = KernelSpec(1.0, (0.5,))
    post = gp_fit(spec, Dataset([[0.0]], [1.0], 0.0))
    post = gp_append(post, [0.0], 1.0)
    assert len(post.data) == 2
    assert np.isfinite(post.predict([[0.2]])[0]).all()


def test_append_rejects_non_finite():
    post = gp_fit(KernelSpec(1.0, (0.5,)), Dataset([[0.0]], [1.0], 0.1))
    with pytest.raises(InvalidInputError):
        gp_append(post, [0.5], float("nan"))


def test_log_marginal_likelihood_matches_scipy(rng):
    spec, X, y, noise = random_problem(rng, 6)
    C = kernel_matrix(spec, X) + noise * np.eye(6)
    ref = scipy.stats.multivariate_normal(np.zeros(6), C).logpdf(y)
    assert log_marginal_likelihood(spec, Dataset(X, y, noise)) == pytest.approx(ref, rel=1e-10)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_posterior_variance_never_exceeds_prior(t, seed):
    rng = np.random.default_rng(seed)
    spec, X, y, noise = random_problem(rng, t)
    _, s = gp_fit(spec, Dataset(X, y, noise)).predict(rng.uniform(-2, 2, (10, 2)))
    assert np.all(s <= np.sqrt(spec.signal_variance) + 1e-12)


def test_standardizer_roundtrip(rng):
    y = rng.normal(3.0, 2.0, 30)
    sc = Standardizer.from_outputs(y)
    z = sc.transform(y)
    assert np.mean(z) == pytest.approx(0.0, abs=1e-12)
    assert np.std(z, ddof=1) == pytest.approx(1.0)
    np.testing.assert_allclose(sc.inverse(z), y)
    assert Standardizer.from_outputs([4.0]) == Standardizer(4.0, 1.0)


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((1, 1)), [0.0], noise_variance=-1.0)


def test_fit_kernel_improves_evidence_and_is_deterministic(rng):
    true = KernelSpec(1.0, (0.3,))
    X = np.linspace(0, 2, 25)[:, None]
    y = rng.multivariate_normal(np.zeros(25), kernel_matrix(true, X) + 1e-4 * np.eye(25))
    data = Dataset(X, y, 1e-4)
    init = KernelSpec(1.0, (3.0,))
    settings = FitSettings(n_starts=4, max_evals=400)
    fitted = fit_kernel(data, init, settings)
    assert log_marginal_likelihood(fitted, data) > log_marginal_likelihood(init, data)
    assert 0.1 < fitted.lengthscales[0] < 1.0
    assert fit_kernel(data, init, settings) == fitted
