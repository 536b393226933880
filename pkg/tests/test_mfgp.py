import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mftune.errors import InvalidInputError
from mftune.gp import Dataset, FitSettings, gp_fit
from mftune.kernels import KernelSpec, kernel_matrix
from mftune.mfgp import (
    Ar1FitConfig,
    Ar1Model,
    ar1_joint_covariance,
    ar1_predict,
    calibrate_from_history,
    estimate_low_noise,
    fit_ar1_hyperparameters,
    fit_rho,
)


def random_model(rng, nL, nH, d=2):
    kL = KernelSpec(rng.uniform(0.5, 2), tuple(rng.uniform(0.3, 1.2, d)))
    kd = KernelSpec(rng.uniform(0.05, 0.5), tuple(rng.uniform(0.3, 1.2, d)))
    XL, XH = rng.uniform(-1, 1, (nL, d)), rng.uniform(-1, 1, (nH, d))
    return Ar1Model(
        rng.uniform(-1.5, 1.5), kL, kd, rng.uniform(1e-3, 0.05), rng.uniform(1e-3, 0.05),
        Dataset(XL, rng.standard_normal(nL)), Dataset(XH, rng.standard_normal(nH)),
    )


def dense_joint(model):
    """Covariance of ``[y_L; y_H]`` assembled entry by entry from the AR-1 definition."""
    XL, XH, r = model.X_L, model.X_H, model.rho
    kL, kd = model.kernel_L, model.kernel_delta
    LL = kernel_matrix(kL, XL) + model.noise_L * np.eye(len(XL))
    LH = r * kernel_matrix(kL, XL, XH)
    HH = r**2 * kernel_matrix(kL, XH) + kernel_matrix(kd, XH) + model.noise_H * np.eye(len(XH))
    return np.block([[LL, LH], [LH.T, HH]])


def dense_predict(model, Xs):
    r = model.rho
    C = dense_joint(model)
    cross = np.hstack([
        r * kernel_matrix(model.kernel_L, Xs, model.X_L),
        r**2 * kernel_matrix(model.kernel_L, Xs, model.X_H) + kernel_matrix(model.kernel_delta, Xs, model.X_H),
    ])
    y = np.concatenate([model.data_L.outputs, model.data_H.outputs])
    prior = r**2 * model.kernel_L.signal_variance + model.kernel_delta.signal_variance
    mean = cross @ np.linalg.solve(C, y)
    var = prior - np.sum(cross * np.linalg.solve(C, cross.T).T, axis=1)
    return mean, np.sqrt(np.maximum(var, 0))


@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_ar1_predict_matches_dense_conditioning(nL, nH, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, nL, nH)
    Xs = rng.uniform(-1, 1, (3, 2))
    m_ref, s_ref = dense_predict(model, Xs)
    for i, x in enumerate(Xs):
        m, s = ar1_predict(model, x)
        assert m == pytest.approx(m_ref[i], abs=1e-8)
        assert s == pytest.approx(s_ref[i], abs=1e-8)


def test_joint_covariance_matches_definition(rng):
    model = random_model(rng, 4, 3)
    np.testing.assert_allclose(ar1_joint_covariance(model).values, dense_joint(model), atol=1e-14)


def test_rho_zero_decouples(rng):
    model = random_model(rng, 4, 3)
    model = Ar1Model(0.0, model.kernel_L, model.kernel_delta, model.noise_L, model.noise_H,
                     model.data_L, model.data_H)
    Xs = rng.uniform(-1, 1, (5, 2))
    ref = gp_fit(model.kernel_delta, model.data_H.with_outputs(model.data_H.outputs, model.noise_H))
    for a, b in zip(model.predict(Xs), ref.predict(Xs)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_predict_low_is_plain_gp(rng):
    model = random_model(rng, 5, 2)
    Xs = rng.uniform(-1, 1, (4, 2))
    ref = gp_fit(model.kernel_L, model.data_L.with_outputs(model.data_L.outputs, model.noise_L))
    for a, b in zip(model.predict_low(Xs), ref.predict(Xs)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_dimension_mismatch_rejected(rng):
    model = random_model(rng, 2, 1)
    with pytest.raises(InvalidInputError):
        Ar1Model(1.0, model.kernel_L, KernelSpec(1.0, (1.0,)), 0.1, 0.1, model.data_L, model.data_H)
    with pytest.raises(InvalidInputError):
        ar1_predict(model, [0.0])


def test_fit_rho_recovers_scale():
    mu = np.array([1.0, -2.0, 0.5, 3.0])
    assert fit_rho(mu, 1.7 * mu) == pytest.approx(1.7)
    assert fit_rho(mu, 10 * mu, bounds=(0, 5)) == 5.0
    assert fit_rho(np.zeros(3), np.ones(3)) == 1.0


def test_estimate_low_noise_pooled_variance():
    a = Dataset([[0.0], [0.0], [1.0]], [1.0, 3.0, 5.0])
    b = Dataset([[1.0], [2.0]], [7.0, 0.0])
    # groups: x=0 -> {1, 3} (ss 2), x=1 -> {5, 7} (ss 2); dof 2
    assert estimate_low_noise([a, b]) == pytest.approx(2.0)
    assert estimate_low_noise([Dataset([[0.0], [1.0]], [0.0, 1.0])]) is None


def test_fit_ar1_hyperparameters_two_stage(rng):
    X = np.linspace(0, 1, 12)[:, None]
    fL = np.sin(4 * X[:, 0])
    data_L = Dataset(X, fL)
    data_H = Dataset(X[::3], 2.0 * fL[::3])
    cfg = Ar1FitConfig(KernelSpec(1.0, (0.3,)), KernelSpec(0.01, (0.3,)), noise_H=1e-6,
                       noise_L_fallback=1e-6, fit_low=False)
    model = fit_ar1_hyperparameters(data_L, data_H, cfg)
    assert model.rho == pytest.approx(2.0, rel=1e-3)
    m, _ = model.predict(X)
    np.testing.assert_allclose(m, 2.0 * fL, atol=0.05)


def test_calibrate_from_history_recovers_scale():
    rng = np.random.default_rng(3)
    kL = KernelSpec(1.0, (0.4,))
    grid = np.linspace(0, 2, 60)[:, None]
    base = rng.multivariate_normal(np.zeros(60), kernel_matrix(kL, grid) + 1e-9 * np.eye(60))
    ops = []
    for _ in range(6):
        idx = rng.choice(60, 15, replace=False)
        y = 0.8 * base[idx] + rng.normal(0, 0.01, 15)
        ops.append(Dataset(grid[idx], y))
    rho, kd = calibrate_from_history(
        ops, kL, 1e-4, 1e-4, KernelSpec(0.1, (0.4,)), FitSettings(n_starts=2, max_evals=300),
    )
    # leave-one-out means are themselves scaled by 0.8, so the ratio is near one
    assert 0.7 < rho < 1.3
    assert kd.signal_variance < 0.1


def test_calibrate_from_history_needs_two_operators():
    with pytest.raises(InvalidInputError):
        calibrate_from_history([Dataset([[0.0]], [1.0])], KernelSpec(1.0, (1.0,)), 0.1, 0.1,
                               KernelSpec(1.0, (1.0,)))
