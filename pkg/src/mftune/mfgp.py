"""Two-fidelity linear auto-regressive (AR-1) Gaussian process.

The high-fidelity function is modelled as ``f(x) = rho * f_L(x) + delta(x)``
with independent GPs ``f_L`` and ``delta``. Prediction conditions in two
stages: first on the low-fidelity data alone, then on the high-fidelity
residuals through the Schur complement of the joint covariance. Only the
second stage changes when a high-fidelity point is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InvalidInputError
from .gp import Dataset, FitSettings, _clamped_std, coordinate_search, fit_kernel, gp_fit
from .kernels import CholeskyFactor, KernelSpec, SymMatrix, as_points, cholesky, kernel_matrix


@dataclass(frozen=True, eq=False)
class Ar1Model:
    """AR-1 model parameters together with the data at both fidelities.

    The noise variances stored here are authoritative; the
    ``noise_variance`` fields of the datasets are ignored.
    """

    rho: float
    kernel_L: KernelSpec
    kernel_delta: KernelSpec
    noise_L: float
    noise_H: float
    data_L: Dataset
    data_H: Dataset

    def __post_init__(self):
        d = self.kernel_L.dim
        if self.kernel_delta.dim != d:
            raise InvalidInputError("kernel_L and kernel_delta dimensions differ")
        for data in (self.data_L, self.data_H):
            if len(data) and data.dim != d:
                raise InvalidInputError("dataset dimension does not match kernels")
        if self.noise_L < 0 or self.noise_H < 0:
            raise InvalidInputError("noise variances must be non-negative")

    @property
    def dim(self) -> int:
        return self.kernel_L.dim

    @property
    def X_L(self) -> np.ndarray:
        return as_points(self.data_L.inputs, self.dim)

    @property
    def X_H(self) -> np.ndarray:
        return as_points(self.data_H.inputs, self.dim)

    def with_high_data(self, data_H: Dataset) -> "Ar1Model":
        return replace(self, data_H=data_H)

    # -- stage one: low-fidelity conditioning -------------------------------

    @cached_property
    def _low_factor(self) -> CholeskyFactor:
        K = kernel_matrix(self.kernel_L, self.X_L)
        K[np.diag_indices_from(K)] += self.noise_L
        return cholesky(K)

    @cached_property
    def _low_alpha(self) -> np.ndarray:
        return self._low_factor.solve(self.data_L.outputs)

    @cached_property
    def _low_to_high(self) -> np.ndarray:
        """``L_L^{-1} k_L(X_L, X_H)``."""
        return self._low_factor.solve_lower(kernel_matrix(self.kernel_L, self.X_L, self.X_H))

    # -- stage two: high-fidelity residuals ---------------------------------

    @cached_property
    def _schur(self) -> np.ndarray:
        return conditional_cov_from_parts(self, self._low_to_high)

    @cached_property
    def _schur_factor(self) -> CholeskyFactor:
        return cholesky(self._schur)

    @cached_property
    def _high_beta(self) -> np.ndarray:
        mu_low_at_high = kernel_matrix(self.kernel_L, self.X_H, self.X_L) @ self._low_alpha
        resid = self.data_H.outputs - self.rho * mu_low_at_high
        return self._schur_factor.solve(resid)

    def predict_low(self, X):
        """Posterior mean and std of ``f_L`` given the low-fidelity data."""
        X = as_points(X, self.dim)
        KxL = kernel_matrix(self.kernel_L, X, self.X_L)
        V = self._low_factor.solve_lower(KxL.T)
        var = self.kernel_L.signal_variance - np.sum(V * V, axis=0)
        return KxL @ self._low_alpha, _clamped_std(var)

    def predict(self, X):
        """Posterior mean and std of the high-fidelity ``f`` at rows of ``X``."""
        X = as_points(X, self.dim)
        rho = self.rho
        KxL = kernel_matrix(self.kernel_L, X, self.X_L)
        V = self._low_factor.solve_lower(KxL.T)
        mean = rho * (KxL @ self._low_alpha)
        var = (
            rho**2 * (self.kernel_L.signal_variance - np.sum(V * V, axis=0))
            + self.kernel_delta.signal_variance
        )
        if len(self.data_H):
            cross = (
                rho**2 * kernel_matrix(self.kernel_L, X, self.X_H)
                + kernel_matrix(self.kernel_delta, X, self.X_H)
                - rho**2 * V.T @ self._low_to_high
            )
            mean = mean + cross @ self._high_beta
            U = self._schur_factor.solve_lower(cross.T)
            var = var - np.sum(U * U, axis=0)
        return mean, _clamped_std(var)


def conditional_cov_from_parts(model: Ar1Model, low_to_high: np.ndarray) -> np.ndarray:
    X_H = model.X_H
    S = model.rho**2 * kernel_matrix(model.kernel_L, X_H) + kernel_matrix(
        model.kernel_delta, X_H
    )
    S[np.diag_indices_from(S)] += model.noise_H
    S -= model.rho**2 * low_to_high.T @ low_to_high
    return 0.5 * (S + S.T)


def ar1_joint_covariance(model: Ar1Model) -> SymMatrix:
    """Covariance of the stacked observations ``[y_L; y_H]``."""
    X_L, X_H = model.X_L, model.X_H
    rho = model.rho
    K_LL = kernel_matrix(model.kernel_L, X_L)
    K_LL[np.diag_indices_from(K_LL)] += model.noise_L
    K_LH = rho * kernel_matrix(model.kernel_L, X_L, X_H)
    K_HH = rho**2 * kernel_matrix(model.kernel_L, X_H) + kernel_matrix(model.kernel_delta, X_H)
    K_HH[np.diag_indices_from(K_HH)] += model.noise_H
    return SymMatrix(np.block([[K_LL, K_LH], [K_LH.T, K_HH]]), check=False)


def ar1_predict(model: Ar1Model, x) -> tuple[float, float]:
    """High-fidelity posterior mean and std at a single point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.dim:
        raise InvalidInputError(f"expected a {model.dim}-dimensional point")
    mean, std = model.predict(x[None, :])
    return float(mean[0]), float(std[0])


def estimate_low_noise(datasets, decimals: int = 9):
    """Pooled within-group variance of outputs observed at repeated inputs.

    Groups observations from all ``datasets`` by (rounded) input location and
    pools the sample variances of groups with two or more members. Returns
    ``None`` when no input is repeated.
    """
    rows, ys = [], []
    for data in datasets:
        if len(data):
            rows.append(np.round(data.inputs, decimals))
            ys.append(data.outputs)
    if not rows:
        return None
    X = np.vstack(rows)
    y = np.concatenate(ys)
    _, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    ss, dof = 0.0, 0
    for g in np.unique(inverse):
        members = y[inverse == g]
        if members.size > 1:
            ss += float(np.sum((members - members.mean()) ** 2))
            dof += members.size - 1
    return ss / dof if dof else None


@dataclass
class Ar1FitConfig:
    """Settings for :func:`fit_ar1_hyperparameters`.

    ``noise_L=None`` estimates the low-fidelity noise from repeated inputs,
    falling back to ``noise_L_fallback``.
    """

    kernel_L: KernelSpec
    kernel_delta: KernelSpec
    noise_H: float
    noise_L: float | None = None
    noise_L_fallback: float = 0.0
    rho_default: float = 1.0
    rho_bounds: tuple = (0.0, 5.0)
    rho_min_points: int = 2
    fit_low: bool = True
    fit_delta: bool = False
    delta_min_points: int = 5
    low_settings: FitSettings = field(default_factory=FitSettings)
    delta_settings: FitSettings = field(default_factory=FitSettings)


def fit_rho(mu_low_at_high, y_high, bounds=(0.0, 5.0)) -> float:
    """Least-squares scale of ``y_high`` against ``mu_low_at_high`` (no intercept)."""
    mu = np.asarray(mu_low_at_high, dtype=float)
    y = np.asarray(y_high, dtype=float)
    denom = float(mu @ mu)
    if denom <= 0:
        return float(np.clip(1.0, *bounds))
    return float(np.clip((mu @ y) / denom, *bounds))


def fit_ar1_hyperparameters(
    data_L: Dataset, data_H: Dataset, config: Ar1FitConfig
) -> Ar1Model:
    """Two-stage estimate: ``f_L`` from low data, then ``rho`` and ``delta``."""
    if len(data_L) == 0:
        raise InvalidInputError("low-fidelity data must be non-empty")
    noise_L = config.noise_L
    if noise_L is None:
        noise_L = estimate_low_noise([data_L])
        if noise_L is None:
            noise_L = config.noise_L_fallback
    low_data = data_L.with_outputs(data_L.outputs, noise_L)
    kernel_L = config.kernel_L
    if config.fit_low:
        kernel_L = fit_kernel(low_data, kernel_L, config.low_settings)
    low = gp_fit(kernel_L, low_data)

    rho = config.rho_default
    kernel_delta = config.kernel_delta
    if len(data_H) >= config.rho_min_points:
        mu_H, _ = low.predict(data_H.inputs)
        rho = fit_rho(mu_H, data_H.outputs, config.rho_bounds)
        if config.fit_delta and len(data_H) >= config.delta_min_points:
            resid = Dataset(data_H.inputs, data_H.outputs - rho * mu_H, config.noise_H)
            kernel_delta = fit_kernel(resid, kernel_delta, config.delta_settings)
    return Ar1Model(rho, kernel_L, kernel_delta, noise_L, config.noise_H, low_data, data_H)


def _gaussian_logpdf(r, cov) -> float:
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, r)
    return float(
        -0.5 * z @ z - np.sum(np.log(np.diag(L))) - 0.5 * r.size * math.log(2 * math.pi)
    )


def calibrate_from_history(
    operators,
    kernel_L: KernelSpec,
    noise_L: float,
    noise_H: float,
    delta_init: KernelSpec,
    settings: FitSettings | None = None,
    rho_bounds=(0.0, 5.0),
    fit_rho: bool = True,
    rho_init: float = 1.0,
):
    """Estimate ``rho`` and the ``delta`` kernel from previous operators.

    Each operator in turn plays the high fidelity against an ``f_L`` built
    from the remaining operators. The summed AR-1 conditional log-likelihood

        sum_i log N(y_i; rho mu_-i(X_i), rho^2 C_-i(X_i) + K_delta(X_i) + noise_H I)

    is maximized over ``rho`` and the log-hyperparameters of ``delta``.
    Needs at least two non-empty operators; returns ``(rho, kernel_delta)``.
    """
    settings = settings or FitSettings()
    operators = [d for d in operators if len(d)]
    if len(operators) < 2:
        raise InvalidInputError("history calibration needs at least two operators")
    d = kernel_L.dim
    pieces = []
    for i, held in enumerate(operators):
        rest = Dataset.concat(
            [o for j, o in enumerate(operators) if j != i], noise_variance=noise_L
        )
        post = gp_fit(kernel_L, rest)
        mu, cov = post.predict(held.inputs, return_cov=True)
        pieces.append((held.inputs, held.outputs, mu, cov))

    lb = list(settings.lengthscale_bounds)
    if len(lb) == 1:
        lb = lb * d
    lo = [math.log(b[0]) for b in lb] + [math.log(settings.variance_bounds[0])]
    hi = [math.log(b[1]) for b in lb] + [math.log(settings.variance_bounds[1])]
    if fit_rho:
        lo.append(rho_bounds[0])
        hi.append(rho_bounds[1])
    lo, hi = np.array(lo), np.array(hi)

    def unpack(theta):
        kern = delta_init.with_params(math.exp(theta[d]), np.exp(theta[:d]))
        return (theta[d + 1] if fit_rho else rho_init), kern

    def objective(theta):
        rho, kern = unpack(theta)
        total = 0.0
        try:
            for X, y, mu, cov in pieces:
                C = rho**2 * cov + kernel_matrix(kern, X)
                C[np.diag_indices_from(C)] += noise_H
                total += _gaussian_logpdf(y - rho * mu, C)
        except np.linalg.LinAlgError:
            return -np.inf
        return total

    theta0 = list(np.log(delta_init.lengthscales)) + [math.log(delta_init.signal_variance)]
    if fit_rho:
        theta0.append(float(np.clip(rho_init, *rho_bounds)))
    theta0 = np.array(theta0)
    rng = np.random.default_rng(settings.seed)
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(max(settings.n_starts - 1, 0))]
    budget = max(settings.max_evals // len(starts), 1)
    best_theta, best_val = theta0, objective(theta0)
    for start in starts:
        theta, val, _ = coordinate_search(objective, start, lo, hi, settings, budget)
        if val > best_val:
            best_theta, best_val = theta, val
    rho, kern = unpack(best_theta)
    return float(rho), kern
