"""Single-fidelity Gaussian process regression on a Cholesky factor."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .kernels import (
    CholeskyFactor,
    KernelSpec,
    as_points,
    cholesky,
    kernel_matrix,
)

#: Negative predictive variances below this magnitude are clamped silently.
VARIANCE_WARN_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Dataset:
    """Noisy observations ``y_i = f(x_i) + eta_i`` with ``eta ~ N(0, noise_variance)``."""

    inputs: np.ndarray
    outputs: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.outputs, dtype=float).ravel()
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, max(X.size, 1))
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"{X.shape[0] if X.ndim == 2 else X.shape} inputs but {y.shape[0]} outputs"
            )
        if not self.noise_variance >= 0:
            raise InvalidInputError("noise_variance must be non-negative")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @classmethod
    def empty(cls, dim: int, noise_variance: float = 0.0) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0), noise_variance)

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, x, y) -> "Dataset":
        x = as_points(x, self.dim)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return Dataset(
            np.vstack([self.inputs, x]),
            np.concatenate([self.outputs, y]),
            self.noise_variance,
        )

    def with_outputs(self, outputs, noise_variance=None) -> "Dataset":
        nv = self.noise_variance if noise_variance is None else noise_variance
        return Dataset(self.inputs, outputs, nv)

    @staticmethod
    def concat(parts, noise_variance=None) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise InvalidInputError("nothing to concatenate")
        nv = parts[0].noise_variance if noise_variance is None else noise_variance
        return Dataset(
            np.vstack([p.inputs for p in parts]),
            np.concatenate([p.outputs for p in parts]),
            nv,
        )


@dataclass(frozen=True)
class Standardizer:
    """Affine output map ``(y - mean) / scale`` and its inverse."""

    mean: float = 0.0
    scale: float = 1.0

    @classmethod
    def from_outputs(cls, y, min_scale: float = 1e-12) -> "Standardizer":
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            return cls()
        mean = float(np.mean(y))
        if y.size < 2:
            return cls(mean, 1.0)
        scale = float(np.std(y, ddof=1))
        return cls(mean, scale if scale > min_scale else 1.0)

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.mean

    def variance(self, v):
        """Map a variance from original to standardized units."""
        return v / self.scale**2

    def dataset(self, data: Dataset) -> Dataset:
        return Dataset(
            data.inputs, self.transform(data.outputs), self.variance(data.noise_variance)
        )


def _clamped_std(var: np.ndarray) -> np.ndarray:
    worst = float(np.min(var)) if var.size else 0.0
    if worst < -VARIANCE_WARN_TOL:
        warnings.warn(
            f"negative predictive variance {worst:.3g} clamped to zero",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.sqrt(np.maximum(var, 0.0))


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """GP conditioned on a :class:`Dataset`. Immutable."""

    kernel: KernelSpec
    data: Dataset
    factor: CholeskyFactor
    alpha: np.ndarray
    prior_mean: float = 0.0

    def predict(self, X, return_cov: bool = False):
        """Posterior mean and standard deviation at the rows of ``X``.

        With ``return_cov=True`` the full posterior covariance matrix is
        returned in place of the standard deviation.
        """
        X = as_points(X, self.kernel.dim)
        Ks = kernel_matrix(self.kernel, self.data.inputs, X)
        mean = self.prior_mean + Ks.T @ self.alpha
        V = self.factor.solve_lower(Ks)
        if return_cov:
            cov = kernel_matrix(self.kernel, X) - V.T @ V
            return mean, 0.5 * (cov + cov.T)
        var = self.kernel.signal_variance - np.sum(V * V, axis=0)
        return mean, _clamped_std(var)


def _alpha(factor: CholeskyFactor, data: Dataset, prior_mean: float) -> np.ndarray:
    return factor.solve(data.outputs - prior_mean)


def _noisy_gram(kernel: KernelSpec, data: Dataset) -> np.ndarray:
    K = kernel_matrix(kernel, data.inputs)
    K[np.diag_indices_from(K)] += data.noise_variance
    return K


def gp_fit(kernel: KernelSpec, data: Dataset, prior_mean: float = 0.0) -> GpPosterior:
    """Condition a zero-mean (or constant-mean) GP prior on ``data``."""
    if len(data) and data.dim != kernel.dim:
        raise InvalidInputError(f"data has dimension {data.dim}, kernel {kernel.dim}")
    if len(data) == 0:
        data = Dataset.empty(kernel.dim, data.noise_variance)
    if not np.all(np.isfinite(data.outputs)):
        raise InvalidInputError("outputs must be finite")
    factor = cholesky(_noisy_gram(kernel, data))
    return GpPosterior(kernel, data, factor, _alpha(factor, data, prior_mean), prior_mean)


def gp_predict(post: GpPosterior, x) -> tuple[float, float]:
    """Posterior mean and standard deviation at a single point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != post.kernel.dim:
        raise InvalidInputError(f"expected a {post.kernel.dim}-dimensional point")
    mean, std = post.predict(x[None, :])
    return float(mean[0]), float(std[0])


def gp_append(post: GpPosterior, x, y) -> GpPosterior:
    """Add one observation, extending the Cholesky factor by one row."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != post.kernel.dim:
        raise InvalidInputError(f"expected a {post.kernel.dim}-dimensional point")
    y = float(y)
    if not math.isfinite(y):
        raise InvalidInputError("observation must be finite")
    data = post.data.append(x, y)
    cross = kernel_matrix(post.kernel, post.data.inputs, x[None, :])[:, 0]
    corner = post.kernel.signal_variance + data.noise_variance
    factor = post.factor.extend(cross, corner)
    if factor is None:
        return gp_fit(post.kernel, data, post.prior_mean)
    return GpPosterior(
        post.kernel, data, factor, _alpha(factor, data, post.prior_mean), post.prior_mean
    )


def log_marginal_likelihood(
    kernel: KernelSpec, data: Dataset, prior_mean: float = 0.0
) -> float:
    """Log evidence ``log p(Y | X)`` under the GP prior."""
    t = len(data)
    if t == 0:
        raise InvalidInputError("log marginal likelihood needs at least one point")
    factor = cholesky(_noisy_gram(kernel, data))
    r = data.outputs - prior_mean
    alpha = factor.solve(r)
    return float(-0.5 * r @ alpha - 0.5 * factor.logdet() - 0.5 * t * math.log(2 * math.pi))


@dataclass
class FitSettings:
    """Bounds and budget for :func:`fit_kernel`.

    Bounds are ``(low, high)`` pairs in natural units; the search runs over
    their logarithms.
    """

    lengthscale_bounds: list = field(default_factory=lambda: [(1e-3, 10.0)])
    variance_bounds: tuple = (1e-3, 1e3)
    n_starts: int = 6
    max_evals: int = 1200
    initial_step: float = 1.0
    min_step: float = 1e-2
    seed: int = 0
    fit_variance: bool = True


def coordinate_search(objective, theta0, lo, hi, settings, budget):
    """Maximize ``objective`` by compass steps along each coordinate.

    The step halves after a sweep without improvement; stops below
    ``settings.min_step`` or after ``budget`` evaluations. Returns
    ``(theta, value, evaluations)``.
    """
    theta = np.clip(np.array(theta0, dtype=float), lo, hi)
    best = objective(theta)
    evals = 1
    step = settings.initial_step
    while step >= settings.min_step and evals < budget:
        improved = False
        for i in range(theta.size):
            for sign in (1.0, -1.0):
                trial = theta.copy()
                trial[i] = np.clip(trial[i] + sign * step, lo[i], hi[i])
                if trial[i] == theta[i]:
                    continue
                val = objective(trial)
                evals += 1
                if val > best:
                    theta, best, improved = trial, val, True
                    break
        if not improved:
            step *= 0.5
    return theta, best, evals


def fit_kernel(
    data: Dataset,
    init: KernelSpec,
    settings: FitSettings | None = None,
    prior_mean: float = 0.0,
) -> KernelSpec:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Gradient-free multi-start coordinate search. The first start is ``init``;
    the rest are drawn log-uniformly inside the bounds from ``settings.seed``,
    so the result is deterministic.
    """
    settings = settings or FitSettings()
    if len(data) == 0:
        return init
    d = init.dim
    lb = list(settings.lengthscale_bounds)
    if len(lb) == 1:
        lb = lb * d
    if len(lb) != d:
        raise InvalidInputError("need one lengthscale bound per dimension")
    lo = [math.log(b[0]) for b in lb]
    hi = [math.log(b[1]) for b in lb]
    if settings.fit_variance:
        lo.append(math.log(settings.variance_bounds[0]))
        hi.append(math.log(settings.variance_bounds[1]))
    lo, hi = np.array(lo), np.array(hi)

    def unpack(theta):
        ls = np.exp(theta[:d])
        var = math.exp(theta[d]) if settings.fit_variance else init.signal_variance
        return init.with_params(var, ls)

    def objective(theta):
        try:
            return log_marginal_likelihood(unpack(theta), data, prior_mean)
        except Exception:
            return -np.inf

    theta0 = np.log(init.lengthscales)
    if settings.fit_variance:
        theta0 = np.append(theta0, math.log(init.signal_variance))
    rng = np.random.default_rng(settings.seed)
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(max(settings.n_starts - 1, 0))]
    budget = max(settings.max_evals // max(len(starts), 1), 1)
    best_theta, best_val = theta0, -np.inf
    for start in starts:
        theta, val, _ = coordinate_search(objective, start, lo, hi, settings, budget)
        if val > best_val:
            best_theta, best_val = theta, val
    return unpack(best_theta)
