"""Stationary kernels and dense symmetric-matrix utilities.

Everything here works on plain ``numpy`` arrays. Points are rows of a
``(t, d)`` array; a single point may be passed as a 1-d array of length ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import FactorizationError, InvalidInputError

#: Relative jitter added to the diagonal on the first failed factorization.
JITTER_START = 1e-10
#: Multiplier applied to the jitter after each further failure.
JITTER_GROWTH = 10.0
#: Maximum number of jitter escalations before giving up.
JITTER_MAX_TRIES = 6

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel with per-dimension lengthscales.

    Parameters
    ----------
    signal_variance : float
        Prior variance ``v**2``; ``k(x, x) == signal_variance``.
    lengthscales : tuple of float
        One positive lengthscale per input dimension, in input units.
    family : str
        Only ``"squared-exponential"`` is supported.
    """

    signal_variance: float
    lengthscales: tuple[float, ...]
    family: str = "squared-exponential"

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if self.family != "squared-exponential":
            raise InvalidInputError(f"unsupported kernel family {self.family!r}")
        if not self.signal_variance > 0:
            raise InvalidInputError("signal_variance must be positive")
        if len(ls) == 0 or any(not v > 0 for v in ls):
            raise InvalidInputError("every lengthscale must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def with_params(self, signal_variance=None, lengthscales=None) -> "KernelSpec":
        return KernelSpec(
            self.signal_variance if signal_variance is None else signal_variance,
            self.lengthscales if lengthscales is None else tuple(lengthscales),
            self.family,
        )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "signal_variance": self.signal_variance,
            "lengthscales": list(self.lengthscales),
        }


def as_points(X, dim: int | None = None) -> np.ndarray:
    """Return ``X`` as a float ``(t, d)`` array, checking the dimension."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if dim is None or X.size == dim else X[:, None]
    if X.ndim != 2:
        raise InvalidInputError(f"points must be 1-d or 2-d, got shape {X.shape}")
    if dim is not None and X.shape[0] > 0 and X.shape[1] != dim:
        raise InvalidInputError(f"expected {dim}-dimensional points, got {X.shape[1]}")
    if X.shape[0] == 0 and dim is not None:
        X = X.reshape(0, dim)
    return X


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Covariance between two single points."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != spec.dim or x2.size != spec.dim:
        raise InvalidInputError(
            f"points must have dimension {spec.dim}, got {x.size} and {x2.size}"
        )
    r = (x - x2) / np.asarray(spec.lengthscales)
    return spec.signal_variance * float(np.exp(-0.5 * np.dot(r, r)))


def kernel_matrix(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """Cross-covariance matrix ``k(X, X2)``; ``X2`` defaults to ``X``."""
    X = as_points(X, spec.dim)
    same = X2 is None
    X2 = X if same else as_points(X2, spec.dim)
    if X.shape[0] == 0 or X2.shape[0] == 0:
        return np.zeros((X.shape[0], X2.shape[0]))
    ls = np.asarray(spec.lengthscales)
    A = X / ls
    B = A if same else X2 / ls
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    K = spec.signal_variance * np.exp(-0.5 * sq)
    if same:
        # exact symmetry and exact diagonal regardless of round-off
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, spec.signal_variance)
    return K


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    X = as_points(X, spec.dim)
    return np.full(X.shape[0], spec.signal_variance)


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower Cholesky factor of ``A + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def solve(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if self.size == 0:
            return np.zeros_like(B)
        return scipy.linalg.cho_solve((self.lower, True), B, check_finite=False)

    def solve_lower(self, B) -> np.ndarray:
        """``L^{-1} B``."""
        B = np.asarray(B, dtype=float)
        if self.size == 0:
            return np.zeros_like(B)
        return scipy.linalg.solve_triangular(
            self.lower, B, lower=True, check_finite=False
        )

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def extend(self, cross, corner: float) -> "CholeskyFactor | None":
        """Factor of ``[[A, c], [c^T, corner]]`` from the factor of ``A``.

        Returns ``None`` when the new pivot is not positive; the caller then
        refactorizes from scratch.
        """
        cross = np.asarray(cross, dtype=float).ravel()
        row = self.solve_lower(cross)
        pivot = corner + self.jitter - float(np.dot(row, row))
        scale = max(abs(corner), 1e-300)
        if not pivot > 1e-12 * scale:
            return None
        n = self.size
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self.lower
        L[n, :n] = row
        L[n, n] = np.sqrt(pivot)
        return CholeskyFactor(L, self.jitter)


def _min_eig_estimate(A: np.ndarray) -> float:
    try:
        return float(scipy.linalg.eigvalsh(A, subset_by_index=[0, 0])[0])
    except (np.linalg.LinAlgError, ValueError):
        return float("nan")


def cholesky(
    A,
    jitter_start: float = JITTER_START,
    growth: float = JITTER_GROWTH,
    max_tries: int = JITTER_MAX_TRIES,
) -> CholeskyFactor:
    """Cholesky factorization with escalating diagonal jitter.

    The first attempt uses no jitter. On failure ``jitter_start * mean(diag)``
    is added, growing by ``growth`` for at most ``max_tries`` escalations.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    if not np.all(np.isfinite(A)):
        raise FactorizationError("matrix contains non-finite entries")
    base = abs(float(np.mean(np.diag(A)))) or 1.0
    jitter = 0.0
    for attempt in range(max_tries + 1):
        try:
            L = np.linalg.cholesky(A + jitter * np.eye(n) if jitter else A)
            return CholeskyFactor(L, jitter)
        except np.linalg.LinAlgError:
            jitter = base * jitter_start * growth**attempt
    lam = _min_eig_estimate(A)
    raise FactorizationError(
        f"matrix is not positive definite after jitter {jitter / growth:.3g}; "
        f"minimum eigenvalue estimate {lam:.6g}",
        min_eigenvalue=lam,
    )


class SymMatrix:
    """Dense symmetric matrix with a lazily computed Cholesky factor."""

    def __init__(self, values, check: bool = True):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidInputError(f"expected a square matrix, got {values.shape}")
        if check and values.size:
            scale = max(float(np.max(np.abs(values))), 1e-300)
            if np.max(np.abs(values - values.T)) > SYMMETRY_RTOL * scale:
                raise InvalidInputError("matrix is not symmetric")
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @cached_property
    def factor(self) -> CholeskyFactor:
        return cholesky(self.values)

    def eigvalsh(self) -> np.ndarray:
        """Eigenvalues in descending order."""
        return np.sort(np.linalg.eigvalsh(self.values))[::-1]

    def min_eigenvalue(self) -> float:
        if self.values.size == 0:
            return float("inf")
        return float(np.linalg.eigvalsh(self.values)[0])


def factor_solve(A, B) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    if isinstance(A, CholeskyFactor):
        return A.solve(B)
    if not isinstance(A, SymMatrix):
        A = SymMatrix(A)
    return A.factor.solve(B)
