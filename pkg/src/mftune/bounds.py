"""Covariance, information-gain and regret bounds for AR-1 GP-UCB.

The quantities here certify a run after the fact: a PSD upper bound on
the high-fidelity conditional covariance, the information-gain bound
derived from its spectrum, and the resulting cumulative-regret bound.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, PreconditionError
from .kernels import SymMatrix, cholesky, kernel_matrix
from .mfgp import Ar1Model

#: Eigenvalue tolerance for PSD checks.
PSD_TOL = 1e-10

#: ``0.5 / (1 - 1/e)``, the constant in front of the information-gain bound.
GAIN_CONSTANT = 0.5 / (1.0 - math.exp(-1.0))


def _as_array(M) -> np.ndarray:
    if isinstance(M, SymMatrix):
        return M.values
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("expected a square matrix")
    return A


def psd_bound_check(Q, sigma2: float):
    """Compare ``(Q + s I)^-1`` with its first-order expansion ``Q^-1 - s Q^-2``.

    Returns ``(min_eig, holds)`` where ``min_eig`` is the smallest
    eigenvalue of the difference and ``holds`` tests it against
    ``-PSD_TOL``.

    Raises
    ------
    PreconditionError
        If ``sigma2 >= lambda_min(Q)`` or ``sigma2 < 0``.
    """
    Q = _as_array(Q)
    Q = 0.5 * (Q + Q.T)
    lam = np.linalg.eigvalsh(Q)
    if lam[0] <= 0:
        raise InvalidInputError("Q must be positive definite")
    if sigma2 < 0 or sigma2 >= lam[0]:
        raise PreconditionError(
            f"need 0 <= sigma^2 < lambda_min(Q) = {lam[0]:.6g}, got {sigma2:.6g}"
        )
    n = Q.shape[0]
    Qinv = np.linalg.inv(Q)
    lhs = np.linalg.inv(Q + sigma2 * np.eye(n))
    rhs = Qinv - sigma2 * Qinv @ Qinv
    diff = lhs - rhs
    min_eig = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])
    return min_eig, min_eig >= -PSD_TOL


def _blocks(model: Ar1Model):
    X_L, X_H = model.X_L, model.X_H
    k_LL = kernel_matrix(model.kernel_L, X_L)
    k_LH = kernel_matrix(model.kernel_L, X_L, X_H)
    base = model.rho**2 * kernel_matrix(model.kernel_L, X_H) + kernel_matrix(
        model.kernel_delta, X_H
    )
    base[np.diag_indices_from(base)] += model.noise_H
    return k_LL, k_LH, base


def conditional_cov_exact(model: Ar1Model) -> SymMatrix:
    """Covariance of the high-fidelity observations given the low-fidelity data."""
    k_LL, k_LH, S = _blocks(model)
    if k_LL.size:
        k_LL[np.diag_indices_from(k_LL)] += model.noise_L
        V = cholesky(k_LL).solve_lower(k_LH)
        S = S - model.rho**2 * V.T @ V
    return SymMatrix(0.5 * (S + S.T), check=False)


@dataclass(frozen=True)
class CovarianceBound:
    """Upper bound ``k_tilde`` and whether its small-noise precondition held."""

    k_tilde: SymMatrix
    precondition_met: bool
    lambda_min_LL: float


def conditional_cov_bound(
    model: Ar1Model, strict: bool = True, printed_form: bool = False
) -> CovarianceBound:
    """Noise-expanded upper bound on :func:`conditional_cov_exact`.

    ``k_tilde = S0 + rho^2 noise_L k_HL k_LL^-2 k_LH`` where ``S0`` is the
    noiseless-low conditional covariance. The expansion is justified when
    ``noise_L < lambda_min(k_LL)``. With ``strict=False`` a violated
    precondition is reported through ``precondition_met`` instead of raised,
    and ``k_LL`` is factored with the usual jitter policy.

    ``printed_form=True`` drops the ``rho^2`` on the noise term. That
    variant only dominates the exact covariance when ``|rho| <= 1``.
    """
    k_LL, k_LH, S = _blocks(model)
    if k_LL.size == 0:
        return CovarianceBound(SymMatrix(0.5 * (S + S.T), check=False), True, math.inf)
    lam_min = float(np.linalg.eigvalsh(k_LL)[0])
    met = model.noise_L < lam_min
    if strict and not met:
        raise PreconditionError(
            f"low-fidelity noise {model.noise_L:.6g} is not below "
            f"lambda_min(k_LL) = {lam_min:.6g}"
        )
    factor = cholesky(k_LL)
    W = factor.solve(k_LH)  # k_LL^-1 k_LH
    rho2 = model.rho**2
    noise_weight = model.noise_L if printed_form else rho2 * model.noise_L
    S = S - rho2 * (k_LH.T @ W) + noise_weight * (W.T @ W)
    return CovarianceBound(SymMatrix(0.5 * (S + S.T), check=False), met, lam_min)


def _psd_eigenvalues(M, what: str) -> np.ndarray:
    A = _as_array(M)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))[::-1]
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam[-1] < -1e-8 * scale:
        raise InvalidInputError(f"{what} is not PSD (min eigenvalue {lam[-1]:.3g})")
    return np.maximum(lam, 0.0)


def greedy_allocation(eigenvalues, noise: float, T: int) -> np.ndarray:
    """Split ``T`` units over ``eigenvalues`` maximizing ``sum log(1 + m_t lam_t / noise)``.

    Each unit goes to the eigenvalue with the largest marginal increase.
    The objective is separable and concave in each ``m_t``, so this is
    optimal.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    m = np.zeros(lam.size, dtype=int)
    if lam.size == 0:
        return m

    def gain(i):
        return math.log1p((m[i] + 1) * lam[i] / noise) - math.log1p(m[i] * lam[i] / noise)

    heap = [(-gain(i), i) for i in range(lam.size)]
    heapq.heapify(heap)
    for _ in range(T):
        _, i = heapq.heappop(heap)
        m[i] += 1
        heapq.heappush(heap, (-gain(i), i))
    return m


def info_gain_bound(k_tilde, noise: float, T: int) -> float:
    """Spectral upper bound on the maximum information gain after ``T`` picks.

    Uses the ``h(T) = min(T, dim)`` largest eigenvalues of ``k_tilde`` and
    the allocation from :func:`greedy_allocation`.
    """
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    if noise <= 0:
        raise InvalidInputError("noise must be positive")
    lam = _psd_eigenvalues(k_tilde, "k_tilde")
    h = min(T, lam.size)
    lam = lam[:h]
    m = greedy_allocation(lam, noise, T)
    return GAIN_CONSTANT * float(np.sum(np.log1p(m * lam / noise)))


def info_gain_exact(cov, noise: float, T: int, return_subset: bool = False):
    """Greedy maximization of ``0.5 log det(I + cov_A / noise)`` over ``|A| = T``.

    Each step adds the index with the largest posterior variance given the
    indices already chosen (observed with ``noise``), which is the largest
    marginal gain. Ties go to the lowest index.
    """
    C = _as_array(cov)
    n = C.shape[0]
    if T < 1 or T > n:
        raise InvalidInputError(f"T must lie in [1, {n}], got {T}")
    if noise <= 0:
        raise InvalidInputError("noise must be positive")
    var = np.diag(C).astype(float).copy()
    # rows of L^-1 C[A, :] for the chosen set A, built one pivot at a time
    V = np.zeros((T, n))
    chosen: list[int] = []
    total = 0.0
    for k in range(T):
        score = np.where(np.isin(np.arange(n), chosen), -np.inf, var)
        j = int(np.argmax(score))
        s = max(var[j], 0.0)
        total += 0.5 * math.log1p(s / noise)
        piv = math.sqrt(s + noise)
        V[k] = (C[j] - V[:k, j] @ V[:k]) / piv
        var = var - V[k] ** 2
        chosen.append(j)
    return (total, chosen) if return_subset else total


def mf_variance(v_L2: float, v_d2: float, rho: float, rho_squared: bool = False) -> float:
    """``rho * v_L2 + v_d2`` or, with ``rho_squared``, ``rho^2 * v_L2 + v_d2``."""
    return (rho**2 if rho_squared else rho) * v_L2 + v_d2


def regret_bound(
    T: int,
    beta_T: float,
    gamma_T: float,
    v_L2: float,
    v_d2: float,
    rho: float,
    noise_H: float,
    rho_squared: bool = False,
):
    """Return ``(C1, R_max)`` with ``R_max = sqrt(C1 T beta_T gamma_T)``."""
    v2 = mf_variance(v_L2, v_d2, rho, rho_squared)
    if not v2 > 0:
        raise InvalidInputError(f"multi-fidelity variance must be positive, got {v2}")
    if noise_H <= 0:
        raise InvalidInputError("noise_H must be positive")
    if T < 0 or beta_T < 0 or gamma_T < 0:
        raise InvalidInputError("T, beta_T and gamma_T must be non-negative")
    C1 = 8.0 * v2 / math.log1p(v2 / noise_H)
    return C1, math.sqrt(C1 * T * beta_T * gamma_T)


@dataclass
class BoundReport:
    """All bound quantities for one AR-1 model and horizon."""

    k_tilde: SymMatrix
    eigenvalues: np.ndarray
    gamma_tilde: float
    C1: float
    v_mf2: float
    regret_bound: float
    h: int
    precondition_met: bool
    rho_squared: bool = False
    mf_benefit: bool | None = None

    def to_dict(self) -> dict:
        return {
            "gamma_tilde": self.gamma_tilde,
            "C1": self.C1,
            "v_mf2": self.v_mf2,
            "regret_bound": self.regret_bound,
            "h": self.h,
            "lambda_max": float(self.eigenvalues[0]) if self.eigenvalues.size else 0.0,
            "precondition_met": self.precondition_met,
            "rho_squared": self.rho_squared,
            "mf_benefit": self.mf_benefit,
        }


def mf_benefit(k_tilde, single_kernel, X_H, noise_H: float) -> bool:
    """True when the AR-1 bound's top eigenvalue beats single-fidelity ``k_HH + noise I``."""
    K = kernel_matrix(single_kernel, X_H)
    K[np.diag_indices_from(K)] += noise_H
    lam_mf = _psd_eigenvalues(k_tilde, "k_tilde")
    lam_sf = np.linalg.eigvalsh(K)
    return bool(lam_mf.size and lam_sf.size and lam_mf[0] < lam_sf[-1])


def bound_report(
    model: Ar1Model,
    T: int,
    beta_T: float,
    strict: bool = False,
    rho_squared: bool = False,
    single_kernel=None,
) -> BoundReport:
    """Evaluate the covariance, information-gain and regret bounds on ``model.X_H``."""
    cb = conditional_cov_bound(model, strict=strict)
    lam = _psd_eigenvalues(cb.k_tilde, "k_tilde")
    gamma = info_gain_bound(cb.k_tilde, model.noise_H, T)
    v2 = mf_variance(
        model.kernel_L.signal_variance, model.kernel_delta.signal_variance, model.rho, rho_squared
    )
    C1, R = regret_bound(
        T,
        beta_T,
        gamma,
        model.kernel_L.signal_variance,
        model.kernel_delta.signal_variance,
        model.rho,
        model.noise_H,
        rho_squared,
    )
    benefit = None
    if single_kernel is not None and len(model.data_H):
        benefit = mf_benefit(cb.k_tilde, single_kernel, model.X_H, model.noise_H)
    return BoundReport(
        cb.k_tilde, lam, gamma, C1, v2, R, min(T, lam.size), cb.precondition_met,
        rho_squared, benefit,
    )
