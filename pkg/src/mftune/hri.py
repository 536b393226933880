"""Human-robot impedance plant, structured controller and quadratic cost.

State ordering is ``Z = [e; e_dot; f_h]`` (``3n``). The robot behaves as a
unit-mass impedance model driven by ``u = -K Z`` and the operator acts as a
first-order PD element ``K_d f_h' + K_p f_h = e`` with scalar gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import BACKEND, quadratic_costs
from .errors import InvalidInputError, MFTuneError

DEFAULT_HORIZON = 10.0
DEFAULT_STEP = 1e-3
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class OperatorGains:
    """Derivative and proportional gains of one human operator."""

    k_d: float
    k_p: float

    def __post_init__(self):
        if not (self.k_d > 0 and self.k_p > 0):
            raise InvalidInputError(f"operator gains must be positive, got {self}")


def default_cost_weights(n: int = 2):
    """``Q = diag(0.1 I, 0.1 I, 10 I)`` and ``R = I``: penalize human effort."""
    Q = np.diag(np.concatenate([np.full(2 * n, 0.1), np.full(n, 10.0)]))
    return Q, np.eye(n)


def position_error_ic(n: int = 2) -> np.ndarray:
    """``Z(0) = [I_n 0 0]^T``: one unit position error per axis, one column each."""
    Z0 = np.zeros((3 * n, n))
    Z0[:n, :n] = np.eye(n)
    return Z0


def default_disturbance(n: int = 2, magnitude: float = 0.05) -> np.ndarray:
    """Constant forcing on the error-rate states."""
    d = np.zeros(3 * n)
    d[n : 2 * n] = magnitude
    return d


@dataclass(frozen=True, eq=False)
class HriPlant:
    """Augmented LTI plant ``Z' = A Z + B u + d`` for one operator."""

    n: int
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Z0: np.ndarray
    d: np.ndarray
    gains: OperatorGains | None = None

    def closed_loop(self, K) -> np.ndarray:
        return self.A - self.B @ np.asarray(K, dtype=float)


def build_plant(n, gains: OperatorGains, Q=None, R=None, Z0=None, d=None) -> HriPlant:
    """Assemble the block state matrices for operator ``gains``."""
    n = int(n)
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    if gains.k_d == 0:
        raise InvalidInputError("k_d must be non-zero")
    I = np.eye(n)
    A = np.zeros((3 * n, 3 * n))
    A[:n, n : 2 * n] = I
    A[2 * n :, :n] = I / gains.k_d
    A[2 * n :, 2 * n :] = -(gains.k_p / gains.k_d) * I
    B = np.zeros((3 * n, n))
    B[n : 2 * n, :] = I
    Qd, Rd = default_cost_weights(n)
    Q = Qd if Q is None else np.asarray(Q, dtype=float)
    R = Rd if R is None else np.asarray(R, dtype=float)
    Z0 = position_error_ic(n) if Z0 is None else np.asarray(Z0, dtype=float)
    d = np.zeros(3 * n) if d is None else np.asarray(d, dtype=float).ravel()
    if Q.shape != (3 * n, 3 * n) or R.shape != (n, n):
        raise InvalidInputError("Q must be 3n x 3n and R n x n")
    if Z0.ndim == 1:
        Z0 = Z0[:, None]
    if Z0.shape[0] != 3 * n or d.shape != (3 * n,):
        raise InvalidInputError("Z0 and d must have 3n rows")
    return HriPlant(n, A, B, Q, R, Z0, d, gains)


def build_controller(x, n: int = 2) -> np.ndarray:
    """``K(x) = [x1 I, x2 I, x3 I]`` (stiffness, damping, human-force gain)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != 3:
        raise InvalidInputError("controller parameters are (x1, x2, x3)")
    return np.hstack([v * np.eye(n) for v in x])


def build_controllers(X, n: int = 2) -> np.ndarray:
    """Stack of controllers for the rows of ``X``, shape ``(P, n, 3n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eye = np.eye(n)
    return np.concatenate([X[:, j, None, None] * eye for j in range(3)], axis=2)


@dataclass
class CostResult:
    J: np.ndarray
    diverged: np.ndarray


def evaluate_costs(plant: HriPlant, X, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP) -> CostResult:
    """Finite-horizon cost for every controller parameter row of ``X``."""
    if not (horizon > 0 and step > 0):
        raise InvalidInputError("horizon and step must be positive")
    Ks = build_controllers(X, plant.n)
    A_cl = plant.A[None] - plant.B[None] @ Ks
    W = plant.Q[None] + np.transpose(Ks, (0, 2, 1)) @ plant.R[None] @ Ks
    J, div = quadratic_costs(A_cl, W, plant.Z0, plant.d, horizon, step, DIVERGENCE_LIMIT)
    return CostResult(np.asarray(J), np.asarray(div, dtype=bool))


def evaluate_cost(plant: HriPlant, K, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP):
    """Cost of a single gain matrix ``K``; returns ``(J, diverged)``."""
    if not (horizon > 0 and step > 0):
        raise InvalidInputError("horizon and step must be positive")
    K = np.asarray(K, dtype=float)
    A_cl = plant.closed_loop(K)
    W = plant.Q + K.T @ plant.R @ K
    J, div = quadratic_costs(A_cl, W, plant.Z0, plant.d, horizon, step, DIVERGENCE_LIMIT)
    return float(J[0]), bool(div[0])


def performance(plant: HriPlant, X, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP) -> np.ndarray:
    """Noiseless performance ``-J`` at the rows of ``X``."""
    return -evaluate_costs(plant, X, horizon, step).J


def performance_sample(
    plant: HriPlant, x, noise_variance, rng, horizon=DEFAULT_HORIZON, step=DEFAULT_STEP
):
    """Noisy performance ``-J(K(x)) + eta``.

    ``x`` may be one point or a ``(t, 3)`` array; one noise draw per point.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    f = performance(plant, X, horizon, step)
    if noise_variance > 0:
        f = f + rng.normal(0.0, np.sqrt(noise_variance), size=f.shape)
    return float(f[0]) if np.ndim(x) == 1 else f


def lyapunov_cost(plant: HriPlant, K) -> float:
    """Infinite-horizon cost ``sum_cols z0^T P z0`` (requires Hurwitz ``A - B K``)."""
    import scipy.linalg

    A_cl = plant.closed_loop(K)
    if np.max(np.linalg.eigvals(A_cl).real) >= 0:
        raise InvalidInputError("closed loop is not Hurwitz")
    W = plant.Q + np.asarray(K).T @ plant.R @ np.asarray(K)
    P = scipy.linalg.solve_continuous_lyapunov(A_cl.T, -W)
    return float(np.trace(plant.Z0.T @ P @ plant.Z0))


@dataclass(frozen=True)
class OperatorDistribution:
    """Normal draws for ``k_d`` and ``k_p``.

    ``spread_is_variance`` selects whether the second parameter of each
    normal is a variance (default) or a standard deviation.
    """

    mean_d: float = 10.0
    spread_d: float = 5.0
    mean_p: float = 20.0
    spread_p: float = 5.0
    spread_is_variance: bool = True
    floor: float = 0.1
    max_draws: int = 1000

    def std(self):
        if self.spread_is_variance:
            return np.sqrt(self.spread_d), np.sqrt(self.spread_p)
        return self.spread_d, self.spread_p


def sample_operator(rng, dist: OperatorDistribution | None = None) -> OperatorGains:
    """Draw operator gains, redrawing until both are at least ``dist.floor``."""
    dist = dist or OperatorDistribution()
    sd, sp = dist.std()
    for _ in range(dist.max_draws):
        k_d = rng.normal(dist.mean_d, sd)
        k_p = rng.normal(dist.mean_p, sp)
        if k_d >= dist.floor and k_p >= dist.floor:
            return OperatorGains(float(k_d), float(k_p))
    raise MFTuneError(f"no admissible operator gains after {dist.max_draws} draws")


__all__ = [
    "BACKEND",
    "CostResult",
    "HriPlant",
    "OperatorDistribution",
    "OperatorGains",
    "build_controller",
    "build_controllers",
    "build_plant",
    "evaluate_cost",
    "evaluate_costs",
    "lyapunov_cost",
    "default_cost_weights",
    "default_disturbance",
    "performance",
    "performance_sample",
    "position_error_ic",
    "sample_operator",
]
