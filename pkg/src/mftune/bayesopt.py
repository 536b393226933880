"""GP-UCB over a discrete design grid and the three data-usage formulations.

* ``MFF`` conditions an AR-1 model whose low fidelity is the pooled data of
  the previous operators and whose high fidelity is the new operator.
* ``CSF`` pools every operator, new one included, into one GP.
* ``LSF`` uses only the new operator's data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import InconsistencyError, InvalidInputError
from .gp import Dataset, FitSettings, Standardizer, fit_kernel, gp_fit
from .kernels import KernelSpec
from .mfgp import Ar1Model, calibrate_from_history, estimate_low_noise, fit_rho

REGRET_TOL = 1e-9


class Formulation(str, Enum):
    MFF = "mff"
    CSF = "csf"
    LSF = "lsf"

    @classmethod
    def parse(cls, value) -> "Formulation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidInputError(f"unknown formulation {value!r}") from None


@dataclass(frozen=True)
class DesignGrid:
    """Cartesian grid with inclusive per-dimension ranges."""

    ranges: tuple
    counts: tuple

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        counts = tuple(int(c) for c in self.counts)
        if len(ranges) != len(counts) or not ranges:
            raise InvalidInputError("need one count per range")
        if any(c < 1 for c in counts):
            raise InvalidInputError("grid counts must be at least 1")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def standard(cls) -> "DesignGrid":
        return cls(((0.25, 0.45), (0.85, 0.95), (0.02, 0.22)), (11, 11, 11))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    def axes(self):
        return [
            np.linspace(lo, hi, c) if c > 1 else np.array([lo])
            for (lo, hi), c in zip(self.ranges, self.counts)
        ]

    @property
    def points(self) -> np.ndarray:
        """Enumerated points, last dimension varying fastest."""
        return np.array(list(itertools.product(*self.axes())), dtype=float)

    def to_dict(self) -> dict:
        return {"ranges": [list(r) for r in self.ranges], "counts": list(self.counts)}


@dataclass(frozen=True)
class UcbConfig:
    delta: float = 0.1
    horizon: int = 20
    beta_override: float | None = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInputError("delta must lie in (0, 1)")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be at least 1")

    def beta(self, t: int, domain_size: int) -> float:
        if self.beta_override is not None:
            return float(self.beta_override)
        return beta_schedule(t, domain_size, self.delta)


def beta_schedule(t: int, domain_size: int, delta: float) -> float:
    """Exploration weight ``2 log(|X| t^2 pi^2 / (6 delta))``."""
    if not 0 < delta < 1:
        raise InvalidInputError("delta must lie in (0, 1)")
    if t < 1 or domain_size < 1:
        raise InvalidInputError("t and domain_size must be at least 1")
    return 2.0 * math.log(domain_size * t * t * math.pi**2 / (6.0 * delta))


def ucb_select(mean, std, beta: float) -> int:
    """Index maximizing ``mean + sqrt(beta) * std``; lowest index wins ties."""
    mean = np.asarray(mean, dtype=float).ravel()
    std = np.asarray(std, dtype=float).ravel()
    if mean.size == 0:
        raise InvalidInputError("empty grid")
    if mean.shape != std.shape:
        raise InvalidInputError("mean and std must have the same length")
    return int(np.argmax(mean + math.sqrt(max(beta, 0.0)) * std))


def regret_trace(f_values, f_star: float, tol: float = REGRET_TOL):
    """Instantaneous, cumulative and best-so-far regret.

    Returns ``(r, R, r_best)`` arrays of the same length as ``f_values``.
    """
    f = np.asarray(f_values, dtype=float).ravel()
    r = f_star - f
    if r.size and r.min() < -tol * max(1.0, abs(f_star)):
        raise InconsistencyError(
            f"f_star={f_star!r} is below an observed true value {f.max()!r}"
        )
    r = np.maximum(r, 0.0)
    return r, np.cumsum(r), np.minimum.accumulate(r) if r.size else r


@dataclass
class RegretTrace:
    """Per-iteration record of one UCB run."""

    formulation: str
    indices: list = field(default_factory=list)
    points: list = field(default_factory=list)
    y: list = field(default_factory=list)
    f_true: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    f_star: float | None = None
    complete: bool = True
    error: str | None = None
    surrogate: object = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.indices)

    @property
    def regrets(self):
        if self.f_star is None:
            raise InvalidInputError("trace has no f_star; regret undefined")
        return regret_trace(self.f_true, self.f_star)

    @property
    def r(self):
        return self.regrets[0]

    @property
    def R(self):
        return self.regrets[1]

    @property
    def r_best(self):
        return self.regrets[2]


@dataclass
class ModelConfig:
    """Surrogate settings shared by the formulations.

    Kernel variances are in standardized output units when
    ``standardize`` is on; ``noise_variance`` and ``noise_L`` are always in
    original units.

    ``rho_method`` controls the MFF scale and discrepancy: ``"history"``
    calibrates both once from the previous operators (leave-one-operator-out
    likelihood), ``"ls"`` refits ``rho`` by least squares on the new
    operator's data each iteration, ``"fixed"`` keeps ``rho`` and
    ``delta_kernel`` as given.
    """

    kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec(1.0, (0.1, 0.05, 0.1))
    )
    delta_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec(1.0, (0.1, 0.05, 0.1))
    )
    noise_variance: float = 1e-4
    noise_L: float | None = None
    rho: float = 1.0
    fit_rho: bool = True
    rho_method: str = "history"
    rho_min_points: int = 2
    rho_bounds: tuple = (0.0, 5.0)
    standardize: bool = True
    auto_fit: bool = False
    fit_delta: bool = False
    fit_min_points: int = 5
    fit_settings: FitSettings = field(default_factory=FitSettings)

    def __post_init__(self):
        if self.rho_method not in ("history", "ls", "fixed"):
            raise InvalidInputError(f"unknown rho_method {self.rho_method!r}")


class _Surrogate:
    """Builds grid predictions for one formulation at each iteration."""

    def __init__(self, kind: Formulation, prior: Sequence[Dataset], cfg: ModelConfig, dim: int):
        self.kind = kind
        self.cfg = cfg
        self.dim = dim
        nv = cfg.noise_variance
        prior = [p for p in prior if len(p)]
        self.pooled_prior = (
            Dataset.concat(prior, nv) if prior else Dataset.empty(dim, nv)
        )
        self.kernel = cfg.kernel
        self.rho = cfg.rho
        self.low_model = None
        if kind is Formulation.MFF:
            if len(self.pooled_prior) == 0:
                raise InvalidInputError("MFF needs previous-operator data")
            self._init_mff(prior)
        elif kind is Formulation.CSF and cfg.auto_fit and len(self.pooled_prior):
            std = self._standardizer(self.pooled_prior.outputs)
            self.kernel = fit_kernel(std.dataset(self.pooled_prior), cfg.kernel, cfg.fit_settings)

    def _standardizer(self, y) -> Standardizer:
        return Standardizer.from_outputs(y) if self.cfg.standardize else Standardizer()

    def _init_mff(self, prior):
        cfg = self.cfg
        self.scaler = self._standardizer(self.pooled_prior.outputs)
        noise_L = cfg.noise_L
        if noise_L is None:
            noise_L = estimate_low_noise(prior)
            if noise_L is None:
                noise_L = cfg.noise_variance
        self.noise_L = noise_L
        low = Dataset(
            self.pooled_prior.inputs,
            self.scaler.transform(self.pooled_prior.outputs),
            self.scaler.variance(noise_L),
        )
        if cfg.auto_fit:
            self.kernel = fit_kernel(low, cfg.kernel, cfg.fit_settings)
        self.low_data = low
        self.low_gp = gp_fit(self.kernel, low)
        self.delta_kernel = cfg.delta_kernel
        if cfg.rho_method == "history" and len(prior) >= 2:
            scaled = [
                Dataset(p.inputs, self.scaler.transform(p.outputs)) for p in prior
            ]
            self.rho, self.delta_kernel = calibrate_from_history(
                scaled,
                self.kernel,
                low.noise_variance,
                self.scaler.variance(cfg.noise_variance),
                cfg.delta_kernel,
                cfg.fit_settings,
                cfg.rho_bounds,
                fit_rho=cfg.fit_rho,
                rho_init=cfg.rho,
            )

    def predict(self, new: Dataset):
        """Condition on the new operator's data; returns ``(predict_fn, info)``."""
        cfg = self.cfg
        if self.kind is Formulation.MFF:
            sc = self.scaler
            high = Dataset(new.inputs, sc.transform(new.outputs), sc.variance(cfg.noise_variance))
            rho = self.rho
            delta_kernel = self.delta_kernel
            if (
                cfg.rho_method == "ls"
                and cfg.fit_rho
                and len(high) >= max(cfg.rho_min_points, 1)
            ):
                mu_H, _ = self.low_gp.predict(high.inputs)
                rho = fit_rho(mu_H, high.outputs, cfg.rho_bounds)
                if cfg.fit_delta and len(high) >= cfg.fit_min_points:
                    resid = high.with_outputs(high.outputs - rho * mu_H)
                    delta_kernel = fit_kernel(resid, cfg.delta_kernel, cfg.fit_settings)
            model = Ar1Model(
                rho,
                self.kernel,
                delta_kernel,
                self.low_data.noise_variance,
                high.noise_variance,
                self.low_data,
                high,
            )
            self.last_model = model
            self.last_scaler = sc
            return model.predict, {"rho": rho}
        data = new if self.kind is Formulation.LSF else Dataset.concat(
            [self.pooled_prior, new], cfg.noise_variance
        )
        sc = self._standardizer(data.outputs)
        std_data = sc.dataset(data)
        post = gp_fit(self.kernel, std_data)
        self.last_model = post
        self.last_scaler = sc
        return post.predict, {}


Oracle = Callable[[np.ndarray], float]


def run_formulation(
    kind,
    prior_data: Sequence[Dataset],
    oracle: Oracle,
    grid: DesignGrid | np.ndarray,
    ucb: UcbConfig,
    model: ModelConfig | None = None,
    f_true: np.ndarray | None = None,
    initial_data: Dataset | None = None,
) -> RegretTrace:
    """Run ``ucb.horizon`` UCB iterations for one formulation.

    Parameters
    ----------
    kind : Formulation or str
    prior_data : sequence of Dataset
        Previous operators' observations (ignored by LSF).
    oracle : callable
        Returns a noisy evaluation of the new operator at a grid point.
    grid : DesignGrid or (N, d) array
    f_true : (N,) array, optional
        Noiseless new-operator performance over the grid. When given, the
        trace records ``f(x_t)`` and ``f_star = max f_true``.
    initial_data : Dataset, optional
        Observations of the new operator available before the first pick.
    """
    kind = Formulation.parse(kind)
    cfg = model or ModelConfig()
    X = grid.points if isinstance(grid, DesignGrid) else np.asarray(grid, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("empty grid")
    if kind is Formulation.LSF:
        prior_data = []
    new = initial_data if initial_data is not None else Dataset.empty(X.shape[1], cfg.noise_variance)
    new = new.with_outputs(new.outputs, cfg.noise_variance)
    surrogate = _Surrogate(kind, prior_data, cfg, X.shape[1])
    trace = RegretTrace(kind.value)
    if f_true is not None:
        f_true = np.asarray(f_true, dtype=float)
        trace.f_star = float(np.max(f_true))
    for t in range(1, ucb.horizon + 1):
        predict, info = surrogate.predict(new)
        mean, std = predict(X)
        beta = ucb.beta(t, X.shape[0])
        idx = ucb_select(mean, std, beta)
        x = X[idx]
        try:
            y = float(oracle(x))
            if not math.isfinite(y):
                raise InvalidInputError(f"oracle returned non-finite value {y}")
        except Exception as exc:  # noqa: BLE001
            trace.complete = False
            trace.error = f"{type(exc).__name__}: {exc}"
            break
        trace.indices.append(idx)
        trace.points.append(x.copy())
        trace.y.append(y)
        trace.beta.append(beta)
        trace.rho.append(info.get("rho", float("nan")))
        if f_true is not None:
            trace.f_true.append(float(f_true[idx]))
        new = new.append(x, y)
    # leave the surrogate conditioned on every observation, for bound reports
    surrogate.predict(new)
    trace.surrogate = surrogate
    return trace
