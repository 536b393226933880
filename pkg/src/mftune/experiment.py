"""Monte Carlo campaigns comparing MFF, CSF and LSF on the simulated plant.

A campaign draws, per trial, ``previous`` operators whose noisy evaluations
at random grid points form the history, plus one new operator whose
noiseless performance is evaluated over the whole grid to obtain
``f_star``. Each requested formulation then runs UCB against the new
operator. Every random stream is derived from ``(seed, trial, purpose)``
through :class:`numpy.random.SeedSequence`, so results do not depend on
execution order or on which formulations are requested.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import hri
from .bayesopt import (
    DesignGrid,
    Formulation,
    ModelConfig,
    RegretTrace,
    UcbConfig,
    beta_schedule,
    run_formulation,
)
from .bounds import BoundReport, bound_report, conditional_cov_exact, info_gain_exact, mf_variance
from .errors import InvalidInputError
from .gp import Dataset, FitSettings
from .kernels import KernelSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_PROFILE = "default"

RESULTS_COLUMNS = [
    "trial", "formulation", "iter", "x1", "x2", "x3", "y_noisy", "f_true",
    "r_t", "R_t", "r_star_t", "diverged_flag",
]

# Stream purposes for SeedSequence spawn keys. Formulation noise streams use
# a fixed offset per formulation so subsets reproduce the full campaign.
_HISTORY, _NEW_OPERATOR = 0, 1
_FORMULATION_STREAM = {Formulation.MFF: 2, Formulation.CSF: 3, Formulation.LSF: 4}


def load_profile(name: str = DEFAULT_PROFILE) -> dict:
    text = resources.files("mftune").joinpath("profiles", f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a campaign.

    Build one with :meth:`default`, :meth:`from_mapping` or :meth:`load`;
    partial mappings are merged over the default profile. The raw nested
    mapping is kept in ``raw`` and written to the run metadata.
    """

    raw: dict = field(default_factory=lambda: load_profile())

    def __post_init__(self):
        version = self.raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported config schema_version {version}")
        if self.trials < 1:
            raise InvalidInputError("trials must be at least 1")
        if not self.formulations:
            raise InvalidInputError("formulation list is empty")
        ops = self.raw["operators"]
        if ops["previous"] < 0 or ops["points_per_operator"] < 1:
            raise InvalidInputError("operator counts must be non-negative")
        if self.noise_variance < 0:
            raise InvalidInputError("noise_variance must be non-negative")
        self.grid, self.ucb, self.model_config()  # validate eagerly

    # -- construction -------------------------------------------------------

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(load_profile())

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "ExperimentConfig":
        return cls(_merge(load_profile(), mapping or {}))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise InvalidInputError(f"{path}: expected a mapping at the top level")
        return cls.from_mapping(data)

    def updated(self, **overrides) -> "ExperimentConfig":
        """Copy with nested overrides, e.g. ``updated(ucb={"horizon": 5})``."""
        return ExperimentConfig(_merge(self.raw, overrides))

    def to_mapping(self) -> dict:
        return copy.deepcopy(self.raw)

    # -- typed views --------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def trials(self) -> int:
        return int(self.raw["trials"])

    @property
    def workers(self) -> int:
        return max(int(self.raw.get("workers", 1)), 1)

    @property
    def formulations(self) -> list:
        return [Formulation.parse(f) for f in self.raw["formulations"]]

    @property
    def noise_variance(self) -> float:
        return float(self.raw["noise_variance"])

    @property
    def grid(self) -> DesignGrid:
        g = self.raw["grid"]
        return DesignGrid(g["ranges"], g["counts"])

    @property
    def ucb(self) -> UcbConfig:
        u = self.raw["ucb"]
        return UcbConfig(float(u["delta"]), int(u["horizon"]), u.get("beta_override"))

    @property
    def disturbance(self):
        d = self.raw["plant"].get("disturbance")
        return None if d is None else np.asarray(d, dtype=float)

    @property
    def disturbed(self) -> bool:
        d = self.disturbance
        return d is not None and bool(np.any(d != 0))

    @property
    def operator_distribution(self) -> hri.OperatorDistribution:
        o = self.raw["operators"]
        return hri.OperatorDistribution(
            float(o["mean_d"]), float(o["spread_d"]), float(o["mean_p"]),
            float(o["spread_p"]), bool(o["spread_is_variance"]), float(o["floor"]),
        )

    def with_disturbance(self) -> "ExperimentConfig":
        return self.updated(plant={"disturbance": list(self.raw["plant"]["disturbed_value"])})

    def plant(self, gains, disturbed: bool | None = None) -> hri.HriPlant:
        p = self.raw["plant"]
        n = int(p["n"])
        use_d = self.disturbed if disturbed is None else disturbed
        return hri.build_plant(
            n, gains, Q=np.diag(p["q_diag"]), R=np.diag(p["r_diag"]),
            d=self.disturbance if use_d else None,
        )

    def performance(self, plant, X) -> hri.CostResult:
        p = self.raw["plant"]
        return hri.evaluate_costs(plant, X, float(p["sim_horizon"]), float(p["step"]))

    def model_config(self) -> ModelConfig:
        m = self.raw["model"]
        fit = m.get("fit", {})
        settings = FitSettings(
            lengthscale_bounds=[tuple(b) for b in fit.get("lengthscale_bounds", [(1e-3, 10.0)])],
            variance_bounds=tuple(fit.get("variance_bounds", (1e-3, 1e3))),
            n_starts=int(fit.get("n_starts", 6)),
            max_evals=int(fit.get("max_evals", 1200)),
            seed=int(fit.get("seed", 0)),
        )
        return ModelConfig(
            kernel=KernelSpec(float(m["signal_variance"]), tuple(m["lengthscales"])),
            delta_kernel=KernelSpec(
                float(m["delta_signal_variance"]), tuple(m["delta_lengthscales"])
            ),
            noise_variance=self.noise_variance,
            noise_L=m.get("noise_L"),
            rho=float(m["rho"]),
            rho_method=str(m.get("rho_method", "history")),
            standardize=bool(m.get("standardize", True)),
            auto_fit=bool(m.get("auto_fit", True)),
            fit_settings=settings,
        )


def stream(seed: int, trial: int, purpose: int) -> np.random.Generator:
    """Independent generator for ``(seed, trial, purpose)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, purpose)))


def generate_history(config: ExperimentConfig, rng: np.random.Generator):
    """Noisy evaluations of ``previous`` freshly drawn operators.

    Returns ``(datasets, gains)``. Points are drawn uniformly from the grid,
    without replacement unless ``operators.with_replacement`` is set.
    """
    ops = config.raw["operators"]
    m, k = int(ops["previous"]), int(ops["points_per_operator"])
    X = config.grid.points
    if not ops.get("with_replacement", False) and k > len(X):
        raise InvalidInputError("more history points than grid points")
    sd = math.sqrt(config.noise_variance)
    dist = config.operator_distribution
    datasets, gains = [], []
    for _ in range(m):
        g = hri.sample_operator(rng, dist)
        idx = rng.choice(len(X), size=k, replace=bool(ops.get("with_replacement", False)))
        f = -config.performance(config.plant(g), X[idx]).J
        y = f + rng.normal(0.0, sd, size=k) if sd > 0 else f
        datasets.append(Dataset(X[idx], y, config.noise_variance))
        gains.append(g)
    return datasets, gains


@dataclass
class BoundRecord:
    """Bound check for one MFF trace, in original output units."""

    report: BoundReport
    gamma_realized: float
    regret_bound: float
    regret_bound_rho_squared: float
    v_mf2_rho_squared: float
    R_T: float
    beta_T: float
    scale: float
    rho: float

    @property
    def gain_ok(self) -> bool:
        return self.gamma_realized <= self.report.gamma_tilde

    @property
    def regret_ok(self) -> bool:
        return self.R_T <= self.regret_bound

    def row(self) -> dict:
        rep = self.report.to_dict()
        return {
            "gamma_realized": self.gamma_realized,
            "gamma_tilde": rep["gamma_tilde"],
            "h": rep["h"],
            "lambda_max": rep["lambda_max"],
            "beta_T": self.beta_T,
            "rho": self.rho,
            "v_mf2": rep["v_mf2"],
            "v_mf2_rho_squared": self.v_mf2_rho_squared,
            "C1": rep["C1"],
            "regret_bound": self.regret_bound,
            "regret_bound_rho_squared": self.regret_bound_rho_squared,
            "R_T": self.R_T,
            "output_scale": self.scale,
            "precondition_met": int(rep["precondition_met"]),
            "mf_benefit": "" if rep["mf_benefit"] is None else int(rep["mf_benefit"]),
            "gain_ok": int(self.gain_ok),
            "regret_ok": int(self.regret_ok),
        }


def bound_record(trace: RegretTrace, ucb: UcbConfig, grid_size: int) -> BoundRecord:
    """Bound quantities for a finished MFF trace.

    The surrogate works in standardized units, so the regret bound computed
    there is multiplied by the output scale before comparison with the
    realized cumulative regret.
    """
    surrogate = trace.surrogate
    model, scaler = surrogate.last_model, surrogate.last_scaler
    T = len(trace)
    beta_T = ucb.beta(T, grid_size)
    single = KernelSpec(
        mf_variance(model.kernel_L.signal_variance, model.kernel_delta.signal_variance,
                    model.rho, rho_squared=True),
        model.kernel_L.lengthscales,
    )
    rep = bound_report(model, T, beta_T, strict=False, single_kernel=single)
    rep_sq = bound_report(model, T, beta_T, strict=False, rho_squared=True)
    latent = conditional_cov_exact(model).values - model.noise_H * np.eye(len(model.data_H))
    gamma = info_gain_exact(latent, model.noise_H, T)
    return BoundRecord(
        rep, gamma, rep.regret_bound * scaler.scale, rep_sq.regret_bound * scaler.scale,
        rep_sq.v_mf2, float(trace.R[-1]), beta_T, scaler.scale, model.rho,
    )


@dataclass
class TrialResult:
    trial: int
    traces: dict
    gains: hri.OperatorGains
    history_gains: list
    diverged: np.ndarray
    f_star: float
    reference_regret: float | None = None
    bounds: BoundRecord | None = None
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.error is None and all(t.complete for t in self.traces.values())


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """One Monte Carlo trial for every requested formulation."""
    seed = config.seed
    X = config.grid.points
    history, history_gains = generate_history(config, stream(seed, trial, _HISTORY))
    gains = hri.sample_operator(stream(seed, trial, _NEW_OPERATOR), config.operator_distribution)
    cost = config.performance(config.plant(gains), X)
    f = -cost.J
    reference = None
    if config.disturbed:
        f_clean = -config.performance(config.plant(gains, disturbed=False), X).J
        reference = float(f.max() - f[int(np.argmax(f_clean))])
    sd = math.sqrt(config.noise_variance)
    ucb, model_cfg = config.ucb, config.model_config()
    traces, bounds = {}, None
    for kind in config.formulations:
        rng = stream(seed, trial, _FORMULATION_STREAM[kind])

        def oracle(x, rng=rng):
            i = int(np.flatnonzero(np.all(X == x, axis=1))[0])
            return f[i] + (rng.normal(0.0, sd) if sd > 0 else 0.0)

        trace = run_formulation(kind, history, oracle, X, ucb, model_cfg, f_true=f)
        if kind is Formulation.MFF and config.raw["bounds"].get("enabled", True) and len(trace):
            bounds = bound_record(trace, ucb, len(X))
        trace.surrogate = None  # keep results picklable and small
        traces[kind.value] = trace
    return TrialResult(trial, traces, gains, history_gains, cost.diverged,
                       float(f.max()), reference, bounds)


def _safe_trial(args) -> TrialResult:
    config, trial = args
    try:
        return run_trial(config, trial)
    except Exception as exc:  # noqa: BLE001 - recorded, campaign continues
        log.exception("trial %d failed", trial)
        return TrialResult(trial, {}, None, [], np.zeros(0, bool), math.nan,
                           error=f"{type(exc).__name__}: {exc}")


@dataclass
class CampaignResult:
    config: ExperimentConfig
    trials: list

    @property
    def complete(self) -> bool:
        return all(t.complete for t in self.trials)

    def aggregates(self) -> dict:
        """Per-formulation mean and std (``ddof=0``) of ``R_t`` and ``r*_t``."""
        out = {}
        for kind in self.config.formulations:
            R = [t.traces[kind.value].R for t in self.trials
                 if kind.value in t.traces and t.traces[kind.value].complete]
            rb = [t.traces[kind.value].r_best for t in self.trials
                  if kind.value in t.traces and t.traces[kind.value].complete]
            if not R:
                continue
            R, rb = np.array(R), np.array(rb)
            out[kind.value] = {
                "R_mean": R.mean(0), "R_std": R.std(0),
                "r_star_mean": rb.mean(0), "r_star_std": rb.std(0), "n": len(R),
            }
        return out

    def reference_regret(self):
        vals = [t.reference_regret for t in self.trials if t.reference_regret is not None]
        return (float(np.mean(vals)), float(np.std(vals))) if vals else None


def run_campaign(config: ExperimentConfig, progress=None) -> CampaignResult:
    """Run every trial; failures are recorded and the campaign continues."""
    jobs = [(config, i) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_safe_trial, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_safe_trial(job))
            if progress:
                progress(results[-1])
    results.sort(key=lambda r: r.trial)
    return CampaignResult(config, results)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def results_rows(result: CampaignResult):
    X = result.config.grid.points
    for tr in result.trials:
        for name, trace in tr.traces.items():
            if not len(trace):
                continue
            r, R, rb = trace.regrets
            for t in range(len(trace)):
                x = trace.points[t]
                yield {
                    "trial": tr.trial, "formulation": name, "iter": t + 1,
                    "x1": x[0], "x2": x[1], "x3": x[2], "y_noisy": trace.y[t],
                    "f_true": trace.f_true[t], "r_t": r[t], "R_t": R[t], "r_star_t": rb[t],
                    "diverged_flag": bool(tr.diverged[trace.indices[t]]),
                }


def emit_outputs(result: CampaignResult, out_dir, plots: bool = True) -> list:
    """Write CSVs, metadata and plots; returns the written paths."""
    if not result.config.formulations:
        raise InvalidInputError("no formulations requested")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "results.csv"
    _write_csv(path, RESULTS_COLUMNS, results_rows(result))
    written.append(path)

    agg = result.aggregates()
    cols = ["formulation", "iter", "R_mean", "R_std", "r_star_mean", "r_star_std", "n_trials"]
    rows = []
    for name, a in agg.items():
        for t in range(len(a["R_mean"])):
            rows.append({
                "formulation": name, "iter": t + 1, "R_mean": a["R_mean"][t],
                "R_std": a["R_std"][t], "r_star_mean": a["r_star_mean"][t],
                "r_star_std": a["r_star_std"][t], "n_trials": a["n"],
            })
    path = out / "aggregates.csv"
    _write_csv(path, cols, rows)
    written.append(path)

    records = [(t.trial, t.bounds) for t in result.trials if t.bounds is not None]
    if records:
        rows = [{"trial": i, **b.row()} for i, b in records]
        path = out / "bounds.csv"
        _write_csv(path, list(rows[0]), rows)
        written.append(path)

    path = out / "metadata.json"
    meta = {
        "schema_version": SCHEMA_VERSION,
        "backend": hri.BACKEND,
        "config": result.config.to_mapping(),
        "history_sampling": "with replacement"
        if result.config.raw["operators"].get("with_replacement") else "without replacement",
        "operator_spread": "variance"
        if result.config.raw["operators"]["spread_is_variance"] else "standard deviation",
        "complete": result.complete,
        "trials": [
            {
                "trial": t.trial,
                "k_d": None if t.gains is None else t.gains.k_d,
                "k_p": None if t.gains is None else t.gains.k_p,
                "f_star": t.f_star,
                "reference_regret": t.reference_regret,
                "error": t.error,
            }
            for t in result.trials
        ],
        "reference_regret": result.reference_regret(),
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(path)

    if plots and agg:
        path = out / "regret.svg"
        plot_regret(agg, path, result.reference_regret())
        written.append(path)
    return written


def plot_regret(agg: dict, path, reference=None):
    """Best-instantaneous and cumulative regret panels with one-std error bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mftune"
    fig, (ax_best, ax_cum) = plt.subplots(1, 2, figsize=(10, 4))
    for name, a in agg.items():
        t = np.arange(1, len(a["R_mean"]) + 1)
        ax_best.errorbar(t, a["r_star_mean"], yerr=a["r_star_std"], label=name.upper(), capsize=2)
        ax_cum.errorbar(t, a["R_mean"], yerr=a["R_std"], label=name.upper(), capsize=2)
    if reference is not None:
        ax_best.axhline(reference[0], color="red", linestyle="--", label="undisturbed optimum")
    ax_best.set(xlabel="iteration", ylabel="best instantaneous regret")
    ax_cum.set(xlabel="iteration", ylabel="cumulative regret")
    ax_best.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def simulate_grid(config: ExperimentConfig, gains: hri.OperatorGains):
    """Cost and divergence flag over the whole design grid for one operator."""
    X = config.grid.points
    res = config.performance(config.plant(gains), X)
    return X, res.J, res.diverged


def resolve_seed(config_seed: int, cli_seed: int | None = None, env=None) -> int:
    """``--seed`` beats ``MFTUNE_SEED``, which beats the config file."""
    env = os.environ if env is None else env
    if cli_seed is not None:
        return int(cli_seed)
    if env.get("MFTUNE_SEED"):
        try:
            return int(env["MFTUNE_SEED"])
        except ValueError:
            raise InvalidInputError(f"MFTUNE_SEED is not an integer: {env['MFTUNE_SEED']!r}")
    return int(config_seed)
