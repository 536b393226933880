"""Command-line entry point: ``mftune {tune,benchmark,bounds,simulate}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import hri
from .bayesopt import Formulation
from .errors import MFTuneError
from .experiment import (
    CampaignResult,
    ExperimentConfig,
    _NEW_OPERATOR,
    emit_outputs,
    resolve_seed,
    run_campaign,
    run_trial,
    simulate_grid,
    stream,
)

log = logging.getLogger("mftune")


def _formulations(text: str):
    try:
        kinds = [Formulation.parse(s) for s in text.split(",") if s.strip()]
    except MFTuneError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not kinds:
        raise argparse.ArgumentTypeError("empty formulation list")
    return kinds


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (merged over the default profile)")
    common.add_argument("--seed", type=int, help="campaign seed (overrides MFTUNE_SEED and the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--formulations", type=_formulations, help="comma list of mff,csf,lsf")
    common.add_argument("--disturbed", action="store_true", help="apply the constant disturbance")
    common.add_argument("--trials", type=_positive_int, help="number of Monte Carlo trials")
    common.add_argument("--horizon", type=_positive_int, help="UCB iterations per run")
    common.add_argument("--beta", type=float, help="fixed UCB weight instead of the schedule")
    common.add_argument("--workers", type=_positive_int, help="trial worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="mftune", description="Multi-fidelity GP-UCB tuning of impedance gains."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    tune = sub.add_parser("tune", parents=[common], help="one run of one formulation")
    tune.add_argument("--trial", type=int, default=0, help="trial index to reproduce")
    sub.add_parser("benchmark", parents=[common], help="full Monte Carlo campaign")
    b = sub.add_parser("bounds", parents=[common], help="bound report for MFF runs")
    b.add_argument("--rho-squared", action="store_true", help="use rho^2 in v_MF^2 for the pass/fail columns")
    sim = sub.add_parser("simulate", parents=[common], help="cost over the grid to CSV")
    sim.add_argument("--kd", type=float, help="operator derivative gain")
    sim.add_argument("--kp", type=float, help="operator proportional gain")
    return parser


def make_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default()
    overrides: dict = {"seed": resolve_seed(config.seed, args.seed)}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.formulations is not None:
        overrides["formulations"] = [k.value for k in args.formulations]
    ucb = {}
    if args.horizon is not None:
        ucb["horizon"] = args.horizon
    if args.beta is not None:
        ucb["beta_override"] = args.beta
    if ucb:
        overrides["ucb"] = ucb
    if args.workers is not None:
        overrides["workers"] = args.workers
    config = config.updated(**overrides)
    if args.disturbed:
        config = config.with_disturbance()
    return config


def _summary(result: CampaignResult, stream_out=None):
    stream_out = stream_out or sys.stdout
    for name, a in result.aggregates().items():
        print(
            f"{name}: R_T mean {a['R_mean'][-1]:.5g} (std {a['R_std'][-1]:.3g}), "
            f"r*_T mean {a['r_star_mean'][-1]:.5g} over {a['n']} trials",
            file=stream_out,
        )
    ref = result.reference_regret()
    if ref is not None:
        print(f"undisturbed-optimal controller regret: mean {ref[0]:.5g}", file=stream_out)


def cmd_benchmark(args, config) -> int:
    out = args.out or Path("runs/benchmark")

    def progress(tr):
        log.info("trial %d done%s", tr.trial, "" if tr.complete else f" (failed: {tr.error})")

    result = run_campaign(config, progress=progress)
    emit_outputs(result, out)
    _summary(result)
    print(f"outputs written to {out}")
    return 0 if result.complete else 1


def cmd_tune(args, config) -> int:
    kinds = config.formulations
    if len(kinds) != 1:
        kinds = kinds[:1]
        log.info("tune runs one formulation; using %s", kinds[0].value)
    config = config.updated(formulations=[kinds[0].value], bounds={"enabled": False})
    out = args.out or Path("runs/tune")
    trial = run_trial(config, args.trial)
    result = CampaignResult(config, [trial])
    emit_outputs(result, out, plots=False)
    trace = trial.traces[kinds[0].value]
    if len(trace):
        x = trace.points[int(np.argmax(trace.f_true))]
        print(f"{kinds[0].value}: best controller x = ({x[0]:.4g}, {x[1]:.4g}, {x[2]:.4g}), "
              f"regret {trace.r_best[-1]:.5g}, cumulative {trace.R[-1]:.5g}")
    return 0 if trial.complete else 1


def cmd_bounds(args, config) -> int:
    config = config.updated(formulations=["mff"], bounds={"enabled": True})
    out = args.out or Path("runs/bounds")
    result = run_campaign(config)
    emit_outputs(result, out, plots=False)
    recs = [t.bounds for t in result.trials if t.bounds is not None]
    key = "regret_bound_rho_squared" if args.rho_squared else "regret_bound"
    ok = sum(
        r.gain_ok and r.R_T <= r.row()[key] for r in recs
    )
    print(f"bounds hold in {ok} of {len(recs)} trials; "
          f"low-noise precondition met in {sum(r.report.precondition_met for r in recs)}")
    print(f"outputs written to {out}")
    return 0 if result.complete else 1


def cmd_simulate(args, config) -> int:
    if (args.kd is None) != (args.kp is None):
        raise MFTuneError("give both --kd and --kp, or neither")
    if args.kd is not None:
        gains = hri.OperatorGains(args.kd, args.kp)
    else:
        gains = hri.sample_operator(stream(config.seed, 0, _NEW_OPERATOR), config.operator_distribution)
    X, J, diverged = simulate_grid(config, gains)
    out = args.out or Path("runs/simulate")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "grid_costs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "x3", "J", "diverged_flag"])
        for x, j, dv in zip(X, J, diverged):
            w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(x[2])), repr(float(j)), int(dv)])
    i = int(np.argmin(J))
    print(f"k_d={gains.k_d:.4g} k_p={gains.k_p:.4g}: min J {J[i]:.6g} at x = {tuple(np.round(X[i], 4))}; "
          f"{int(diverged.sum())} diverged; written to {path}")
    return 0


COMMANDS = {
    "tune": cmd_tune,
    "benchmark": cmd_benchmark,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = make_config(args)
        return COMMANDS[args.command](args, config)
    except (MFTuneError, OSError) as exc:
        print(f"mftune: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
