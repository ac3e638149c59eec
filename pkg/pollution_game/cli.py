"""
Command-line entry point::

    python -m pollution_game solve|simulate|verify --scenario example1 [--nx N --ny N]
        [--tol R] [--out DIR] [--format csv|vtk] [--T R --dt R] [--workers N]

Exit codes: 0 success, 1 solver failure, 2 verification failure, 3 input error.
"""
import argparse
import json
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from .config import Settings, load_settings
from .errors import (EXIT_INPUT_ERROR, EXIT_OK, EXIT_SOLVER_FAILURE, PollutionGameError,
                     VerificationError)
from .game.equilibrium import EquilibriumSolution, solve_equilibrium
from .game.model import build_game
from .game.simulation import discounted_payoff, initial_state, simulate
from .game.verification import run_verification, write_report
from .io.field_writer import write_field, write_summary
from .io.scenario_loader import ORACLE_STATES, Scenario, parse_scenario

logger = logging.getLogger(__name__)

MODES = ("solve", "simulate", "verify")


def _write_solution(solution: EquilibriumSolution, out: Path, fmt: str):
    grid = solution.game.grid
    for i in range(solution.game.n_players):
        write_field(solution.values[i], grid, out / f"v_{i + 1}", fmt, name=f"v_{i + 1}")
        write_field(solution.emissions[i], grid, out / f"u_{i + 1}", fmt, name=f"u_{i + 1}")
    write_field(solution.steady_state, grid, out / "P_ss", fmt, name="P_ss")
    write_summary(solution.summary(), out / "summary.csv")
    welfare = pd.DataFrame({"player": np.arange(1, solution.game.n_players + 1), "V_0": solution.w,
                            "V_Pss": solution.steady_state_welfare()})
    welfare.to_csv(out / "welfare.csv", index=False, float_format="%.17g")
    with open(out / "solve_report.json", "w", encoding="utf-8") as fh:
        json.dump({name: report.as_dict() for name, report in solution.reports.items()}, fh, indent=2)


def _simulate(solution: EquilibriumSolution, out: Path, fmt: str, T: float, dt: float, tol: float):
    game = solution.game
    rows = []
    for state in ORACLE_STATES:
        P0 = initial_state(state, solution)
        trajectory = simulate(game.primal, P0, solution.emissions, T, dt, game.partition,
                              stride=game.scenario.simulation.stride, tol=tol)
        for i in range(game.n_players):
            payoff = discounted_payoff(i, trajectory, solution.emissions[i], game.rho, game.phi[i])
            value = solution.value(i, P0)
            rows.append({"player": i + 1, "P0": state, "J_sim": payoff, "V": value,
                         "relative_error": abs(payoff - value) / abs(value)})
        if state == "zero":
            stride = game.scenario.simulation.stride
            means = trajectory.region_means[::stride]
            history = pd.DataFrame(means, columns=[f"mean_P_{i + 1}" for i in range(game.n_players)])
            history.insert(0, "t", trajectory.times[::stride])
            history.to_csv(out / "trajectory.csv", index=False, float_format="%.17g")
            write_field(trajectory.terminal, game.grid, out / "P_T", fmt, name="P_T")
            logger.info(f"Simulated to T={trajectory.T:g}: terminal drift {trajectory.drift:.3g}")
    payoffs = pd.DataFrame(rows)
    payoffs.to_csv(out / "payoffs.csv", index=False, float_format="%.17g")
    return payoffs


def _write_error(out: Path, error: Exception, exit_code: int):
    out.mkdir(parents=True, exist_ok=True)
    payload = {"error": type(error).__name__, "message": str(error), "exit_code": exit_code}
    report = getattr(error, "report", None)
    if report is not None:
        payload["report"] = report.as_dict()
    with open(out / "error.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def run(mode: str, scenario: Union[Scenario, str], out: Union[str, Path], nx: Optional[int] = None,
        ny: Optional[int] = None, tol: Optional[float] = None, fmt: Optional[str] = None,
        T: Optional[float] = None, dt: Optional[float] = None, workers: Optional[int] = None,
        settings: Optional[Settings] = None) -> int:
    """
    Runs one mode on a scenario and writes its artifacts to ``out``.

    Args:
        mode: ``solve``, ``simulate`` or ``verify``.
        scenario: A parsed scenario, a scenario file or a bundled scenario name.
        out: Output directory.
        nx, ny: Optional resolution override.
        tol: Relative residual of the linear solves.
        fmt: Field format, ``csv`` or ``vtk``; the scenario's choice by default.
        T, dt: Simulation horizon and step; the scenario's by default.
        workers: Threads for the per-player solves.
        settings: Defaults for the options left unset.

    Returns:
        int: The process exit code. Failures also leave ``error.json`` in ``out``.
    """
    settings = settings or Settings()
    out = Path(out)
    tol = settings.tol if tol is None else tol
    workers = settings.workers if workers is None else workers
    try:
        if mode not in MODES:
            raise ValueError(f"Unknown mode '{mode}', expected one of {MODES}")
        if not isinstance(scenario, Scenario):
            scenario = parse_scenario(scenario)
        fmt = fmt or scenario.output_format or settings.field_format
        T = scenario.simulation.T if T is None else T
        dt = scenario.simulation.dt if dt is None else dt

        game = build_game(scenario, nx=nx, ny=ny)
        solution = solve_equilibrium(game, tol=tol, workers=workers)
        out.mkdir(parents=True, exist_ok=True)
        _write_solution(solution, out, fmt)
        logger.info(f"Solution of '{scenario.name}' written to {out}")
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Summary:\n{solution.summary().to_string(index=False)}")

        if mode == "simulate":
            _simulate(solution, out, fmt, T, dt, tol)
        elif mode == "verify":
            report = run_verification(solution, T=T, dt=dt, tol=tol, workers=workers)
            write_report(report, out)
            failed = report[~report["passed"]]
            if len(failed):
                raise VerificationError(f"{len(failed)} of {len(report)} checks failed: "
                                        f"{sorted(set(failed['check']))}")
        return EXIT_OK
    except PollutionGameError as e:
        logger.error(f"{mode} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        _write_error(out, e, e.exit_code)
        return e.exit_code
    except ValueError as e:
        logger.error(f"{mode} failed: invalid input: {e}", exc_info=True)
        _write_error(out, e, EXIT_INPUT_ERROR)
        return EXIT_INPUT_ERROR
    except OSError as e:
        logger.error(f"{mode} failed: cannot write output: {e}", exc_info=True)
        try:
            _write_error(out, e, EXIT_SOLVER_FAILURE)
        except OSError as nested:
            logger.error(f"Cannot write error.json to {out}: {nested}")
        return EXIT_SOLVER_FAILURE


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pollution_game",
                                     description="Spatial transboundary pollution game solver")
    parser.add_argument("mode", choices=MODES, help="What to run")
    parser.add_argument("--scenario", required=True, help="Scenario file or bundled name (e.g. example1)")
    parser.add_argument("--nx", type=int, default=None, help="Cells across the bounding box in x")
    parser.add_argument("--ny", type=int, default=None, help="Cells across the bounding box in y")
    parser.add_argument("--tol", type=float, default=settings.tol, help="Relative residual of linear solves")
    parser.add_argument("--out", default=settings.out_dir, help="Output directory")
    parser.add_argument("--format", choices=["csv", "vtk"], default=None,
                        help=f"Field format (default: the scenario's, else {settings.field_format})")
    parser.add_argument("--T", type=float, default=None, help="Simulation horizon")
    parser.add_argument("--dt", type=float, default=None, help="Simulation time step")
    parser.add_argument("--workers", type=int, default=settings.workers, help="Threads for player solves")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = load_settings()
    except ValueError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"Invalid configuration: {e}")
        return EXIT_INPUT_ERROR
    args = build_parser(settings).parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if (args.nx is None) != (args.ny is None):
        logger.error("--nx and --ny must be given together")
        return EXIT_INPUT_ERROR
    return run(args.mode, args.scenario, args.out, nx=args.nx, ny=args.ny, tol=args.tol, fmt=args.format,
               T=args.T, dt=args.dt, workers=args.workers, settings=settings)
