"""
Stationary Markov-perfect Nash equilibrium of the pollution game.

Each player's value is affine in the stock, ``V_i(P) = w_i + <v_i, P>``. The
slope solves the elliptic adjoint problem ``(A* - rho I) v_i = phi_i 1_i``,
the equilibrium emissions are ``u_i = -1/v_i`` on the player's own territory
and the steady stock solves ``A P + sum_j u_j = 0``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import DEFAULT_TOL
from ..errors import SignViolationError, SolverError
from ..io.field_writer import SUMMARY_HEADER
from ..spatial.assembly import SparseOperator, indicator_load
from ..spatial.geometry import Grid, RegionPartition
from ..spatial.linsolve import LinearSolver, SolveReport
from ..spatial.utils import field_stats, inner, integrate, region_means
from .model import DiscreteGame

logger = logging.getLogger(__name__)


def _check_negative(v: np.ndarray, grid: Grid, what: str):
    bad = np.flatnonzero(~(v < 0))
    if bad.size:
        x, y = grid.centers[bad[0]]
        raise SignViolationError(f"{what} is not strictly negative on {bad.size} cells "
                                 f"(first at x={x:g}, y={y:g}, value {v[bad[0]]:.3g})")


def _player_value(solver: LinearSolver, load: np.ndarray, grid: Grid, player: int) -> Tuple[np.ndarray, SolveReport]:
    v, report = solver.solve(load)
    _check_negative(v, grid, f"Adjoint field of player {player + 1}")
    return v, report


def solve_player_value(adjoint: SparseOperator, rho: float, load: np.ndarray,
                       tol: float = DEFAULT_TOL, method: str = "direct") -> np.ndarray:
    """
    Solves ``(A* - rho I) v = load`` for the value slope of one player.

    Args:
        adjoint: The discrete adjoint operator.
        rho: Discount rate.
        load: ``phi_i`` times the indicator of the player's territory.

    Returns:
        np.ndarray: The strictly negative field ``v_i``.

    Raises:
        ValueError: If ``rho`` is not positive or the load is not a non-zero, non-negative field.
        SolverError: If the linear solve fails.
        SignViolationError: If some cell of ``v_i`` is not negative.
    """
    if not rho > 0:
        raise ValueError("ρ must be positive")
    load = np.asarray(load, dtype=float)
    if np.any(load < 0) or not np.any(load > 0):
        raise ValueError("load must be non-negative and non-zero (φ must be positive)")
    solver = LinearSolver(adjoint.shifted(-rho), method=method, tol=tol)
    v, _ = solver.solve(load)
    _check_negative(v, adjoint.grid, "Adjoint field")
    return v


def emissions_from_value(v: np.ndarray, partition: RegionPartition, i: int) -> np.ndarray:
    """
    Equilibrium emission field ``u_i = -1/v_i`` on country ``i``, zero elsewhere.

    Raises:
        SignViolationError: If ``v_i`` is not negative on every cell of country ``i``.
    """
    cells = partition.cells[i]
    local = np.asarray(v, dtype=float)[cells]
    if not np.all(local < 0):
        raise SignViolationError(f"v_{i + 1} must be negative on its own territory to define emissions")
    u = np.zeros(partition.grid.n_cells)
    u[cells] = -1.0 / local
    return u


def compute_w(i: int, values: Sequence[np.ndarray], emissions: Sequence[Optional[np.ndarray]],
              rho: float, partition: RegionPartition) -> float:
    """
    Constant term of the affine value of player ``i``::

        w_i = ( int_{Omega_i} log u_i + sum_j int_{Omega_j} v_i u_j ) / rho

    ``u_j`` stands in for ``-1/v_j``; both integrals use the midpoint rule.

    Raises:
        ValueError: If an equilibrium emission field is missing.
    """
    if len(emissions) != partition.n_players or any(u is None for u in emissions):
        raise ValueError("Emissions of every player must be provided to compute w")
    grid = partition.grid
    u_i = emissions[i]
    own = integrate(grid, np.log(u_i[partition.cells[i]]))
    total = np.sum(emissions, axis=0)
    spill = integrate(grid, values[i] * total)
    return (own + spill) / rho


def steady_state_pollution(primal: SparseOperator, emissions: Sequence[np.ndarray],
                           tol: float = DEFAULT_TOL, method: str = "direct") -> Tuple[np.ndarray, SolveReport]:
    """
    Solves ``A P + sum_j u_j = 0``.

    Raises:
        SolverError: If ``A`` annihilates constants (no decay, no open boundary),
            in which case no steady state exists, or the solve fails.
        SignViolationError: If the stock comes out negative.
    """
    n = primal.n
    source = np.sum(emissions, axis=0) if len(emissions) else np.zeros(n)
    row_sums = primal.matrix @ np.ones(n)
    if np.max(np.abs(row_sums)) <= 1e-12 * max(1.0, abs(primal.matrix).max()):
        raise SolverError("No steady state exists: the operator conserves mass "
                          "(c = 0 everywhere and no open boundary)")
    if not np.any(source):
        return np.zeros(n), SolveReport(0, 0.0, 0.0, method)
    P, report = LinearSolver(primal, method=method, tol=tol).solve(-source)
    if P.min() < -tol * np.abs(P).max():
        raise SignViolationError(f"Steady-state stock is negative (min {P.min():.3g})", report)
    return P, report


def value_function(w_i: float, v_i: np.ndarray, P: np.ndarray, grid: Grid) -> float:
    """``V_i(P) = w_i + sum_cells v_i P * cell_area``."""
    return float(w_i) + inner(grid, v_i, P)


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    """
    Per-player adjoint fields, emissions and value constants plus the steady stock.

    ``values`` and ``emissions`` are ``(J, N)`` arrays; row ``i`` is player ``i``.
    """
    game: DiscreteGame
    values: np.ndarray
    emissions: np.ndarray
    w: np.ndarray
    steady_state: np.ndarray
    reports: Dict[str, SolveReport] = field(default_factory=dict)

    @property
    def partition(self) -> RegionPartition:
        return self.game.partition

    @property
    def total_emissions(self) -> np.ndarray:
        return self.emissions.sum(axis=0)

    def value(self, i: int, P: np.ndarray) -> float:
        return value_function(self.w[i], self.values[i], P, self.game.grid)

    def steady_state_welfare(self) -> np.ndarray:
        return np.array([self.value(i, self.steady_state) for i in range(self.game.n_players)])

    def summary(self) -> pd.DataFrame:
        """Per-player table: ``w``, emission mean/max/argmax and mean steady stock."""
        rows = []
        pss_means = region_means(self.partition, self.steady_state)
        for i in range(self.game.n_players):
            stats = field_stats(self.partition, self.emissions[i])
            rows.append({
                "player": i + 1,
                "w": self.w[i],
                "mean_u": stats["mean"][i],
                "max_u": stats["max"][i],
                "argmax_x": stats["argmax_x"][i],
                "argmax_y": stats["argmax_y"][i],
                "mean_Pss": pss_means[i],
            })
        return pd.DataFrame(rows, columns=SUMMARY_HEADER)


def solve_equilibrium(game: DiscreteGame, tol: float = DEFAULT_TOL, workers: int = 1,
                      method: str = "direct") -> EquilibriumSolution:
    """
    Runs the full equilibrium pipeline for a discretised game.

    The J adjoint solves share one factorisation of ``A* - rho I``; with
    ``workers > 1`` they run on a thread pool and are merged by player index.

    Args:
        game: The discretised scenario.
        tol: Relative residual required from every linear solve.
        workers: Number of threads for the per-player solves.
        method: ``"direct"`` or ``"bicgstab"``.

    Returns:
        EquilibriumSolution: Fields, constants and solver reports.

    Raises:
        SolverError: If a solve fails or no steady state exists.
        SignViolationError: If an adjoint field or the stock has the wrong sign.
    """
    partition, coeff = game.partition, game.coefficients
    n_players = partition.n_players
    solver = LinearSolver(game.adjoint.shifted(-coeff.rho), method=method, tol=tol)
    loads = [indicator_load(partition, i, coeff.phi[i]) for i in range(n_players)]

    def run(i):
        return _player_value(solver, loads[i], game.grid, i)

    if workers > 1 and n_players > 1:
        with ThreadPoolExecutor(max_workers=min(workers, n_players)) as executor:
            results: List = list(executor.map(run, range(n_players)))
    else:
        results = [run(i) for i in range(n_players)]

    values = np.vstack([v for v, _ in results])
    reports = {f"v_{i + 1}": report for i, (_, report) in enumerate(results)}
    emissions = np.vstack([emissions_from_value(values[i], partition, i) for i in range(n_players)])
    w = np.array([compute_w(i, values, emissions, coeff.rho, partition) for i in range(n_players)])
    steady_state, reports["P_ss"] = steady_state_pollution(game.primal, emissions, tol=tol, method=method)

    if logger.isEnabledFor(logging.DEBUG):
        for name, report in reports.items():
            logger.debug(f"{name}: {report}")
    logger.info(f"Equilibrium of '{game.scenario.name}' solved: w = {np.round(w, 6).tolist()}, "
                f"mean u = {np.round(region_means(partition, emissions.sum(axis=0)), 6).tolist()}")
    return EquilibriumSolution(game=game, values=values, emissions=emissions, w=w,
                               steady_state=steady_state, reports=reports)
