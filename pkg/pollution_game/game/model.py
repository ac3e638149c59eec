"""Discrete game assembled from a scenario: grid, countries, coefficients and operators."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..io.scenario_loader import Scenario
from ..spatial.assembly import (Coefficients, SparseOperator, assemble_adjoint, assemble_adjoint_direct,
                                assemble_primal)
from ..spatial.geometry import FaceVelocities, Grid, RegionPartition, partition_regions, sample_convection

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiscreteGame:
    """
    Everything the equilibrium and the simulation need, built once per scenario.

    ``primal`` generates the dynamics ``dP/dt = primal P + sum_j u_j``; ``adjoint``
    is its discrete adjoint. With ``adjoint_boundary`` in the scenario the adjoint
    is assembled first and ``primal`` is its transpose.
    """
    scenario: Scenario
    grid: Grid
    partition: RegionPartition
    coefficients: Coefficients
    velocities: FaceVelocities
    primal: SparseOperator
    adjoint: SparseOperator

    @property
    def n_players(self) -> int:
        return self.partition.n_players

    @property
    def rho(self) -> float:
        return self.coefficients.rho

    @property
    def phi(self) -> Tuple[float, ...]:
        return self.coefficients.phi


def build_game(scenario: Scenario, nx: Optional[int] = None, ny: Optional[int] = None,
               h: Optional[float] = None) -> DiscreteGame:
    """
    Discretises a scenario.

    Args:
        scenario: The validated scenario.
        nx, ny: Optional bounding-box cell counts overriding the scenario resolution.
        h: Optional cell size overriding the scenario resolution.

    Returns:
        DiscreteGame: Grid, partition, coefficients and both operators.
    """
    scenario = scenario.with_resolution(nx=nx, ny=ny, h=h)
    grid = scenario.build_grid()
    partition = partition_regions(grid, scenario.regions)
    coefficients = Coefficients.build(partition, k=scenario.k, c=scenario.c, rho=scenario.rho,
                                      phi=scenario.phi)
    velocities = sample_convection(scenario.convection, grid)
    if scenario.adjoint_boundary is not None:
        adjoint = assemble_adjoint_direct(grid, coefficients, velocities, scenario.adjoint_boundary)
        primal = adjoint.transpose()
    else:
        primal = assemble_primal(grid, coefficients, velocities, scenario.boundary)
        adjoint = assemble_adjoint(primal)
    logger.info(f"Game '{scenario.name}' discretised: {grid.nx}x{grid.ny} box, {grid.n_cells} cells, "
                f"{partition.n_players} players, adjoint by {adjoint.assembly}")
    return DiscreteGame(scenario=scenario, grid=grid, partition=partition, coefficients=coefficients,
                        velocities=velocities, primal=primal, adjoint=adjoint)


def interface_drift(game: DiscreteGame) -> Dict[Tuple[int, int], float]:
    """
    Net advective transport across each shared border.

    The value for ``(i, j)`` with ``i < j`` is the integral of the drift ``-b``
    across the border in the direction from country ``i`` to ``j``; positive
    means pollution is carried from ``i`` into ``j``.
    """
    grid, velocities = game.grid, game.velocities
    drift = {}
    for (i, j), faces in game.partition.interfaces.items():
        a, b = faces.cells[:, 0], faces.cells[:, 1]
        total = 0.0
        vertical = faces.orientation == "x"
        if vertical.any():
            av, bv = a[vertical], b[vertical]
            direction = np.sign(grid.col[bv] - grid.col[av])
            face_col = np.maximum(grid.col[av], grid.col[bv])
            total += float(np.sum(-velocities.ux[grid.row[av], face_col] * direction * faces.lengths[vertical]))
        if (~vertical).any():
            ah, bh = a[~vertical], b[~vertical]
            direction = np.sign(grid.row[bh] - grid.row[ah])
            face_row = np.maximum(grid.row[ah], grid.row[bh])
            total += float(np.sum(-velocities.uy[face_row, grid.col[ah]] * direction * faces.lengths[~vertical]))
        drift[(i, j)] = total
    return drift


def downstream_neighbours(game: DiscreteGame) -> List[Optional[int]]:
    """For each country, the neighbour receiving the largest net drift from it, or None."""
    drift = interface_drift(game)
    outflow: List[Dict[int, float]] = [dict() for _ in range(game.n_players)]
    for (i, j), value in drift.items():
        outflow[i][j] = value
        outflow[j][i] = -value
    result = []
    for flows in outflow:
        positive = {j: v for j, v in flows.items() if v > 0}
        result.append(max(positive, key=positive.get) if positive else None)
    return result


def net_inflow(game: DiscreteGame) -> np.ndarray:
    """Drift entering each country through its borders minus drift leaving it."""
    inflow = np.zeros(game.n_players)
    for (i, j), value in interface_drift(game).items():
        inflow[j] += value
        inflow[i] -= value
    return inflow
