"""
Time-domain oracle for the equilibrium.

Integrates ``dP/dt = A P + sum_j u_j`` by backward Euler with time-constant
controls and evaluates the discounted payoffs

    J_i = int_0^inf exp(-rho t) int_{Omega_i} (log u_i - phi_i P) dx dt

by the trapezoid rule up to ``T`` plus the tail obtained by freezing the
stock at its terminal value.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid

from ..config import DEFAULT_TOL
from ..errors import SolverError
from ..spatial.assembly import SparseOperator
from ..spatial.geometry import RegionPartition
from ..spatial.linsolve import BackwardEuler
from .equilibrium import EquilibriumSolution

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    A simulated stock history.

    Attributes:
        times: All step times ``t_0 .. t_N``.
        region_integrals: ``(N+1, J)`` integrals of P over each country at every step.
        snapshot_times: Times of the stored snapshots (every ``stride`` steps and the last one).
        snapshots: ``(K, n_cells)`` stored stock fields.
        partition: The countries the integrals refer to.
        drift: Relative change of P over the last step per unit time.
    """
    times: np.ndarray
    region_integrals: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    partition: RegionPartition
    drift: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def terminal(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def region_means(self) -> np.ndarray:
        return self.region_integrals / self.partition.areas

    def is_stationary(self, tol: float = STATIONARY_TOL) -> bool:
        return self.drift <= tol


def _source(controls, n: int) -> np.ndarray:
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 2:
        controls = controls.sum(axis=0)
    if controls.shape != (n,):
        raise ValueError(f"Controls do not match the grid: expected {n} cells, got shape {controls.shape}")
    return controls


def simulate(primal: SparseOperator, P0: np.ndarray, controls: Union[np.ndarray, Sequence[np.ndarray]],
             T: float, dt: float, partition: RegionPartition, stride: int = 100,
             stepper: Optional[BackwardEuler] = None, tol: float = DEFAULT_TOL) -> Trajectory:
    """
    Integrates the controlled dynamics from ``P0`` over ``[0, T]``.

    Args:
        primal: The discrete generator ``A``.
        P0: Initial stock.
        controls: Emission fields ``u_j`` (one row each) or their sum.
        T: Horizon.
        dt: Time step.
        partition: Countries for the per-step region integrals.
        stride: Store every ``stride``-th stock field.
        stepper: A ``BackwardEuler`` for the same operator and ``dt`` to reuse.

    Returns:
        Trajectory: Region integrals at every step and strided snapshots.

    Raises:
        ValueError: If ``dt <= 0`` or ``T < dt``.
        SolverError: If a step fails or the stock stops being finite.
    """
    if not dt > 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    if not T >= dt:
        raise ValueError(f"Horizon T={T} must be at least dt={dt}")
    n_steps = int(round(T / dt))
    source = _source(controls, primal.n)
    if stepper is None:
        stepper = BackwardEuler(primal, dt, tol=tol)
    elif stepper.dt != dt:
        raise ValueError(f"Stepper was built for dt={stepper.dt}, not {dt}")

    member = partition.membership() * partition.grid.cell_area
    P = np.array(P0, dtype=float)
    integrals = np.empty((n_steps + 1, partition.n_players))
    integrals[0] = member @ P
    snapshot_times, snapshots = [0.0], [P.copy()]
    previous = P
    for step in range(1, n_steps + 1):
        previous, P = P, stepper.step(P, source)
        if not np.all(np.isfinite(P)):
            raise SolverError(f"Stock became non-finite at t={step * dt:g}")
        integrals[step] = member @ P
        if step % stride == 0 or step == n_steps:
            snapshot_times.append(step * dt)
            snapshots.append(P.copy())

    scale = max(np.abs(P).max(), np.finfo(float).tiny)
    drift = float(np.abs(P - previous).max() / (dt * scale))
    logger.debug(f"Simulated {n_steps} steps to T={n_steps * dt:g}; terminal drift {drift:.3g}")
    return Trajectory(times=np.arange(n_steps + 1) * dt, region_integrals=integrals,
                      snapshot_times=np.array(snapshot_times), snapshots=np.array(snapshots),
                      partition=partition, drift=drift)


def discounted_payoff(i: int, trajectory: Trajectory, u_i: np.ndarray, rho: float, phi: float,
                      tail_state: Optional[np.ndarray] = None) -> float:
    """
    Discounted payoff of player ``i`` along a trajectory.

    Args:
        i: Player index.
        trajectory: Simulated stock history.
        u_i: Emission field of player ``i`` (positive on its territory).
        rho: Discount rate.
        phi: Damage coefficient of player ``i``.
        tail_state: Stock assumed after ``T``; the terminal stock by default.

    Returns:
        float: Trapezoid integral over ``[0, T]`` plus the analytic tail.

    Raises:
        ValueError: If ``u_i`` is not positive on the territory of player ``i``.
    """
    partition = trajectory.partition
    grid = partition.grid
    own = np.asarray(u_i, dtype=float)[partition.cells[i]]
    if not np.all(own > 0):
        raise ValueError(f"Emissions of player {i + 1} must be positive on its territory")
    benefit = float(np.log(own).sum() * grid.cell_area)
    damage = phi * trajectory.region_integrals[:, i]
    discount = np.exp(-rho * trajectory.times)
    running = float(trapezoid(discount * (benefit - damage), trajectory.times))

    if tail_state is None:
        tail_stock = trajectory.region_integrals[-1, i]
        if not trajectory.is_stationary():
            logger.warning(f"Trajectory is not stationary at T={trajectory.T:g} (drift "
                           f"{trajectory.drift:.3g}); the payoff tail of player {i + 1} is approximate")
    else:
        tail_stock = float(np.asarray(tail_state)[partition.cells[i]].sum() * grid.cell_area)
    tail = np.exp(-rho * trajectory.T) / rho * (benefit - phi * tail_stock)
    return running + float(tail)


def deviation_payoff(i: int, scale: float, solution: EquilibriumSolution, P0: np.ndarray,
                     T: float, dt: float, stepper: Optional[BackwardEuler] = None,
                     tol: float = DEFAULT_TOL) -> float:
    """
    Payoff of player ``i`` when it alone scales its equilibrium emissions by ``scale``.

    ``scale = 1`` gives the equilibrium payoff.

    Raises:
        ValueError: If ``scale`` is not positive.
    """
    if not scale > 0:
        raise ValueError(f"Deviation scale must be positive, got {scale}")
    game = solution.game
    controls = solution.emissions.copy()
    controls[i] = scale * controls[i]
    trajectory = simulate(game.primal, P0, controls, T, dt, game.partition,
                          stride=max(1, int(round(T / dt))), stepper=stepper, tol=tol)
    payoff = discounted_payoff(i, trajectory, controls[i], game.rho, game.phi[i])
    logger.debug(f"Player {i + 1} deviation s={scale:g}: J = {payoff:.10g}")
    return payoff


def initial_state(name: str, solution: EquilibriumSolution, seed: int = 0) -> np.ndarray:
    """
    Named initial stock for the oracle runs.

    ``zero`` is the clean domain, ``steady`` the equilibrium steady state and
    ``random`` a seeded stock drawn uniformly from ``[0, 2 max P_ss]`` per cell.

    Raises:
        ValueError: If ``name`` is not one of these.
    """
    n = solution.game.grid.n_cells
    if name == "zero":
        return np.zeros(n)
    if name == "steady":
        return solution.steady_state
    if name == "random":
        high = 2.0 * float(solution.steady_state.max())
        return np.random.default_rng(seed).uniform(0.0, high, n)
    raise ValueError(f"Unknown initial state '{name}'")
