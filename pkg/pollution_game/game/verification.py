"""
Verification suite run by ``verify``.

Generic checks apply to every scenario; the simulation-based ones are driven
by the scenario's ``simulation`` section. Scenario files add qualitative
checks in their ``checks`` list, each a mapping with a ``kind`` naming one of
the functions registered here. Players are 1-based in check parameters.
"""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import DEFAULT_TOL
from ..errors import ScenarioError
from ..io.scenario_loader import parse_scenario
from ..spatial.assembly import assemble_primal
from ..spatial.geometry import BoundaryCondition, BoundarySpec
from ..spatial.linsolve import BackwardEuler
from ..spatial.utils import adjoint_defect, random_pairs, reflect_field, region_means
from .equilibrium import EquilibriumSolution, solve_equilibrium, steady_state_pollution
from .model import DiscreteGame, build_game, downstream_neighbours, net_inflow
from .simulation import Trajectory, deviation_payoff, discounted_payoff, initial_state, simulate

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["check", "target", "passed", "value", "threshold", "detail"]

ADJOINT_PAIRS = 50
ADJOINT_TOL = 1e-13
STEADY_STATE_TOL = 1e-4
ORACLE_TOL = 0.01
MIRROR_TOL = 1e-9
MESH_TOL = 0.02
TRANSVERSALITY_FRACTION = 0.2
TRANSIENT_FRACTION = 0.1
DT_RATIO = 0.75


@dataclass
class CheckResult:
    check: str
    target: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


class VerificationContext:
    """Lazily simulated trajectories and payoffs shared by the checks of one run."""

    def __init__(self, solution: EquilibriumSolution, T: Optional[float] = None, dt: Optional[float] = None,
                 tol: float = DEFAULT_TOL, workers: int = 1):
        self.solution = solution
        self.game: DiscreteGame = solution.game
        self.scenario = self.game.scenario
        simulation = self.scenario.simulation
        self.T = float(T if T is not None else simulation.T)
        self.dt = float(dt if dt is not None else simulation.dt)
        self.tol = tol
        self.workers = workers
        self._stepper: Optional[BackwardEuler] = None
        self._trajectories: Dict[str, Trajectory] = {}
        self._payoffs: Dict[Tuple[int, float], float] = {}
        self._others: Dict[str, EquilibriumSolution] = {}

    @property
    def stepper(self) -> BackwardEuler:
        if self._stepper is None:
            self._stepper = BackwardEuler(self.game.primal, self.dt, tol=self.tol)
        return self._stepper

    def initial_state(self, name: str) -> np.ndarray:
        return initial_state(name, self.solution)

    def trajectory(self, name: str = "zero") -> Trajectory:
        if name not in self._trajectories:
            self._trajectories[name] = simulate(
                self.game.primal, self.initial_state(name), self.solution.emissions, self.T, self.dt,
                self.game.partition, stride=self.scenario.simulation.stride, stepper=self.stepper,
                tol=self.tol)
        return self._trajectories[name]

    def payoff(self, i: int, scale: float) -> float:
        """Payoff of player ``i`` from a clean start when it scales its emissions."""
        key = (i, float(scale))
        if key not in self._payoffs:
            if scale == 1.0:
                self._payoffs[key] = discounted_payoff(i, self.trajectory("zero"), self.solution.emissions[i],
                                                       self.game.rho, self.game.phi[i])
            else:
                self._payoffs[key] = deviation_payoff(i, scale, self.solution, self.initial_state("zero"),
                                                      self.T, self.dt, stepper=self.stepper, tol=self.tol)
        return self._payoffs[key]

    def other(self, name: str) -> EquilibriumSolution:
        """Equilibrium of another scenario at this run's cell size."""
        if name not in self._others:
            game = build_game(parse_scenario(name), h=self.game.grid.hx)
            self._others[name] = solve_equilibrium(game, tol=self.tol, workers=self.workers)
        return self._others[name]

    def players(self, params: dict, key: str = "players") -> List[int]:
        """0-based players named in ``params[key]`` (1-based), all players by default."""
        raw = params.get(key)
        if raw is None:
            return list(range(self.game.n_players))
        raw = raw if isinstance(raw, list) else [raw]
        for p in raw:
            if not isinstance(p, int) or not 1 <= p <= self.game.n_players:
                raise ScenarioError(f"check '{params.get('kind')}': player {p} out of range "
                                    f"1..{self.game.n_players}", source=self.scenario.source)
        return [p - 1 for p in raw]


CheckFunction = Callable[[VerificationContext, dict], List[CheckResult]]
CHECKS: Dict[str, CheckFunction] = {}
GENERIC_CHECKS = ("adjoint_identity", "sign", "steady_state_agreement", "value_oracle", "nash_deviation",
                  "unimodality", "transversality", "dt_convergence")


def register(kind: str):
    def decorator(func: CheckFunction) -> CheckFunction:
        CHECKS[kind] = func
        return func
    return decorator


def _quantity(solution: EquilibriumSolution, name: str) -> np.ndarray:
    if name == "mean_u":
        return region_means(solution.partition, solution.total_emissions)
    if name == "mean_Pss":
        return region_means(solution.partition, solution.steady_state)
    raise ValueError(f"Unknown quantity '{name}', expected 'mean_u' or 'mean_Pss'")


def _domain_mean(solution: EquilibriumSolution, name: str) -> float:
    if name == "mean_u":
        return float(solution.total_emissions.mean())
    if name == "mean_Pss":
        return float(solution.steady_state.mean())
    raise ValueError(f"Unknown quantity '{name}', expected 'mean_u' or 'mean_Pss'")


@register("adjoint_identity")
def check_adjoint_identity(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    count = int(params.get("pairs", ADJOINT_PAIRS))
    threshold = float(params.get("tol", ADJOINT_TOL))
    ps, vs = random_pairs(ctx.game.grid.n_cells, count, seed=int(params.get("seed", 0)))
    worst = max(adjoint_defect(ctx.game.primal, ctx.game.adjoint, p, v) for p, v in zip(ps, vs))
    return [CheckResult("adjoint_identity", f"{count} random pairs", worst <= threshold, worst, threshold,
                        f"adjoint by {ctx.game.adjoint.assembly}")]


@register("sign")
def check_sign(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    solution = ctx.solution
    results = []
    for i in range(ctx.game.n_players):
        v_max = float(solution.values[i].max())
        own = solution.emissions[i][solution.partition.cells[i]]
        outside = np.delete(solution.emissions[i], solution.partition.cells[i])
        results.append(CheckResult("sign", f"v_{i + 1}", v_max < 0, v_max, 0.0, "max v_i < 0"))
        passed = bool(own.min() > 0 and not np.any(outside))
        results.append(CheckResult("sign", f"u_{i + 1}", passed, float(own.min()), 0.0,
                                   "min u_i on own territory > 0, zero elsewhere"))
    p_min = float(solution.steady_state.min())
    results.append(CheckResult("sign", "P_ss", p_min >= 0, p_min, 0.0, "min P_ss >= 0"))
    return results


@register("steady_state_agreement")
def check_steady_state(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    threshold = float(params.get("tol", STEADY_STATE_TOL))
    P_ss = ctx.solution.steady_state
    terminal = ctx.trajectory("zero").terminal
    error = float(np.abs(terminal - P_ss).max() / np.abs(P_ss).max())
    return [CheckResult("steady_state_agreement", f"P(T={ctx.T:g})", error <= threshold, error, threshold,
                        "relative sup-norm distance to P_ss")]


@register("value_oracle")
def check_value_oracle(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    threshold = float(params.get("tol", ORACLE_TOL))
    states = params.get("states", ctx.scenario.simulation.oracle_states)
    results = []
    for state in states:
        trajectory = ctx.trajectory(state)
        P0 = ctx.initial_state(state)
        for i in range(ctx.game.n_players):
            simulated = discounted_payoff(i, trajectory, ctx.solution.emissions[i], ctx.game.rho, ctx.game.phi[i])
            value = ctx.solution.value(i, P0)
            error = abs(simulated - value) / abs(value)
            results.append(CheckResult("value_oracle", f"player {i + 1}, P0={state}", error <= threshold, error,
                                       threshold, f"J_sim={simulated:.8g}, V={value:.8g}"))
    return results


@register("nash_deviation")
def check_nash_deviation(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    simulation = ctx.scenario.simulation
    scales = params.get("scales", simulation.deviation_scales)
    if "players" not in params and simulation.deviation_players is not None:
        params = dict(params, players=list(simulation.deviation_players))
    results = []
    for i in ctx.players(params):
        equilibrium = ctx.payoff(i, 1.0)
        for s in scales:
            gain = ctx.payoff(i, float(s)) - equilibrium
            results.append(CheckResult("nash_deviation", f"player {i + 1}, s={s:g}", gain < 0, gain, 0.0,
                                       "J_i(s*u_i) - J_i(u_i)"))
    return results


@register("unimodality")
def check_unimodality(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    simulation = ctx.scenario.simulation
    scales = sorted(set(float(s) for s in params.get("scales", simulation.unimodality_scales)) | {1.0})
    if len(scales) < 2:
        return []
    if "players" not in params and simulation.deviation_players is not None:
        params = dict(params, players=list(simulation.deviation_players))
    results = []
    for i in ctx.players(params):
        payoffs = [ctx.payoff(i, s) for s in scales]
        best = scales[int(np.argmax(payoffs))]
        others = [p for s, p in zip(scales, payoffs) if s != 1.0]
        margin = ctx.payoff(i, 1.0) - max(others)
        results.append(CheckResult("unimodality", f"player {i + 1}", best == 1.0, margin, 0.0,
                                   f"argmax s = {best:g} over {scales}"))
    return results


@register("transversality")
def check_transversality(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    if not params.get("enabled", ctx.scenario.simulation.transversality):
        return []
    fraction = float(params.get("fraction", TRANSVERSALITY_FRACTION))
    trajectory = ctx.trajectory("zero")
    times = trajectory.snapshot_times
    after = times >= TRANSIENT_FRACTION * ctx.T
    results = []
    for i in range(ctx.game.n_players):
        discounted = np.array([np.exp(-ctx.game.rho * t) * abs(ctx.solution.value(i, P))
                               for t, P in zip(times, trajectory.snapshots)])
        decreasing = bool(np.all(np.diff(discounted[after]) < 0))
        ratio = discounted[-1] / abs(ctx.solution.value(i, trajectory.snapshots[0]))
        results.append(CheckResult("transversality", f"player {i + 1}", decreasing and ratio < fraction, ratio,
                                   fraction, f"decreasing after t={TRANSIENT_FRACTION * ctx.T:g}: {decreasing}"))
    return results


@register("dt_convergence")
def check_dt_convergence(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    """Payoff error against ``V_i(0)`` under repeated halving of the time step."""
    if not params.get("enabled", ctx.scenario.simulation.dt_convergence):
        return []
    levels = int(params.get("levels", 2))
    threshold = float(params.get("ratio", DT_RATIO))
    game, solution = ctx.game, ctx.solution
    steps = [ctx.dt / 2 ** level for level in range(levels + 1)]
    errors = np.empty((len(steps), game.n_players))
    for row, dt in enumerate(steps):
        if row == 0:
            trajectory = ctx.trajectory("zero")
        else:
            trajectory = simulate(game.primal, ctx.initial_state("zero"), solution.emissions, ctx.T, dt,
                                  game.partition, stride=max(1, int(round(ctx.T / dt))), tol=ctx.tol)
        for i in range(game.n_players):
            value = solution.value(i, ctx.initial_state("zero"))
            simulated = discounted_payoff(i, trajectory, solution.emissions[i], game.rho, game.phi[i])
            errors[row, i] = abs(simulated - value) / abs(value)
    results = []
    for i in range(game.n_players):
        ratios = errors[1:, i] / np.maximum(errors[:-1, i], np.finfo(float).tiny)
        passed = bool(np.all(ratios < 1.0)) and ratios[-1] <= threshold
        results.append(CheckResult("dt_convergence", f"player {i + 1}, dt={steps[0]:g}/2^{levels}", passed,
                                   float(ratios[-1]), threshold,
                                   f"relative payoff errors: {[f'{e:.3g}' for e in errors[:, i]]}"))
    return results


@register("mirror")
def check_mirror(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    players = ctx.players(params)
    a, b = (players[0], players[1]) if len(players) > 1 else (players[0], players[0])
    axis, about = params["axis"], float(params["about"])
    threshold = float(params.get("tol", MIRROR_TOL))
    name = params.get("field", "u")
    fields = ctx.solution.emissions if name == "u" else ctx.solution.values
    reflected = reflect_field(ctx.game.grid, fields[b], axis, about)
    error = float(np.abs(fields[a] - reflected).max())
    target = f"{name}_{a + 1} vs reflect_{axis}({name}_{b + 1}) about {about:g}"
    return [CheckResult("mirror", target, error <= threshold, error, threshold)]


@register("decreasing_from_line")
def check_decreasing_from_line(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    grid = ctx.game.grid
    axis, line = params.get("axis", "x"), float(params["line"])
    results = []
    for i in ctx.players(params):
        cells = ctx.solution.partition.cells[i]
        u = ctx.solution.emissions[i]
        along, across = (grid.col, grid.row) if axis == "x" else (grid.row, grid.col)
        coordinate = grid.centers[:, 0 if axis == "x" else 1]
        worst = -np.inf
        for k in np.unique(across[cells]):
            lane = cells[across[cells] == k]
            lane = lane[np.argsort(np.abs(coordinate[lane] - line), kind="stable")]
            if lane.size > 1:
                worst = max(worst, float(np.diff(u[lane]).max()))
        results.append(CheckResult("decreasing_from_line", f"u_{i + 1} from {axis}={line:g}", worst < 0, worst,
                                   0.0, "largest step along a grid line (must be negative)"))
    return results


@register("compare_scenario")
def check_compare_scenario(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    other_name, quantity = params["other"], params["quantity"]
    relation = params.get("relation", "greater")
    mine = _domain_mean(ctx.solution, quantity)
    theirs = _domain_mean(ctx.other(other_name), quantity)
    difference = mine - theirs
    passed = difference > 0 if relation == "greater" else difference < 0
    return [CheckResult("compare_scenario", f"{quantity} {relation} than {other_name}", passed, difference, 0.0,
                        f"{mine:.8g} vs {theirs:.8g}")]


@register("argmax_on_segment")
def check_argmax_on_segment(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    grid = ctx.game.grid
    segment = params["segment"]
    on_segment = grid.cells_on_segment(segment)
    results = []
    for i in ctx.players(params):
        u = ctx.solution.emissions[i]
        cells = np.intersect1d(on_segment, ctx.solution.partition.cells[i])
        region_max = float(u[ctx.solution.partition.cells[i]].max())
        segment_max = float(u[cells].max()) if cells.size else -np.inf
        gap = segment_max - region_max
        results.append(CheckResult("argmax_on_segment", f"u_{i + 1} on {segment}", gap >= -1e-12 * region_max,
                                   gap, 0.0, "segment max minus region max"))
    return results


@register("region_order")
def check_region_order(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    quantity = params["quantity"]
    values = _quantity(ctx.solution, quantity)
    groups = [g if isinstance(g, list) else [g] for g in params["order"]]
    sign = 1.0 if params.get("direction", "decreasing") == "decreasing" else -1.0
    margins = []
    for upper, lower in zip(groups, groups[1:]):
        hi = sign * values[[p - 1 for p in upper]]
        lo = sign * values[[p - 1 for p in lower]]
        margins.append(float(hi.min() - lo.max()))
    margin = min(margins)
    shown = ", ".join(f"{p}:{values[p - 1]:.6g}" for group in groups for p in group)
    return [CheckResult("region_order", f"{quantity} {params.get('direction', 'decreasing')} {params['order']}",
                        margin > 0, margin, 0.0, shown)]


@register("interface_decreasing")
def check_interface_decreasing(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    partition = ctx.solution.partition
    grid = ctx.game.grid
    i, j, source = (ctx.players({"kind": params["kind"], key: params[key]}, key)[0]
                    for key in ("player", "neighbour", "from_player"))
    faces = partition.interface(i, j)
    if faces is None:
        return [CheckResult("interface_decreasing", f"u_{i + 1} on border {i + 1}|{j + 1}", False, np.nan, 0.0,
                            "countries do not share a border")]
    side = 0 if i < j else 1
    cells = np.unique(faces.cells[:, side])
    reference = grid.centers[partition.cells[source]]
    distance = np.array([np.min(np.hypot(*(reference - grid.centers[c]).T)) for c in cells])
    ordered = cells[np.argsort(distance, kind="stable")]
    worst = float(np.diff(ctx.solution.emissions[i][ordered]).max())
    return [CheckResult("interface_decreasing", f"u_{i + 1} on border {i + 1}|{j + 1} from {source + 1}",
                        worst < 0, worst, 0.0, "largest step away from the source country")]


@register("downstream_argmax")
def check_downstream_argmax(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    partition = ctx.solution.partition
    grid = ctx.game.grid
    fraction = float(params.get("fraction", 0.25))
    results = []
    for i, j in enumerate(downstream_neighbours(ctx.game)):
        if j is None:
            continue
        faces = partition.interface(i, j)
        u = ctx.solution.emissions[i]
        cells = partition.cells[i]
        top = cells[np.argmax(u[cells])]
        axis = 0 if faces.orientation[0] == "x" else 1
        h = grid.hx if axis == 0 else grid.hy
        extent = np.ptp(grid.centers[cells, axis]) + h
        distance = float(np.min(np.abs(faces.centers[:, axis] - grid.centers[top, axis])))
        limit = fraction * extent
        results.append(CheckResult("downstream_argmax", f"u_{i + 1} towards {j + 1}", distance <= limit, distance,
                                   limit, "distance of the emission peak to the downstream border"))
    return results


@register("downstream_stock")
def check_downstream_stock(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    inflow = net_inflow(ctx.game)
    downstream, upstream = int(np.argmax(inflow)), int(np.argmin(inflow))
    means = region_means(ctx.solution.partition, ctx.solution.steady_state)
    difference = float(means[downstream] - means[upstream])
    return [CheckResult("downstream_stock", f"P_ss of {downstream + 1} (downstream) vs {upstream + 1} (upstream)",
                        difference > 0, difference, 0.0, f"{means[downstream]:.6g} vs {means[upstream]:.6g}")]


@register("open_boundary_lowers_stock")
def check_open_boundary(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    segment = params["segment"]
    scenario = ctx.scenario
    if scenario.adjoint_boundary is not None:
        raise ScenarioError(f"check 'open_boundary_lowers_stock' needs primal boundary data, "
                            f"scenario '{scenario.name}' gives adjoint_boundary", source=scenario.source,
                            field="checks")
    game = ctx.game
    sealed = BoundarySpec(segments=((segment, BoundaryCondition(alpha=0.0)),) + scenario.boundary.segments,
                          default=scenario.boundary.default)
    primal = assemble_primal(game.grid, game.coefficients, game.velocities, sealed)
    P_sealed, _ = steady_state_pollution(primal, ctx.solution.emissions, tol=ctx.tol)
    cells = game.grid.cells_on_segment(segment)
    P_open = ctx.solution.steady_state
    difference = float(np.mean(P_sealed[cells] - P_open[cells]))
    return [CheckResult("open_boundary_lowers_stock", f"P_ss on {segment}", difference > 0, difference, 0.0,
                        f"sealed {P_sealed[cells].mean():.6g} vs open {P_open[cells].mean():.6g}")]


@register("mesh_convergence")
def check_mesh_convergence(ctx: VerificationContext, params: dict) -> List[CheckResult]:
    spacings = [float(h) for h in params.get("h", [0.05, 0.025, 0.0125])]
    threshold = float(params.get("tol", MESH_TOL))
    means = []
    for h in spacings:
        solution = solve_equilibrium(build_game(ctx.scenario, h=h), tol=ctx.tol, workers=ctx.workers)
        means.append(region_means(solution.partition, solution.total_emissions))
    changes = [float(np.max(np.abs(b - a) / np.abs(a))) for a, b in zip(means, means[1:])]
    passed = changes[0] < threshold and all(b < a for a, b in zip(changes, changes[1:]))
    return [CheckResult("mesh_convergence", f"h={spacings}", passed, changes[0], threshold,
                        f"relative changes of region-mean u: {[f'{c:.3g}' for c in changes]}")]


def run_checks(ctx: VerificationContext) -> pd.DataFrame:
    """Runs the generic checks and those declared by the scenario."""
    requested = [{"kind": kind} for kind in GENERIC_CHECKS] + [dict(c) for c in ctx.scenario.checks]
    rows: List[CheckResult] = []
    for params in requested:
        kind = params["kind"]
        if kind not in CHECKS:
            raise ScenarioError(f"unknown check kind '{kind}'; known: {sorted(CHECKS)}",
                                source=ctx.scenario.source, field="checks")
        try:
            results = CHECKS[kind](ctx, params)
        except KeyError as e:
            raise ScenarioError(f"check '{kind}' is missing parameter {e}", source=ctx.scenario.source,
                                field="checks") from e
        for result in results:
            if not result.passed:
                logger.warning(f"Check failed: {result.check} [{result.target}] value={result.value:.6g} "
                               f"threshold={result.threshold:.6g} {result.detail}")
        rows.extend(results)
    report = pd.DataFrame([asdict(r) for r in rows], columns=REPORT_COLUMNS)
    logger.info(f"Verification of '{ctx.scenario.name}': {int(report['passed'].sum())}/{len(report)} checks passed")
    return report


def run_verification(solution: EquilibriumSolution, T: Optional[float] = None, dt: Optional[float] = None,
                     tol: float = DEFAULT_TOL, workers: int = 1) -> pd.DataFrame:
    return run_checks(VerificationContext(solution, T=T, dt=dt, tol=tol, workers=workers))


def write_report(report: pd.DataFrame, out_dir: Path) -> Tuple[Path, Path]:
    """Writes the report as ``verification.csv`` and ``verification.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "verification.csv", out_dir / "verification.json"
    report.to_csv(csv_path, index=False)
    report.to_json(json_path, orient="records", indent=2)
    return csv_path, json_path
