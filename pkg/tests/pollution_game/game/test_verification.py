# tests/pollution_game/game/test_verification.py

import dataclasses
import json
import shutil
import tempfile
import unittest
from pathlib import Path

from pollution_game.errors import ScenarioError
from pollution_game.game.equilibrium import solve_equilibrium
from pollution_game.game.model import build_game
from pollution_game.game.verification import (CHECKS, GENERIC_CHECKS, REPORT_COLUMNS, VerificationContext,
                                              run_checks, run_verification, write_report)
from pollution_game.io.scenario_loader import parse_scenario
from pollution_game.spatial.geometry import BoundaryCondition, BoundarySpec


def _context(name, checks=None, T=200.0, dt=0.05, **resolution):
    scenario = parse_scenario(name)
    if checks is not None:
        scenario = dataclasses.replace(scenario, checks=tuple(checks))
    solution = solve_equilibrium(build_game(scenario, **resolution))
    return VerificationContext(solution, T=T, dt=dt)


class TestGenericChecks(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ctx = _context("single_region", nx=4, ny=4)
        cls.report = run_checks(cls.ctx)

    def test_all_generic_checks_pass(self):
        """Test that the single-country game passes every generic check."""
        self.assertEqual(list(self.report.columns), REPORT_COLUMNS)
        failed = self.report[~self.report["passed"]]
        self.assertTrue(failed.empty, failed.to_string())
        self.assertEqual(set(self.report["check"]), set(GENERIC_CHECKS))

    def test_oracle_rows_per_state(self):
        """Test one value-oracle row per initial state."""
        oracle = self.report[self.report["check"] == "value_oracle"]
        self.assertEqual(list(oracle["target"]),
                         ["player 1, P0=zero", "player 1, P0=steady", "player 1, P0=random"])
        self.assertTrue((oracle["value"] < 0.01).all())

    def test_dt_convergence_is_first_order(self):
        """Test that halving dt roughly halves the payoff error."""
        rows = self.report[self.report["check"] == "dt_convergence"]
        self.assertEqual(len(rows), 1)
        ratio = rows["value"].iloc[0]
        self.assertTrue(rows["passed"].iloc[0], rows["detail"].iloc[0])
        self.assertGreater(ratio, 0.3)
        self.assertLess(ratio, 0.75)

    def test_dt_convergence_can_be_disabled(self):
        """Test that the scenario flag and the check parameter switch the check off."""
        self.assertEqual(CHECKS["dt_convergence"](self.ctx, {"kind": "dt_convergence", "enabled": False}), [])

    def test_deviation_rows(self):
        """Test one row per deviation scale and strictly negative gains."""
        deviations = self.report[self.report["check"] == "nash_deviation"]
        self.assertEqual(len(deviations), 4)
        self.assertTrue((deviations["value"] < 0).all())

    def test_payoffs_are_cached(self):
        """Test that payoffs are simulated once per player and scale."""
        before = self.ctx.payoff(0, 2.0)
        self.assertIn((0, 2.0), self.ctx._payoffs)
        self.assertEqual(self.ctx.payoff(0, 2.0), before)

    def test_write_report(self):
        """Test the CSV and JSON report files."""
        out = Path(tempfile.mkdtemp())
        try:
            csv_path, json_path = write_report(self.report, out)
            self.assertTrue(csv_path.is_file())
            with open(json_path, encoding="utf-8") as fh:
                rows = json.load(fh)
            self.assertEqual(len(rows), len(self.report))
            self.assertEqual(set(rows[0]), set(REPORT_COLUMNS))
        finally:
            shutil.rmtree(out)


class TestScenarioChecks(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ctx = _context("example1", h=0.125)

    def test_mirror(self):
        """Test the mirror check between the two countries and within one."""
        across = CHECKS["mirror"](self.ctx, {"kind": "mirror", "players": [1, 2], "axis": "x", "about": 0.5})
        within = CHECKS["mirror"](self.ctx, {"kind": "mirror", "players": [1], "axis": "y", "about": 0.5})
        self.assertTrue(across[0].passed)
        self.assertTrue(within[0].passed)

    def test_decreasing_from_line(self):
        """Test monotone emissions away from the shared border."""
        results = CHECKS["decreasing_from_line"](self.ctx, {"kind": "decreasing_from_line", "axis": "x",
                                                             "line": 0.5})
        self.assertEqual(len(results), 2)
        self.assertTrue(all(r.passed for r in results))

    def test_compare_scenario(self):
        """Test that the open-boundary variant emits more than the closed one."""
        ctx = _context("example2", h=0.125)
        results = CHECKS["compare_scenario"](ctx, {"kind": "compare_scenario", "other": "example1",
                                                   "quantity": "mean_u", "relation": "greater"})
        self.assertTrue(results[0].passed)
        self.assertIn("example1", ctx._others)

    def test_region_order_detects_violation(self):
        """Test that an ordering contradicted by the solution fails."""
        ctx = _context("example3", T=20.0, dt=0.1, h=0.125)
        results = CHECKS["region_order"](ctx, {"kind": "region_order", "quantity": "mean_u",
                                               "order": [1, 2]})
        self.assertFalse(results[0].passed)

    def test_mesh_convergence(self):
        """Test that region-mean emissions converge under refinement."""
        results = CHECKS["mesh_convergence"](self.ctx, {"kind": "mesh_convergence", "h": [0.25, 0.125, 0.0625]})
        self.assertTrue(results[0].passed, results[0].detail)

    def test_unknown_kind_raises(self):
        """Test that an unknown check kind is an input error."""
        ctx = _context("example1", checks=[{"kind": "no_such_check"}], T=20.0, dt=0.1, h=0.25)
        with self.assertRaisesRegex(ScenarioError, "unknown check kind"):
            run_checks(ctx)

    def test_missing_parameter_raises(self):
        """Test that a check without its parameters is an input error."""
        ctx = _context("example1", checks=[{"kind": "mirror", "axis": "x"}], T=20.0, dt=0.1, h=0.25)
        with self.assertRaisesRegex(ScenarioError, "missing parameter"):
            run_checks(ctx)

    def test_player_out_of_range_raises(self):
        """Test player validation in check parameters."""
        with self.assertRaises(ScenarioError):
            self.ctx.players({"kind": "mirror", "players": [3]})


class TestConvectiveChecks(unittest.TestCase):

    def test_downstream_rows(self):
        """Test that the downstream checks cover every country with a downstream neighbour."""
        ctx = _context("example6", h=0.125)
        argmax = CHECKS["downstream_argmax"](ctx, {"kind": "downstream_argmax"})
        self.assertEqual([r.target for r in argmax],
                         ["u_2 towards 1", "u_3 towards 2", "u_4 towards 3", "u_5 towards 4", "u_6 towards 5"])
        stock = CHECKS["downstream_stock"](ctx, {"kind": "downstream_stock"})
        self.assertIn("P_ss of 1 (downstream) vs 6 (upstream)", stock[0].target)

    def test_open_boundary_requires_primal_data(self):
        """Test that sealing a segment is refused when only adjoint boundary data is given."""
        ctx = _context("example6", T=20.0, dt=0.1, h=0.25)
        ctx.scenario = dataclasses.replace(
            ctx.scenario, adjoint_boundary=BoundarySpec(default=BoundaryCondition(alpha=0.0, convective=True)))
        with self.assertRaisesRegex(ScenarioError, "primal boundary data"):
            CHECKS["open_boundary_lowers_stock"](ctx, {"kind": "open_boundary_lowers_stock", "segment": "x=0"})


class TestBundledCheckSets(unittest.TestCase):
    """Runs the checks declared by the channel scenarios at a reduced resolution."""

    def _declared_rows(self, ctx):
        rows = []
        for params in ctx.scenario.checks:
            rows.extend(CHECKS[params["kind"]](ctx, dict(params)))
        return rows

    def test_open_channel_checks_pass(self):
        """Test every ordering declared for the channel that is open at country 1."""
        ctx = _context("example5", T=20.0, dt=0.1, h=0.05)
        rows = self._declared_rows(ctx)
        self.assertEqual(len(rows), 4)
        for row in rows:
            with self.subTest(target=row.target):
                self.assertTrue(row.passed, f"{row.check}: {row.value} {row.detail}")

    def test_open_channel_chain_order_does_not_hold(self):
        """Test that the strict chain orderings over all six countries are not satisfied."""
        ctx = _context("example5", T=20.0, dt=0.1, h=0.05)
        emissions = CHECKS["region_order"](ctx, {"kind": "region_order", "quantity": "mean_u",
                                                 "order": [1, 2, 3, 4, 5, 6], "direction": "decreasing"})
        stock = CHECKS["region_order"](ctx, {"kind": "region_order", "quantity": "mean_Pss",
                                             "order": [1, 2, 3, 4, 5, 6], "direction": "increasing"})
        self.assertFalse(emissions[0].passed)
        self.assertFalse(stock[0].passed)

    def test_wind_field_checks_pass(self):
        """Test every downstream and open-boundary row declared for the wind-driven chain."""
        ctx = _context("example6", T=20.0, dt=0.1, h=0.05)
        rows = self._declared_rows(ctx)
        self.assertEqual(len(rows), 7)
        for row in rows:
            with self.subTest(target=row.target):
                self.assertTrue(row.passed, f"{row.check}: {row.value} {row.detail}")
        opened = [r for r in rows if r.check == "open_boundary_lowers_stock"]
        self.assertEqual(len(opened), 1)
        self.assertGreater(opened[0].value, 0.0)


class TestRunVerification(unittest.TestCase):

    def test_report_without_simulation_checks(self):
        """Test a run where the scenario disables the oracle, deviation and transversality checks."""
        solution = solve_equilibrium(build_game(parse_scenario("example3"), h=0.25))
        report = run_verification(solution, T=20.0, dt=0.1)
        self.assertIn("adjoint_identity", set(report["check"]))
        self.assertNotIn("value_oracle", set(report["check"]))
        self.assertNotIn("nash_deviation", set(report["check"]))
        adjoint = report[report["check"] == "adjoint_identity"].iloc[0]
        self.assertTrue(adjoint["passed"])


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
