# tests/pollution_game/test_cli.py

import dataclasses
import json
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pandas as pd

from pollution_game.cli import build_parser, main, run
from pollution_game.config import Settings
from pollution_game.errors import EXIT_INPUT_ERROR, EXIT_OK, EXIT_SOLVER_FAILURE, SolverError
from pollution_game.io.scenario_loader import parse_scenario


class TestRun(unittest.TestCase):

    def setUp(self):
        self.out = Path(tempfile.mkdtemp())
        self.scenario = parse_scenario("single_region")

    def tearDown(self):
        shutil.rmtree(self.out)

    def test_solve_writes_artifacts(self):
        """Test the files written by solve."""
        code = run("solve", self.scenario, self.out, nx=4, ny=4)
        self.assertEqual(code, EXIT_OK)
        for name in ("v_1.csv", "u_1.csv", "P_ss.csv", "summary.csv", "welfare.csv", "solve_report.json"):
            self.assertTrue((self.out / name).is_file(), name)
        welfare = pd.read_csv(self.out / "welfare.csv")
        self.assertEqual(list(welfare.columns), ["player", "V_0", "V_Pss"])
        self.assertAlmostEqual(welfare.loc[0, "V_Pss"] - welfare.loc[0, "V_0"], -2.0, places=8)
        with open(self.out / "solve_report.json", encoding="utf-8") as fh:
            self.assertEqual(set(json.load(fh)), {"v_1", "P_ss"})

    def test_vtk_format(self):
        """Test the field format option."""
        self.assertEqual(run("solve", self.scenario, self.out, nx=4, ny=4, fmt="vtk"), EXIT_OK)
        self.assertTrue((self.out / "u_1.vtk").is_file())
        self.assertFalse((self.out / "u_1.csv").exists())

    def test_simulate_writes_payoffs(self):
        """Test the oracle table written by simulate."""
        code = run("simulate", self.scenario, self.out, nx=4, ny=4, T=200.0, dt=0.05)
        self.assertEqual(code, EXIT_OK)
        payoffs = pd.read_csv(self.out / "payoffs.csv")
        self.assertEqual(list(payoffs["P0"]), ["zero", "steady", "random"])
        self.assertTrue((payoffs["relative_error"] < 0.01).all())
        self.assertTrue((self.out / "trajectory.csv").is_file())
        self.assertTrue((self.out / "P_T.csv").is_file())

    def test_verify_passes(self):
        """Test that verify succeeds on the single-country game."""
        code = run("verify", self.scenario, self.out, nx=4, ny=4, T=200.0, dt=0.05)
        self.assertEqual(code, EXIT_OK)
        report = pd.read_csv(self.out / "verification.csv")
        self.assertTrue(report["passed"].all())

    def test_unknown_scenario_is_input_error(self):
        """Test the exit code and error file of a missing scenario."""
        code = run("solve", "no_such_scenario", self.out)
        self.assertEqual(code, EXIT_INPUT_ERROR)
        with open(self.out / "error.json", encoding="utf-8") as fh:
            payload = json.load(fh)
        self.assertEqual(payload["error"], "ScenarioError")
        self.assertEqual(payload["exit_code"], EXIT_INPUT_ERROR)

    def test_solver_failure_exit_code(self):
        """Test that a failed solve maps to exit code 1."""
        with patch("pollution_game.cli.solve_equilibrium", side_effect=SolverError("diverged")):
            code = run("solve", self.scenario, self.out, nx=4, ny=4)
        self.assertEqual(code, EXIT_SOLVER_FAILURE)
        with open(self.out / "error.json", encoding="utf-8") as fh:
            self.assertEqual(json.load(fh)["message"], "diverged")

    def test_solve_is_deterministic(self):
        """Test that two solves of the same scenario write byte-identical CSV files."""
        scenario = parse_scenario("example1")
        first, second = self.out / "first", self.out / "second"
        self.assertEqual(run("solve", scenario, first, nx=8, ny=8, workers=2), EXIT_OK)
        self.assertEqual(run("solve", scenario, second, nx=8, ny=8, workers=2), EXIT_OK)
        names = sorted(p.name for p in first.glob("*.csv"))
        self.assertEqual(names, sorted(p.name for p in second.glob("*.csv")))
        self.assertIn("P_ss.csv", names)
        for name in names:
            with self.subTest(name=name):
                self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_write_failure_leaves_error_file(self):
        """Test that an output error maps to exit code 1 and is reported in error.json."""
        with patch("pollution_game.cli._write_solution", side_effect=OSError("disk full")):
            code = run("solve", self.scenario, self.out, nx=4, ny=4)
        self.assertEqual(code, EXIT_SOLVER_FAILURE)
        with open(self.out / "error.json", encoding="utf-8") as fh:
            payload = json.load(fh)
        self.assertEqual(payload["error"], "OSError")
        self.assertEqual(payload["message"], "disk full")
        self.assertEqual(payload["exit_code"], EXIT_SOLVER_FAILURE)

    def test_scenario_format_used_by_default(self):
        """Test that the scenario's output format wins over the settings default."""
        scenario = dataclasses.replace(self.scenario, output_format="vtk")
        run("solve", scenario, self.out, nx=4, ny=4, settings=Settings(field_format="csv"))
        self.assertTrue((self.out / "P_ss.vtk").is_file())


class TestMain(unittest.TestCase):

    def test_parser_defaults_from_settings(self):
        """Test that settings seed the option defaults."""
        args = build_parser(Settings(tol=1e-8, workers=3)).parse_args(["solve", "--scenario", "example1"])
        self.assertEqual(args.tol, 1e-8)
        self.assertEqual(args.workers, 3)
        self.assertIsNone(args.format)

    def test_nx_without_ny(self):
        """Test that a single cell count is rejected."""
        with patch("pollution_game.cli.load_settings", return_value=Settings()):
            self.assertEqual(main(["solve", "--scenario", "example1", "--nx", "8"]), EXIT_INPUT_ERROR)

    def test_main_runs_mode(self):
        """Test that main forwards the parsed options to run."""
        with patch("pollution_game.cli.load_settings", return_value=Settings()), \
                patch("pollution_game.cli.run", return_value=EXIT_OK) as mock_run:
            code = main(["verify", "--scenario", "example2", "--nx", "8", "--ny", "8", "--workers", "2"])
        self.assertEqual(code, EXIT_OK)
        args, kwargs = mock_run.call_args
        self.assertEqual(args[:2], ("verify", "example2"))
        self.assertEqual((kwargs["nx"], kwargs["ny"], kwargs["workers"]), (8, 8, 2))

    def test_invalid_settings(self):
        """Test that a broken environment is an input error."""
        with patch("pollution_game.cli.load_settings", side_effect=ValueError("bad tol")):
            self.assertEqual(main(["solve", "--scenario", "example1"]), EXIT_INPUT_ERROR)


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
