# tests/pollution_game/spatial/test_assembly.py

import unittest

import numpy as np

from pollution_game.errors import GeometryError
from pollution_game.spatial.assembly import (Coefficients, assemble_adjoint, assemble_adjoint_direct,
                                             assemble_primal, indicator_load)
from pollution_game.spatial.geometry import (BoundaryCondition, BoundarySpec, ConvectionField, build_grid,
                                             partition_regions)
from pollution_game.spatial.utils import adjoint_defect, random_pairs


def _setup(n, regions=None, **coefficients):
    grid = build_grid([[0, 1, 0, 1]], n, n)
    partition = partition_regions(grid, regions or [[[0, 1, 0, 1]]])
    coefficients.setdefault("c", 0.5)
    return grid, partition, Coefficients.build(partition, **coefficients)


class TestCoefficients(unittest.TestCase):

    def test_per_country_values(self):
        """Test that per-country values are expanded onto cells."""
        grid, partition, coeff = _setup(4, [[[0, 0.5, 0, 1]], [[0.5, 1, 0, 1]]], k=[1.0, 2.0], phi=[1.0, 3.0])
        self.assertTrue(np.all(coeff.k[partition.cells[1]] == 2.0))
        self.assertEqual(coeff.phi, (1.0, 3.0))
        self.assertEqual(coeff.k_bounds, (1.0, 2.0))

    def test_invalid_values_raise(self):
        """Test validation of k, c, rho and phi."""
        grid = build_grid([[0, 1, 0, 1]], 4, 4)
        partition = partition_regions(grid, [[[0, 1, 0, 1]]])
        for bad in ({"k": 0.0}, {"c": -1.0}, {"rho": 0.0}, {"phi": -2.0}):
            with self.subTest(bad=bad):
                with self.assertRaises(ValueError):
                    Coefficients.build(partition, **bad)
        with self.assertRaisesRegex(ValueError, "1 or 1 values"):
            Coefficients.build(partition, k=[1.0, 2.0])


class TestPrimalOperator(unittest.TestCase):

    def test_insulated_row_sums(self):
        """Test that with insulated walls every row sums to -c."""
        grid, _, coeff = _setup(8)
        primal = assemble_primal(grid, coeff, ConvectionField(), BoundarySpec())
        np.testing.assert_allclose(primal.apply(np.ones(grid.n_cells)), -0.5, rtol=0, atol=1e-12)
        self.assertEqual(primal.kind, "primal")

    def test_robin_row_sums(self):
        """Test the Robin contribution on x=0 after eliminating the face value."""
        grid, _, coeff = _setup(8)
        bc = BoundarySpec(segments=(("x=0", BoundaryCondition(alpha=1.0)),))
        primal = assemble_primal(grid, coeff, ConvectionField(), bc)
        sums = primal.apply(np.ones(grid.n_cells))
        left = grid.cells_on_segment("x=0")
        # beta = alpha*(2k/h)/(2k/h + alpha) = 16/17, divided by h = 1/8
        np.testing.assert_allclose(sums[left], -0.5 - 128.0 / 17.0, rtol=1e-12)
        np.testing.assert_allclose(np.delete(sums, left), -0.5, rtol=0, atol=1e-12)

    def test_upwind_couples_along_b(self):
        """Test that the convective term couples each cell to its neighbour in the +b direction."""
        grid, _, coeff = _setup(4)
        primal = assemble_primal(grid, coeff, ConvectionField.uniform(1.0, 0.0), BoundarySpec())
        matrix = primal.matrix.toarray()
        self.assertAlmostEqual(matrix[0, 1], 16.0 + 4.0)
        self.assertAlmostEqual(matrix[1, 0], 16.0)
        self.assertAlmostEqual(matrix[0, 0], -36.5)
        offdiag = matrix - np.diag(np.diag(matrix))
        self.assertTrue(np.all(offdiag >= 0))

    def test_harmonic_face_average(self):
        """Test the harmonic mean of k across a border between countries."""
        grid, partition, coeff = _setup(4, [[[0, 0.5, 0, 1]], [[0.5, 1, 0, 1]]], k=[1.0, 3.0])
        primal = assemble_primal(grid, coeff, ConvectionField(), BoundarySpec())
        # cells 1 and 2 straddle x=0.5: 2*1*3/(1+3) / h^2
        self.assertAlmostEqual(primal.matrix[1, 2], 1.5 * 16.0)

    def test_convective_data_rejected(self):
        """Test that adjoint-only boundary data cannot assemble a primal operator."""
        grid, _, coeff = _setup(4)
        bc = BoundarySpec(default=BoundaryCondition(convective=True))
        with self.assertRaises(ValueError):
            assemble_primal(grid, coeff, ConvectionField(), bc)

    def test_uncovered_boundary_raises(self):
        """Test that a boundary without conditions is rejected."""
        grid, _, coeff = _setup(4)
        with self.assertRaises(GeometryError):
            assemble_primal(grid, coeff, ConvectionField(),
                            BoundarySpec(segments=(("x=0", BoundaryCondition()),), default=None))


class TestAdjointOperator(unittest.TestCase):

    def test_transpose_satisfies_adjoint_identity(self):
        """Test <A p, v> = <p, A* v> on random pairs with convection and Robin data."""
        grid, _, coeff = _setup(10)
        bc = BoundarySpec(segments=(("x=0", BoundaryCondition(alpha=1.0)),))
        primal = assemble_primal(grid, coeff, ConvectionField.uniform(4.0, -2.0), bc)
        adjoint = assemble_adjoint(primal)
        self.assertEqual(adjoint.kind, "adjoint")
        self.assertEqual(adjoint.assembly, "transpose")
        ps, vs = random_pairs(grid.n_cells, 20, seed=3)
        worst = max(adjoint_defect(primal, adjoint, p, v) for p, v in zip(ps, vs))
        self.assertLess(worst, 1e-13)

    def test_non_adjoint_detected(self):
        """Test that a convective operator is not its own adjoint."""
        grid, _, coeff = _setup(10)
        primal = assemble_primal(grid, coeff, ConvectionField.uniform(4.0, 0.0), BoundarySpec())
        ps, vs = random_pairs(grid.n_cells, 5, seed=1)
        worst = max(adjoint_defect(primal, primal, p, v) for p, v in zip(ps, vs))
        self.assertGreater(worst, 1e-6)
        self.assertLessEqual(worst, 2.0)

    def test_defect_scaled_by_absolute_products(self):
        """Test that the defect is divided by <|v|, |A| |p|> rather than by |<A p, v>|."""
        grid, _, coeff = _setup(6)
        primal = assemble_primal(grid, coeff, ConvectionField.uniform(4.0, 0.0), BoundarySpec())
        ps, vs = random_pairs(grid.n_cells, 1, seed=2)
        p, v = ps[0], vs[0]
        difference = abs(np.dot(primal.matrix @ p, v) - np.dot(p, primal.matrix @ v))
        scale = np.dot(abs(primal.matrix) @ np.abs(p), np.abs(v))
        self.assertAlmostEqual(adjoint_defect(primal, primal, p, v), difference / scale, places=12)

    def test_direct_matches_transpose_without_convection(self):
        """Test that the directly assembled adjoint equals the transpose when b = 0."""
        grid, _, coeff = _setup(8)
        bc = BoundarySpec(segments=(("x=0", BoundaryCondition(alpha=1.0)),))
        primal = assemble_primal(grid, coeff, ConvectionField(), bc)
        direct = assemble_adjoint_direct(grid, coeff, ConvectionField(), bc)
        difference = abs(direct.matrix - assemble_adjoint(primal).matrix).max()
        self.assertLess(difference, 1e-12)
        self.assertEqual(direct.assembly, "direct")

    def test_direct_convective_boundary(self):
        """Test that a convective adjoint segment shifts the Robin coefficient by -b.n."""
        grid, _, coeff = _setup(8)
        bc = BoundarySpec(default=BoundaryCondition(alpha=1.0, convective=True))
        direct = assemble_adjoint_direct(grid, coeff, ConvectionField.uniform(0.5, 0.0), bc)
        gamma = direct.boundary_coefficient
        np.testing.assert_allclose(gamma[grid.segment_mask("x=0")], 1.5)
        np.testing.assert_allclose(gamma[grid.segment_mask("x=1")], 0.5)
        np.testing.assert_allclose(gamma[grid.segment_mask("y=0")], 1.0)

    def test_shifted(self):
        """Test A + sigma I."""
        grid, _, coeff = _setup(4)
        primal = assemble_primal(grid, coeff, ConvectionField(), BoundarySpec())
        shifted = primal.shifted(-0.01)
        np.testing.assert_allclose(shifted.matrix.diagonal(), primal.matrix.diagonal() - 0.01)


class TestIndicatorLoad(unittest.TestCase):

    def test_indicator(self):
        """Test the load of one country."""
        grid, partition, _ = _setup(4, [[[0, 0.5, 0, 1]], [[0.5, 1, 0, 1]]])
        load = indicator_load(partition, 1, 2.0)
        self.assertTrue(np.all(load[partition.cells[1]] == 2.0))
        self.assertTrue(np.all(load[partition.cells[0]] == 0.0))
        with self.assertRaises(IndexError):
            indicator_load(partition, 2, 1.0)


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
