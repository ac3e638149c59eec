# tests/pollution_game/spatial/test_spatial_utils.py

import unittest

import numpy as np

from pollution_game.spatial.geometry import build_grid, build_grid_from_spacing, partition_regions
from pollution_game.spatial.utils import (field_stats, inner, integrate, random_pairs, reflect_field,
                                          region_argmax, region_means)


class TestSpatialUtils(unittest.TestCase):

    def setUp(self):
        self.grid = build_grid([[0, 1, 0, 1]], 4, 4)
        self.partition = partition_regions(self.grid, [[[0, 0.5, 0, 1]], [[0.5, 1, 0, 1]]])
        self.x = self.grid.centers[:, 0].copy()

    def test_integrals(self):
        """Test midpoint integrals and the weighted inner product."""
        ones = np.ones(self.grid.n_cells)
        self.assertAlmostEqual(integrate(self.grid, ones), 1.0)
        self.assertAlmostEqual(integrate(self.grid, ones, self.partition.cells[0]), 0.5)
        self.assertAlmostEqual(integrate(self.grid, self.x), 0.5)
        self.assertAlmostEqual(inner(self.grid, ones, self.x), 0.5)

    def test_region_statistics(self):
        """Test region means, maxima and argmax coordinates."""
        np.testing.assert_allclose(region_means(self.partition, self.x), [0.25, 0.75])
        stats = field_stats(self.partition, self.x)
        np.testing.assert_allclose(stats["max"], [0.375, 0.875])
        np.testing.assert_allclose(stats["argmax_x"], [0.375, 0.875])
        # lowest index on ties: the bottom row
        np.testing.assert_allclose(stats["argmax_y"], [0.125, 0.125])
        np.testing.assert_array_equal(region_argmax(self.partition, self.x), [1, 3])

    def test_reflect_about_vertical_line(self):
        """Test that mirroring x about x=0.5 gives 1-x."""
        np.testing.assert_allclose(reflect_field(self.grid, self.x, "x", 0.5), 1.0 - self.x)

    def test_reflect_about_horizontal_line(self):
        """Test that a field depending on x only is invariant under y mirroring."""
        np.testing.assert_allclose(reflect_field(self.grid, self.x, "y", 0.5), self.x)

    def test_reflect_asymmetric_domain_raises(self):
        """Test that mirroring out of the active region is rejected."""
        grid = build_grid_from_spacing([[0, 1, 0, 0.5], [0.5, 1, 0, 2], [1, 1.5, 1.5, 2]], 0.25)
        with self.assertRaisesRegex(ValueError, "not symmetric"):
            reflect_field(grid, np.zeros(grid.n_cells), "x", 0.75)
        with self.assertRaises(ValueError):
            reflect_field(self.grid, self.x, "z", 0.5)

    def test_random_pairs_reproducible(self):
        """Test that the same seed gives the same fields."""
        p1, v1 = random_pairs(10, 3, seed=7)
        p2, v2 = random_pairs(10, 3, seed=7)
        self.assertEqual(p1.shape, (3, 10))
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(v1, v2)
        self.assertFalse(np.array_equal(p1, v1))


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
