"""Integrals, region statistics and reflections of cell fields."""
import math
from typing import Dict, Optional, Tuple

import numpy as np

from .assembly import SparseOperator
from .geometry import Grid, RegionPartition


def inner(grid: Grid, p: np.ndarray, v: np.ndarray) -> float:
    """Cell-area-weighted inner product."""
    return float(np.dot(p, v) * grid.cell_area)


def integrate(grid: Grid, values: np.ndarray, cells: Optional[np.ndarray] = None) -> float:
    """Midpoint-rule integral of a cell field, optionally restricted to ``cells``."""
    values = np.asarray(values, dtype=float)
    if cells is not None:
        values = values[cells]
    return float(values.sum() * grid.cell_area)


def region_means(partition: RegionPartition, values: np.ndarray) -> np.ndarray:
    """Mean of a cell field over each country."""
    values = np.asarray(values, dtype=float)
    sums = np.bincount(partition.owner, weights=values, minlength=partition.n_players)
    counts = np.bincount(partition.owner, minlength=partition.n_players)
    return sums / counts


def region_max(partition: RegionPartition, values: np.ndarray) -> np.ndarray:
    return np.array([values[cells].max() for cells in partition.cells])


def region_argmax(partition: RegionPartition, values: np.ndarray) -> np.ndarray:
    """Cell index of the maximum of ``values`` in each country (lowest index on ties)."""
    return np.array([cells[np.argmax(values[cells])] for cells in partition.cells], dtype=np.int64)


def reflect_field(grid: Grid, values: np.ndarray, axis: str, about: float) -> np.ndarray:
    """
    Mirrors a cell field across the line ``x = about`` (``axis="x"``) or ``y = about``.

    Raises:
        ValueError: If a reflected cell falls outside the active region.
    """
    lattice = grid.to_lattice(values)
    if axis == "x":
        shift = 2.0 * (about - grid.x0) / grid.hx
        i = np.rint(shift - 1 - grid.col).astype(np.int64)
        j = grid.row
    elif axis == "y":
        shift = 2.0 * (about - grid.y0) / grid.hy
        j = np.rint(shift - 1 - grid.row).astype(np.int64)
        i = grid.col
    else:
        raise ValueError(f"axis must be 'x' or 'y', got '{axis}'")
    if np.any((i < 0) | (i >= grid.nx) | (j < 0) | (j >= grid.ny)) or np.any(grid.cell_id[
            np.clip(j, 0, grid.ny - 1), np.clip(i, 0, grid.nx - 1)] < 0):
        raise ValueError(f"Domain is not symmetric about {axis}={about:g}")
    return lattice[j, i]


def adjoint_defect(primal: SparseOperator, adjoint: SparseOperator, p: np.ndarray,
                   v: np.ndarray) -> float:
    """
    Relative defect of ``<A p, v> = <p, A* v>``.

    The difference is divided by ``<|v|, |A| |p|>``, the sum of the absolute
    products, and not by ``|<A p, v>|``. A value near machine epsilon means the
    two operators are adjoint up to round-off.
    """
    # exactly rounded sums: round-off comes from the products alone
    lhs = math.fsum((primal.matrix @ p) * v)
    rhs = math.fsum(p * (adjoint.matrix @ v))
    scale = math.fsum((abs(primal.matrix) @ np.abs(p)) * np.abs(v))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


def random_pairs(n_cells: int, count: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """``count`` reproducible pairs of random fields, as two ``(count, n_cells)`` arrays."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, n_cells)), rng.standard_normal((count, n_cells))


def field_stats(partition: RegionPartition, values: np.ndarray) -> Dict[str, np.ndarray]:
    """Region means, maxima and argmax coordinates of a cell field."""
    argmax = region_argmax(partition, values)
    centers = partition.grid.centers[argmax]
    return {
        "mean": region_means(partition, values),
        "max": region_max(partition, values),
        "argmax": argmax,
        "argmax_x": centers[:, 0],
        "argmax_y": centers[:, 1],
    }
