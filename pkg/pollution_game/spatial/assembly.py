"""
Finite-volume assembly of the pollution operator

    A P = div(k grad P) + b.grad P - c P

and of its adjoint. Diffusion uses central differences with harmonic face
averages of k, convection first-order upwinding, and Robin boundaries a
two-point ghost-flux elimination. With the sign of the convective term as
written, pollution drifts along -b, so the upwind value of a face is taken
from the neighbour lying in the +b direction.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .geometry import (BoundarySpec, ConvectionField, FaceVelocities, Grid,
                       RegionPartition, sample_convection)

logger = logging.getLogger(__name__)

CONVECTION_CONVENTION = "+b.grad(P) upwinded along +b (physical drift along -b)"


@dataclass(frozen=True, eq=False)
class Coefficients:
    """
    Model coefficients, stored per cell where they may vary in space.

    Attributes:
        k: Diffusion per cell (length^2/time), bounded below by a positive constant.
        c: Natural decay rate per cell (1/time), non-negative.
        rho: Discount rate (1/time), positive.
        phi: Damage coefficient of each player, positive.
    """
    k: np.ndarray
    c: np.ndarray
    rho: float
    phi: Tuple[float, ...]

    def __post_init__(self):
        if not np.all(np.asarray(self.k) > 0):
            raise ValueError("k must be positive")
        if not np.all(np.asarray(self.c) >= 0):
            raise ValueError("c must be non-negative")
        if not self.rho > 0:
            raise ValueError("ρ must be positive")
        if not self.phi or not all(p > 0 for p in self.phi):
            raise ValueError("φ must be positive")

    @property
    def k_bounds(self) -> Tuple[float, float]:
        return float(np.min(self.k)), float(np.max(self.k))

    @classmethod
    def build(cls, partition: RegionPartition, k: Union[float, Sequence[float]] = 1.0,
              c: Union[float, Sequence[float]] = 0.0, rho: float = 0.01,
              phi: Union[float, Sequence[float]] = 1.0) -> "Coefficients":
        """Expands scalar or per-country values to per-cell arrays."""
        n_players = partition.n_players

        def per_cell(value, name):
            values = np.atleast_1d(np.asarray(value, dtype=float))
            if values.size == 1:
                return np.full(partition.grid.n_cells, float(values[0]))
            if values.size != n_players:
                raise ValueError(f"{name} needs 1 or {n_players} values, got {values.size}")
            return values[partition.owner]

        phis = np.atleast_1d(np.asarray(phi, dtype=float))
        if phis.size == 1:
            phis = np.full(n_players, float(phis[0]))
        if phis.size != n_players:
            raise ValueError(f"phi needs 1 or {n_players} values, got {phis.size}")
        return cls(k=per_cell(k, "k"), c=per_cell(c, "c"), rho=float(rho),
                   phi=tuple(float(p) for p in phis))


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """
    Discrete operator over the active cells of a grid.

    ``boundary_coefficient`` is the effective Robin coefficient per boundary face
    that was folded into the matrix, ``affine`` the boundary contribution (zero,
    since P_b = 0).
    """
    matrix: sp.csr_matrix
    grid: Grid
    kind: str
    assembly: str
    boundary_coefficient: np.ndarray
    convection: str = CONVECTION_CONVENTION
    affine: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.affine is None:
            object.__setattr__(self, "affine", np.zeros(self.grid.n_cells))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values + self.affine

    def shifted(self, sigma: float) -> "SparseOperator":
        """Returns ``A + sigma*I``."""
        matrix = (self.matrix + sigma * sp.identity(self.n, format="csr")).tocsr()
        return SparseOperator(matrix=matrix, grid=self.grid, kind=self.kind, assembly=self.assembly,
                              boundary_coefficient=self.boundary_coefficient,
                              convection=self.convection)

    def transpose(self) -> "SparseOperator":
        kind = "adjoint" if self.kind == "primal" else "primal"
        return SparseOperator(matrix=self.matrix.T.tocsr(), grid=self.grid, kind=kind,
                              assembly="transpose", boundary_coefficient=self.boundary_coefficient,
                              convection=self.convection)


def _velocities(conv: Union[ConvectionField, FaceVelocities], grid: Grid) -> FaceVelocities:
    return conv if isinstance(conv, FaceVelocities) else sample_convection(conv, grid)


def _diffusion(grid: Grid, k: np.ndarray) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for faces, h in ((grid.x_faces, grid.hx), (grid.y_faces, grid.hy)):
        a, b = faces[:, 0], faces[:, 1]
        t = 2.0 * k[a] * k[b] / (k[a] + k[b]) / h ** 2
        rows += [a, b]
        cols += [b, a]
        vals += [t, t]
    return _offdiagonal(grid, rows, cols, vals)


def _convection(grid: Grid, velocities: FaceVelocities, sign: float) -> sp.csr_matrix:
    """Upwinded ``sign * b.grad``: each row couples to the neighbour in the ``sign*b`` direction."""
    rows, cols, vals = [], [], []
    for faces, index, values, h in (
            (grid.x_faces, grid.x_face_index, velocities.ux, grid.hx),
            (grid.y_faces, grid.y_face_index, velocities.uy, grid.hy)):
        a, b = faces[:, 0], faces[:, 1]
        u = sign * values[index[:, 0], index[:, 1]]
        rows += [a, b]
        cols += [b, a]
        vals += [np.maximum(u, 0.0) / h, np.maximum(-u, 0.0) / h]
    return _offdiagonal(grid, rows, cols, vals)


def _offdiagonal(grid: Grid, rows, cols, vals) -> sp.csr_matrix:
    n = grid.n_cells
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def _robin(grid: Grid, k: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Diagonal contribution of ``k*grad(u).n + gamma*u = 0`` after eliminating the face value."""
    boundary = grid.boundary
    h = np.where(boundary.axis == "x", grid.hx, grid.hy)
    conductance = 2.0 * k[boundary.cell] / h
    if np.any(conductance + gamma <= 0):
        worst = float(gamma.min())
        raise ValueError(f"Robin coefficient {worst:g} is below -2k/h; refine the grid")
    beta = gamma * conductance / (conductance + gamma)
    return -np.bincount(boundary.cell, weights=beta / h, minlength=grid.n_cells)


def _assemble(grid: Grid, coeff: Coefficients, velocities: FaceVelocities, sign: float,
              gamma: np.ndarray) -> sp.csr_matrix:
    if not np.all(coeff.k > 0):
        raise ValueError("k must be positive")
    offdiag = _diffusion(grid, coeff.k) + _convection(grid, velocities, sign)
    diagonal = -np.asarray(offdiag.sum(axis=1)).ravel() - coeff.c + _robin(grid, coeff.k, gamma)
    return (offdiag + sp.diags(diagonal)).tocsr()


def assemble_primal(grid: Grid, coeff: Coefficients, conv: Union[ConvectionField, FaceVelocities],
                    bc: BoundarySpec) -> SparseOperator:
    """
    Assembles the discrete generator ``L`` with ``dP/dt = L P + source``.

    Args:
        grid: The computational grid.
        coeff: Diffusion, decay and discount coefficients.
        conv: Convective field, or its sampled face velocities.
        bc: Robin coefficients per boundary segment.

    Returns:
        SparseOperator: The primal operator (five-point stencil).

    Raises:
        ValueError: If k is not positive or ``bc`` holds adjoint-only data.
        GeometryError: If ``bc`` does not cover the boundary.
    """
    if bc.is_convective:
        raise ValueError("Convective boundary data only applies to adjoint assembly")
    velocities = _velocities(conv, grid)
    alpha, _ = bc.resolve(grid)
    matrix = _assemble(grid, coeff, velocities, +1.0, alpha)
    logger.debug(f"Primal operator assembled: {matrix.shape[0]} unknowns, {matrix.nnz} non-zeros")
    return SparseOperator(matrix=matrix, grid=grid, kind="primal", assembly="direct",
                          boundary_coefficient=alpha)


def assemble_adjoint(primal: SparseOperator) -> SparseOperator:
    """
    Returns the discrete adjoint as the transpose of the primal.

    On a uniform grid the cell-volume-weighted inner product is a multiple of
    the Euclidean one, so the transpose is the adjoint exactly; it carries the
    reversed convection and the adjoint boundary rows.
    """
    if primal.kind != "primal":
        raise ValueError(f"Expected a primal operator, got '{primal.kind}'")
    return primal.transpose()


def assemble_adjoint_direct(grid: Grid, coeff: Coefficients, conv: Union[ConvectionField, FaceVelocities],
                            adjoint_bc: BoundarySpec) -> SparseOperator:
    """
    Assembles ``div(k grad v) - b.grad v - c v`` with explicit adjoint boundary data.

    A segment marked ``convective`` uses ``k*grad(v).n + (alpha - b.n)*v = 0``,
    otherwise ``k*grad(v).n + alpha*v = 0``. The matching primal operator is the
    transpose of the result.

    Raises:
        GeometryError: If a boundary segment has no adjoint condition.
        ValueError: If k is not positive or a Robin coefficient is too negative for the mesh.
    """
    velocities = _velocities(conv, grid)
    alpha, convective = adjoint_bc.resolve(grid)
    gamma = alpha - np.where(convective, velocities.boundary_flux(grid), 0.0)
    matrix = _assemble(grid, coeff, velocities, -1.0, gamma)
    logger.debug(f"Adjoint operator assembled directly: {matrix.shape[0]} unknowns, "
                 f"Robin range [{gamma.min():g}, {gamma.max():g}]")
    return SparseOperator(matrix=matrix, grid=grid, kind="adjoint", assembly="direct",
                          boundary_coefficient=gamma)


def indicator_load(partition: RegionPartition, i: int, phi: float) -> np.ndarray:
    """Field equal to ``phi`` on the cells of country ``i`` and 0 elsewhere."""
    if not 0 <= i < partition.n_players:
        raise IndexError(f"Player index {i} out of range for {partition.n_players} players")
    return np.where(partition.owner == i, float(phi), 0.0)
