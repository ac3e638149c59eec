"""
Computational domain for the spatial game.

The domain is a union of axis-aligned rectangles discretised by a uniform,
cell-centred Cartesian grid over its bounding box; cells whose centre lies in
one of the rectangles are active. Countries are unions of rectangles whose
edges must fall on cell faces. Boundary faces carry a segment tag of the form
``"x=0"`` or ``"y=1.5"`` naming the lattice line they lie on.

Players are numbered from 0 in code; scenario files and reports use 1-based
numbers.
"""
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import GeometryError

logger = logging.getLogger(__name__)

LATTICE_TOL = 1e-9

WEST, EAST, SOUTH, NORTH = 0, 1, 2, 3
NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])

_SEGMENT_RE = re.compile(r"^\s*([xy])\s*=\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*$")


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError(f"Rectangle {self.as_list()} must have positive area")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Rectangle":
        if isinstance(values, Rectangle):
            return values
        if len(values) != 4:
            raise GeometryError(f"A rectangle needs 4 numbers [x0, x1, y0, y1], got {list(values)}")
        return cls(*(float(v) for v in values))

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x, y) -> np.ndarray:
        """Strict interior test, used for cell centres."""
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)

    def covers(self, x, y) -> np.ndarray:
        """Closed test, used for convection pieces evaluated on faces."""
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def as_list(self) -> List[float]:
        return [self.x0, self.x1, self.y0, self.y1]


def _as_rectangles(rectangles: Sequence) -> Tuple[Rectangle, ...]:
    return tuple(Rectangle.from_sequence(r) for r in rectangles)


def _lattice_index(value: float, origin: float, spacing: float, what: str) -> int:
    k = (value - origin) / spacing
    nearest = round(k)
    if abs(k - nearest) > LATTICE_TOL * max(1.0, abs(k)):
        raise GeometryError(f"{what}={value:g} is not on the grid lattice (spacing {spacing:g})")
    return int(nearest)


def _segment_tag(axis: str, coordinate: float) -> str:
    return f"{axis}={round(coordinate, 12) + 0.0:.10g}"


def parse_segment(tag: str) -> Tuple[str, float]:
    """Splits a segment tag such as ``"x=0"`` into ``("x", 0.0)``."""
    match = _SEGMENT_RE.match(tag)
    if not match:
        raise GeometryError(f"Invalid boundary segment '{tag}', expected 'x=<value>' or 'y=<value>'")
    return match.group(1), float(match.group(2))


@dataclass(frozen=True, eq=False)
class BoundaryFaces:
    """Boundary faces of the active region, one entry per face."""
    cell: np.ndarray
    direction: np.ndarray
    center: np.ndarray
    axis: np.ndarray
    line: np.ndarray
    segment: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.cell)

    @property
    def normal(self) -> np.ndarray:
        return NORMALS[self.direction]


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Uniform cell-centred grid over the bounding box of a rectilinear domain.

    Active cells are numbered row-major (x fastest). ``x_faces`` lists interior
    vertical faces as ``[left, right]`` cell pairs and ``y_faces`` interior
    horizontal faces as ``[below, above]``; ``x_face_index``/``y_face_index``
    give the lattice position ``(j, i)`` of each face.
    """
    rectangles: Tuple[Rectangle, ...]
    x0: float
    y0: float
    hx: float
    hy: float
    nx: int
    ny: int
    mask: np.ndarray
    cell_id: np.ndarray
    row: np.ndarray
    col: np.ndarray
    centers: np.ndarray
    x_faces: np.ndarray
    x_face_index: np.ndarray
    y_faces: np.ndarray
    y_face_index: np.ndarray
    boundary: BoundaryFaces

    @property
    def n_cells(self) -> int:
        return len(self.row)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def total_area(self) -> float:
        return self.n_cells * self.cell_area

    @property
    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.hy

    def segments(self) -> List[str]:
        return sorted(set(self.boundary.segment))

    def segment_mask(self, tag: str) -> np.ndarray:
        """Boolean mask over boundary faces lying on the line named by ``tag``."""
        axis, value = parse_segment(tag)
        return (self.boundary.axis == axis) & (
            np.abs(self.boundary.line - value) <= LATTICE_TOL * max(1.0, abs(value)))

    def cells_on_segment(self, tag: str) -> np.ndarray:
        return np.unique(self.boundary.cell[self.segment_mask(tag)])

    def to_lattice(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Scatters a cell field onto the ``(ny, nx)`` bounding-box lattice."""
        lattice = np.full((self.ny, self.nx), fill, dtype=float)
        lattice[self.row, self.col] = values
        return lattice

    def locate(self, x: float, y: float) -> int:
        """Active cell containing the point, or -1."""
        i = int(np.floor((x - self.x0) / self.hx))
        j = int(np.floor((y - self.y0) / self.hy))
        if 0 <= i < self.nx and 0 <= j < self.ny:
            return int(self.cell_id[j, i])
        return -1


def build_grid(domain: Sequence, nx: int, ny: int) -> Grid:
    """
    Builds the grid of a domain given as a list of rectangles.

    Args:
        domain: Rectangles ``[x0, x1, y0, y1]`` whose union is the domain.
        nx: Number of cells across the bounding box in x.
        ny: Number of cells across the bounding box in y.

    Returns:
        Grid: The grid with active mask, interior faces and tagged boundary faces.

    Raises:
        GeometryError: If the domain is empty, a rectangle corner is off the
            lattice, the resolution is below 2 cells, or the active region is
            not edge-connected.
    """
    rectangles = _as_rectangles(domain)
    if not rectangles:
        raise GeometryError("Domain is empty: no rectangles given")
    if int(nx) < 2 or int(ny) < 2:
        raise GeometryError(f"Grid resolution must be at least 2x2, got {nx}x{ny}")
    nx, ny = int(nx), int(ny)

    x0 = min(r.x0 for r in rectangles)
    x1 = max(r.x1 for r in rectangles)
    y0 = min(r.y0 for r in rectangles)
    y1 = max(r.y1 for r in rectangles)
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    for r in rectangles:
        for value in (r.x0, r.x1):
            _lattice_index(value, x0, hx, "x")
        for value in (r.y0, r.y1):
            _lattice_index(value, y0, hy, "y")

    xc = x0 + (np.arange(nx) + 0.5) * hx
    yc = y0 + (np.arange(ny) + 0.5) * hy
    xx, yy = np.meshgrid(xc, yc)
    mask = np.zeros((ny, nx), dtype=bool)
    for r in rectangles:
        mask |= r.contains(xx, yy)
    if not mask.any():
        raise GeometryError("Domain is empty: no cell centre lies inside the rectangles")

    _, n_components = ndimage.label(mask)
    if n_components != 1:
        raise GeometryError(f"Active region is not edge-connected ({n_components} components)")

    n_cells = int(mask.sum())
    cell_id = np.full((ny, nx), -1, dtype=np.int64)
    cell_id[mask] = np.arange(n_cells)
    row, col = np.nonzero(mask)
    centers = np.column_stack([xc[col], yc[row]])

    padded = np.pad(cell_id, 1, constant_values=-1)
    left, right = padded[1:-1, :-1], padded[1:-1, 1:]
    below, above = padded[:-1, 1:-1], padded[1:, 1:-1]

    interior_x = (left >= 0) & (right >= 0)
    interior_y = (below >= 0) & (above >= 0)
    x_faces = np.column_stack([left[interior_x], right[interior_x]])
    y_faces = np.column_stack([below[interior_y], above[interior_y]])

    cells, directions, face_centers, axes, lines = [], [], [], [], []
    for direction, selected, owner in (
            (WEST, (left < 0) & (right >= 0), right),
            (EAST, (left >= 0) & (right < 0), left)):
        jj, ii = np.nonzero(selected)
        line = x0 + ii * hx
        cells.append(owner[selected])
        directions.append(np.full(len(jj), direction))
        face_centers.append(np.column_stack([line, yc[jj]]))
        axes.append(np.full(len(jj), "x"))
        lines.append(line)
    for direction, selected, owner in (
            (SOUTH, (below < 0) & (above >= 0), above),
            (NORTH, (below >= 0) & (above < 0), below)):
        jj, ii = np.nonzero(selected)
        line = y0 + jj * hy
        cells.append(owner[selected])
        directions.append(np.full(len(jj), direction))
        face_centers.append(np.column_stack([xc[ii], line]))
        axes.append(np.full(len(jj), "y"))
        lines.append(line)

    axis = np.concatenate(axes)
    line = np.concatenate(lines)
    boundary = BoundaryFaces(
        cell=_frozen(np.concatenate(cells)),
        direction=_frozen(np.concatenate(directions)),
        center=_frozen(np.concatenate(face_centers)),
        axis=_frozen(axis),
        line=_frozen(line),
        segment=tuple(_segment_tag(a, v) for a, v in zip(axis, line)),
    )

    grid = Grid(
        rectangles=rectangles, x0=x0, y0=y0, hx=hx, hy=hy, nx=nx, ny=ny,
        mask=_frozen(mask), cell_id=_frozen(cell_id), row=_frozen(row), col=_frozen(col),
        centers=_frozen(centers),
        x_faces=_frozen(x_faces), x_face_index=_frozen(np.column_stack(np.nonzero(interior_x))),
        y_faces=_frozen(y_faces), y_face_index=_frozen(np.column_stack(np.nonzero(interior_y))),
        boundary=boundary,
    )
    logger.debug(f"Grid built: {nx}x{ny} box, {n_cells} active cells, "
                 f"{len(boundary)} boundary faces, segments {grid.segments()}")
    return grid


def build_grid_from_spacing(domain: Sequence, h: float, hy: Optional[float] = None) -> Grid:
    """Builds the grid from a cell size instead of cell counts.

    Raises:
        GeometryError: If the bounding box is not a whole number of cells.
    """
    rectangles = _as_rectangles(domain)
    if not rectangles:
        raise GeometryError("Domain is empty: no rectangles given")
    hy = h if hy is None else hy
    if not (h > 0 and hy > 0):
        raise GeometryError("Cell size must be positive")
    x0 = min(r.x0 for r in rectangles)
    y0 = min(r.y0 for r in rectangles)
    nx = _lattice_index(max(r.x1 for r in rectangles), x0, h, "x")
    ny = _lattice_index(max(r.y1 for r in rectangles), y0, hy, "y")
    return build_grid(rectangles, nx, ny)


@dataclass(frozen=True, eq=False)
class InterfaceFaces:
    """Faces shared by two countries; ``cells[:, 0]`` belongs to the lower player index."""
    cells: np.ndarray
    centers: np.ndarray
    orientation: np.ndarray
    lengths: np.ndarray

    @property
    def length(self) -> float:
        return float(self.lengths.sum())


@dataclass(frozen=True, eq=False)
class RegionPartition:
    grid: Grid
    owner: np.ndarray
    cells: Tuple[np.ndarray, ...]
    areas: np.ndarray
    interfaces: Dict[Tuple[int, int], InterfaceFaces] = field(default_factory=dict)

    @property
    def n_players(self) -> int:
        return len(self.cells)

    def interface(self, i: int, j: int) -> Optional[InterfaceFaces]:
        return self.interfaces.get((min(i, j), max(i, j)))

    def interface_length(self, i: int, j: int) -> float:
        faces = self.interface(i, j)
        return faces.length if faces is not None else 0.0

    def neighbours(self, i: int) -> List[int]:
        return sorted(b if a == i else a for a, b in self.interfaces if i in (a, b))

    def membership(self) -> np.ndarray:
        """``(J, N)`` 0/1 matrix with row i the indicator of country i."""
        member = np.zeros((self.n_players, self.grid.n_cells))
        member[self.owner, np.arange(self.grid.n_cells)] = 1.0
        return member


def partition_regions(grid: Grid, regions: Sequence[Sequence], n_players: Optional[int] = None) -> RegionPartition:
    """
    Assigns every active cell to exactly one country.

    Args:
        grid: The grid to partition.
        regions: One list of rectangles per country.
        n_players: Expected number of countries; checked against ``regions``.

    Returns:
        RegionPartition: Owner per cell, cell lists, areas and shared faces.

    Raises:
        GeometryError: If a region edge cuts through cells, regions overlap, a
            region leaves the domain, or an active cell stays uncovered.
    """
    if n_players is not None and n_players != len(regions):
        raise GeometryError(f"Expected {n_players} regions, got {len(regions)}")
    if not regions:
        raise GeometryError("At least one region is required")

    xx, yy = np.meshgrid(grid.x_centers, grid.y_centers)
    cx, cy = grid.centers[:, 0], grid.centers[:, 1]
    owner = np.full(grid.n_cells, -1, dtype=np.int64)
    for player, rect_list in enumerate(regions):
        rectangles = _as_rectangles(rect_list)
        if not rectangles:
            raise GeometryError(f"Region {player + 1} has no rectangles")
        for rect in rectangles:
            try:
                for value in (rect.x0, rect.x1):
                    _lattice_index(value, grid.x0, grid.hx, "x")
                for value in (rect.y0, rect.y1):
                    _lattice_index(value, grid.y0, grid.hy, "y")
            except GeometryError as e:
                raise GeometryError(f"Region {player + 1} boundary cuts through a cell: {e}") from e
            if (rect.contains(xx, yy) & ~grid.mask).any():
                raise GeometryError(f"Region {player + 1} rectangle {rect.as_list()} extends outside the domain")
            inside = rect.contains(cx, cy)
            clash = inside & (owner >= 0) & (owner != player)
            if clash.any():
                other = int(owner[np.flatnonzero(clash)[0]])
                raise GeometryError(f"Regions {other + 1} and {player + 1} overlap")
            owner[inside] = player

    uncovered = np.flatnonzero(owner < 0)
    if uncovered.size:
        x, y = grid.centers[uncovered[0]]
        raise GeometryError(f"{uncovered.size} active cells are not covered by any region "
                            f"(first at x={x:g}, y={y:g})")

    n = len(regions)
    counts = np.bincount(owner, minlength=n)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise GeometryError(f"Region {empty[0] + 1} contains no cell")
    cells = tuple(_frozen(np.flatnonzero(owner == p)) for p in range(n))
    areas = counts * grid.cell_area

    interfaces = {}
    collected: Dict[Tuple[int, int], List] = {}
    for faces, orientation, length in ((grid.x_faces, "x", grid.hy), (grid.y_faces, "y", grid.hx)):
        oa, ob = owner[faces[:, 0]], owner[faces[:, 1]]
        for k in np.flatnonzero(oa != ob):
            a, b = faces[k]
            pa, pb = int(oa[k]), int(ob[k])
            pair = (a, b) if pa < pb else (b, a)
            collected.setdefault((min(pa, pb), max(pa, pb)), []).append(
                (pair, 0.5 * (grid.centers[a] + grid.centers[b]), orientation, length))
    for key, entries in sorted(collected.items()):
        interfaces[key] = InterfaceFaces(
            cells=_frozen(np.array([e[0] for e in entries], dtype=np.int64)),
            centers=_frozen(np.array([e[1] for e in entries])),
            orientation=_frozen(np.array([e[2] for e in entries])),
            lengths=_frozen(np.array([e[3] for e in entries])),
        )

    partition = RegionPartition(grid=grid, owner=_frozen(owner), cells=cells,
                                areas=_frozen(areas), interfaces=interfaces)
    logger.debug(f"Partition built: {n} regions, areas {areas.tolist()}, "
                 f"interfaces {[(a + 1, b + 1) for a, b in interfaces]}")
    return partition


@dataclass(frozen=True)
class BoundaryCondition:
    """
    Robin data ``alpha*P + k*grad(P).n = alpha*P_b`` on a boundary segment.

    ``alpha = 0`` is the insulated (no-flux) boundary. With ``convective`` set the
    condition is read as adjoint Robin data ``k*grad(v).n + (alpha - b.n)*v = 0``.
    """
    alpha: float = 0.0
    convective: bool = False
    value: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise GeometryError(f"Robin coefficient α must be non-negative, got {self.alpha}")
        if self.value != 0.0:
            raise GeometryError("Boundary pollution P_b must be zero")


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary conditions per segment; the first matching segment wins, ``default`` covers the rest."""
    segments: Tuple[Tuple[str, BoundaryCondition], ...] = ()
    default: Optional[BoundaryCondition] = BoundaryCondition()

    @property
    def is_convective(self) -> bool:
        conditions = [c for _, c in self.segments] + ([self.default] if self.default else [])
        return any(c.convective for c in conditions)

    def resolve(self, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
        """
        Resolves the conditions onto the grid's boundary faces.

        Returns:
            Tuple of per-face ``alpha`` and per-face ``convective`` flag arrays.

        Raises:
            GeometryError: If a segment matches no boundary face or some face
                has no condition.
        """
        n = len(grid.boundary)
        alpha = np.zeros(n)
        convective = np.zeros(n, dtype=bool)
        assigned = np.zeros(n, dtype=bool)
        for tag, condition in self.segments:
            selected = grid.segment_mask(tag)
            if not selected.any():
                raise GeometryError(f"Boundary segment '{tag}' matches no boundary face; "
                                    f"available segments: {grid.segments()}")
            selected &= ~assigned
            alpha[selected] = condition.alpha
            convective[selected] = condition.convective
            assigned |= selected
        if not assigned.all():
            if self.default is None:
                missing = sorted({grid.boundary.segment[k] for k in np.flatnonzero(~assigned)})
                raise GeometryError(f"Inconsistent boundary coverage: no condition for segments {missing}")
            alpha[~assigned] = self.default.alpha
            convective[~assigned] = self.default.convective
        return alpha, convective


@dataclass(frozen=True)
class HalfPlane:
    """Points with ``a*x + b*y + c > 0`` (``strict``) or ``>= 0``."""
    a: float
    b: float
    c: float
    strict: bool = False

    def holds(self, x, y) -> np.ndarray:
        value = self.a * x + self.b * y + self.c
        return value > 0 if self.strict else value >= 0


@dataclass(frozen=True)
class ConvectionPiece:
    """Constant vector on the part of the plane inside any of ``rectangles`` and all ``halfplanes``."""
    vector: Tuple[float, float]
    rectangles: Tuple[Rectangle, ...] = ()
    halfplanes: Tuple[HalfPlane, ...] = ()

    def matches(self, x, y) -> np.ndarray:
        selected = np.ones(np.shape(x), dtype=bool)
        if self.rectangles:
            inside = np.zeros(np.shape(x), dtype=bool)
            for rect in self.rectangles:
                inside |= rect.covers(x, y)
            selected &= inside
        for halfplane in self.halfplanes:
            selected &= halfplane.holds(x, y)
        return selected


@dataclass(frozen=True)
class ConvectionField:
    """Piecewise-constant field b(x); the first matching piece wins, ``default`` elsewhere."""
    pieces: Tuple[ConvectionPiece, ...] = ()
    default: Tuple[float, float] = (0.0, 0.0)

    @classmethod
    def uniform(cls, bx: float, by: float) -> "ConvectionField":
        return cls(pieces=(), default=(float(bx), float(by)))

    @property
    def is_zero(self) -> bool:
        vectors = [p.vector for p in self.pieces] + [self.default]
        return all(v[0] == 0 and v[1] == 0 for v in vectors)

    def evaluate(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        bx = np.full(x.shape, float(self.default[0]))
        by = np.full(x.shape, float(self.default[1]))
        unassigned = np.ones(x.shape, dtype=bool)
        for piece in self.pieces:
            selected = unassigned & piece.matches(x, y)
            bx[selected] = piece.vector[0]
            by[selected] = piece.vector[1]
            unassigned &= ~selected
        return bx, by


@dataclass(frozen=True, eq=False)
class FaceVelocities:
    """
    Normal velocities sampled at face midpoints of the bounding-box lattice.

    ``ux[j, i]`` is b_x on the vertical face at ``x0 + i*hx`` of row j,
    ``uy[j, i]`` is b_y on the horizontal face at ``y0 + j*hy`` of column i.
    ``divergence`` is the discrete divergence per active cell.
    """
    ux: np.ndarray
    uy: np.ndarray
    divergence: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not (self.ux.any() or self.uy.any())

    def nonsolenoidal_cells(self, tol: float = 0.0) -> np.ndarray:
        return np.flatnonzero(np.abs(self.divergence) > tol)

    def boundary_flux(self, grid: Grid) -> np.ndarray:
        """``b.n`` on every boundary face of ``grid``."""
        b = grid.boundary
        i = np.rint((b.center[:, 0] - grid.x0) / grid.hx - 0.5).astype(np.int64)
        j = np.rint((b.center[:, 1] - grid.y0) / grid.hy - 0.5).astype(np.int64)
        flux = np.zeros(len(b))
        vertical = b.axis == "x"
        iface = np.rint((b.center[vertical, 0] - grid.x0) / grid.hx).astype(np.int64)
        flux[vertical] = self.ux[j[vertical], iface] * b.normal[vertical, 0]
        jface = np.rint((b.center[~vertical, 1] - grid.y0) / grid.hy).astype(np.int64)
        flux[~vertical] = self.uy[jface, i[~vertical]] * b.normal[~vertical, 1]
        return flux


def sample_convection(convection: ConvectionField, grid: Grid) -> FaceVelocities:
    """
    Samples the convective field at every face midpoint and reports its discrete divergence.

    A field whose pieces switch inside the domain has non-zero discrete
    divergence on the cells along the switching lines; those cells are logged,
    not rejected.
    """
    x_lines = grid.x0 + np.arange(grid.nx + 1) * grid.hx
    y_lines = grid.y0 + np.arange(grid.ny + 1) * grid.hy
    xf, yc = np.meshgrid(x_lines, grid.y_centers)
    ux, _ = convection.evaluate(xf, yc)
    xc, yf = np.meshgrid(grid.x_centers, y_lines)
    _, uy = convection.evaluate(xc, yf)

    row, col = grid.row, grid.col
    divergence = ((ux[row, col + 1] - ux[row, col]) / grid.hx
                  + (uy[row + 1, col] - uy[row, col]) / grid.hy)
    velocities = FaceVelocities(ux=_frozen(ux), uy=_frozen(uy), divergence=_frozen(divergence))

    flagged = velocities.nonsolenoidal_cells()
    if flagged.size:
        logger.info(f"Convective field has non-zero discrete divergence on {flagged.size} cells "
                    f"(max |div| = {np.abs(divergence).max():.6g})")
    return velocities
