"""Field and summary output: CSV tables and legacy-VTK structured points."""
import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from ..spatial.geometry import Grid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
VTK_BLANK = -9999.0
SUMMARY_HEADER = ["player", "w", "mean_u", "max_u", "argmax_x", "argmax_y", "mean_Pss"]


def field_frame(values: np.ndarray, grid: Grid) -> pd.DataFrame:
    """Active cells as rows ``x, y, value`` in row-major order."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ValueError(f"Field has shape {values.shape}, grid has {grid.n_cells} active cells")
    return pd.DataFrame({"x": grid.centers[:, 0], "y": grid.centers[:, 1], "value": values})


def _write_vtk(values: np.ndarray, grid: Grid, path: Path, name: str):
    lattice = grid.to_lattice(values, fill=VTK_BLANK)
    header = "\n".join([
        "# vtk DataFile Version 3.0",
        f"{name} (inactive cells = {VTK_BLANK:g})",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1",
        f"ORIGIN {grid.x0!r} {grid.y0!r} 0",
        f"SPACING {grid.hx!r} {grid.hy!r} 1",
        f"CELL_DATA {grid.nx * grid.ny}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, lattice.reshape(-1, 1), fmt=FLOAT_FORMAT)


def write_field(values: np.ndarray, grid: Grid, path: Union[str, Path], fmt: str = "csv",
                name: str = "value") -> Path:
    """
    Writes a cell field.

    Args:
        values: One value per active cell.
        grid: The grid the field lives on.
        path: Output file; the extension is replaced by ``.csv`` or ``.vtk``.
        fmt: ``"csv"`` (``x,y,value`` rows, 17 significant digits) or ``"vtk"``
            (structured points, inactive cells blanked with -9999).
        name: Scalar name stored in VTK files.

    Returns:
        Path: The written file.

    Raises:
        ValueError: If the format is unknown or the field does not match the grid.
        OSError: If the file cannot be written.
    """
    path = Path(path)
    if fmt not in ("csv", "vtk"):
        raise ValueError(f"Unknown field format '{fmt}', expected 'csv' or 'vtk'")
    frame = field_frame(values, grid)
    path = path.with_suffix(f".{fmt}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    else:
        _write_vtk(frame["value"].to_numpy(), grid, path, name)
    logger.debug(f"Field '{name}' written to {path}")
    return path


def read_field_csv(path: Union[str, Path], grid: Grid = None) -> np.ndarray:
    """
    Reads a field written by ``write_field`` in CSV form.

    Raises:
        ValueError: If the file does not match ``grid``.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ["x", "y", "value"]:
        raise ValueError(f"{path}: expected columns x,y,value, got {list(frame.columns)}")
    values = frame["value"].to_numpy(dtype=float)
    if grid is not None:
        if len(values) != grid.n_cells:
            raise ValueError(f"{path}: {len(values)} rows for a grid of {grid.n_cells} cells")
        if not np.allclose(frame[["x", "y"]].to_numpy(), grid.centers, rtol=0, atol=1e-12):
            raise ValueError(f"{path}: cell centres do not match the grid")
    return values


def write_summary(summary: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Writes the per-player summary table with its fixed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary[SUMMARY_HEADER].to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
