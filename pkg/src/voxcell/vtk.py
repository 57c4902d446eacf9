"""Legacy ASCII VTK (STRUCTURED_POINTS) export of per-voxel fields."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fcm.fields import evaluate_fields, voxel_centers
from .fcm.material import von_mises


def voxel_fields(mesh, grid, mat, solution, chunk: int = 20000) -> dict:
    """alpha, displacement and von Mises stress at voxel centres (x-fastest order)."""
    pts = voxel_centers(grid)
    u, _, sig = evaluate_fields(mesh, grid, mat, solution, pts, chunk)
    return {
        "alpha": grid.alpha.ravel(order="F"),
        "displacement": u,
        "von_mises": von_mises(sig),
    }


def _fmt(values: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.9g}" for v in row) for row in np.atleast_2d(values))


def write_vtk(path, grid, fields: dict | None = None, title: str = "voxcell fields") -> Path:
    """Write cell data on the voxel lattice.

    Scalars are arrays of n_voxels values, vectors arrays of shape
    (n_voxels, 3), both ordered x-fastest like the VTK point lattice.
    """
    path = Path(path)
    nx, ny, nz = grid.dims
    n = nx * ny * nz
    if fields is None:
        fields = {"alpha": grid.alpha.ravel(order="F")}
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}",
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(f"{s:.9g}" for s in grid.spacing),
        f"CELL_DATA {n}",
    ]
    for name, values in fields.items():
        arr = np.asarray(values, dtype=float)
        if arr.shape == (n,):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(arr.reshape(-1, 1))]
        elif arr.shape == (n, 3):
            lines += [f"VECTORS {name} double", _fmt(arr)]
        else:
            raise ValueError(f"field {name!r} has shape {arr.shape}; expected ({n},) or ({n}, 3)")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_vtk_header(path) -> dict:
    """Parse the geometry header of a file written by :func:`write_vtk`."""
    out = {}
    with open(path, encoding="ascii") as fh:
        for i, line in enumerate(fh):
            parts = line.split()
            if i == 0:
                out["version"] = line.strip()
            elif parts and parts[0] in ("DIMENSIONS", "SPACING", "ORIGIN"):
                conv = int if parts[0] == "DIMENSIONS" else float
                out[parts[0].lower()] = tuple(conv(v) for v in parts[1:4])
            elif parts and parts[0] == "CELL_DATA":
                out["cell_data"] = int(parts[1])
                break
    return out
