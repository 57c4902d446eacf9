"""Cartesian finite-cell mesh embedding integer voxel blocks.

Global DOF layout
-----------------
The global C0 space of tensor-product integrated Legendre functions on a
Cartesian mesh is the tensor product of the 1D global spaces.  Along an axis
with ``m`` cells and degree ``p`` the 1D modes live on a lattice of
``m * p + 1`` slots: slot ``i * p`` is the hat function of vertex ``i`` and
slots ``i * p + 1 .. i * p + p - 1`` are the internal modes of cell ``i``.
A 3D scalar mode is the product of one slot per axis, numbered x-fastest,
and displacement DOFs are interleaved (``3 * mode + component``).  Vertex,
edge, face and interior modes are the slot triples with 3, 2, 1 and 0 vertex
slots respectively.  Shared entities get one global index by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import GeometryError
from .basis import ShapeBasis

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


def parse_face(face: str) -> tuple[int, int]:
    """``'z+'`` -> (axis 2, side 1)."""
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}; expected one of {FACES}")
    return "xyz".index(face[0]), int(face[1] == "+")


@dataclass(frozen=True, eq=False)
class CellMesh:
    cell_dims: tuple[int, int, int]
    voxels_per_cell: tuple[int, int, int]
    degree: int
    spacing: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "cell_dims", tuple(int(m) for m in self.cell_dims))
        object.__setattr__(self, "voxels_per_cell", tuple(int(v) for v in self.voxels_per_cell))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if min(self.cell_dims) < 1 or min(self.voxels_per_cell) < 1:
            raise GeometryError("cell_dims and voxels_per_cell must be positive")
        if self.degree < 1:
            raise GeometryError(f"degree must be >= 1, got {self.degree}")

    @classmethod
    def for_grid(cls, grid, voxels_per_cell, degree: int) -> "CellMesh":
        vpc = tuple(int(v) for v in np.broadcast_to(voxels_per_cell, (3,)))
        dims = grid.dims
        if any(n % v for n, v in zip(dims, vpc)):
            raise GeometryError(f"grid dims {dims} are not divisible by voxels_per_cell {vpc}")
        return cls(tuple(n // v for n, v in zip(dims, vpc)), vpc, degree, grid.spacing)

    @property
    def basis(self) -> ShapeBasis:
        return ShapeBasis(self.degree)

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return tuple(m * v for m, v in zip(self.cell_dims, self.voxels_per_cell))

    @property
    def cell_size(self) -> np.ndarray:
        return np.array(self.voxels_per_cell) * np.array(self.spacing)

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.cell_dims) * self.cell_size

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_dims))

    @property
    def n_modes_local(self) -> int:
        return (self.degree + 1) ** 3

    @property
    def n_voxels_per_cell(self) -> int:
        return int(np.prod(self.voxels_per_cell))

    @property
    def lattice_shape(self) -> tuple[int, int, int]:
        return tuple(m * self.degree + 1 for m in self.cell_dims)

    @property
    def n_scalar(self) -> int:
        return int(np.prod(self.lattice_shape))

    @property
    def total_dofs(self) -> int:
        return 3 * self.n_scalar

    def mode_index(self, ix, iy, iz):
        nx, ny, _ = self.lattice_shape
        return np.asarray(ix) + nx * (np.asarray(iy) + ny * np.asarray(iz))

    def lattice_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-axis lattice slot of every global scalar mode."""
        nx, ny, nz = self.lattice_shape
        s = np.arange(self.n_scalar)
        return s % nx, (s // nx) % ny, s // (nx * ny)

    def vertex_slot_mask(self) -> np.ndarray:
        """(n_scalar, 3) bool: slot along each axis is a vertex (hat) slot."""
        return np.stack([i % self.degree == 0 for i in self.lattice_indices()], axis=1)

    def vertex_coordinates(self) -> np.ndarray:
        """(n_scalar, 3) coordinates of the lattice slots (meaningful for vertex slots)."""
        idx = np.stack(self.lattice_indices(), axis=1).astype(float)
        return idx / self.degree * self.cell_size

    @cached_property
    def cell_modes(self) -> np.ndarray:
        """(n_cells, (p+1)^3) global scalar modes per cell, cells and modes x-fastest."""
        p = self.degree
        off = self.basis.lattice_offsets()
        mx, my, mz = self.cell_dims
        c = np.arange(self.n_cells)
        cx, cy, cz = c % mx, (c // mx) % my, c // (mx * my)
        gx = cx[:, None] * p + off[None, :]
        gy = cy[:, None] * p + off[None, :]
        gz = cz[:, None] * p + off[None, :]
        modes = self.mode_index(
            gx[:, None, None, :], gy[:, None, :, None], gz[:, :, None, None]
        )
        out = modes.reshape(self.n_cells, -1)
        out.flags.writeable = False
        return out

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        out = (3 * self.cell_modes[:, :, None] + np.arange(3)).reshape(self.n_cells, -1)
        out.flags.writeable = False
        return out

    def cell_index(self, cx, cy, cz):
        mx, my, _ = self.cell_dims
        return np.asarray(cx) + mx * (np.asarray(cy) + my * np.asarray(cz))

    def cell_alphas(self, grid) -> np.ndarray:
        """(n_cells, voxels per cell) indicator values, voxels x-fastest within a cell."""
        return self.cell_blocks(grid.alpha)

    def cell_blocks(self, voxel_array: np.ndarray) -> np.ndarray:
        if tuple(voxel_array.shape) != self.grid_dims:
            raise GeometryError(f"grid dims {voxel_array.shape} do not match mesh embedding {self.grid_dims}")
        mx, my, mz = self.cell_dims
        vx, vy, vz = self.voxels_per_cell
        a = np.asarray(voxel_array).reshape(mx, vx, my, vy, mz, vz)
        return a.transpose(4, 2, 0, 5, 3, 1).reshape(self.n_cells, -1)

    def boundary_cells(self, face: str) -> np.ndarray:
        axis, side = parse_face(face)
        mx, my, mz = self.cell_dims
        c = np.arange(self.n_cells)
        cidx = (c % mx, (c // mx) % my, c // (mx * my))[axis]
        return c[cidx == (self.cell_dims[axis] - 1 if side else 0)]

    def boundary_modes(self, face: str) -> np.ndarray:
        axis, side = parse_face(face)
        slot = self.lattice_indices()[axis]
        target = self.lattice_shape[axis] - 1 if side else 0
        return np.flatnonzero(slot == target)

    def affine_field(self, strain_tensor: np.ndarray) -> np.ndarray:
        """DOF vector of u = eps . x (exact: affine fields live in the vertex modes)."""
        eps = np.asarray(strain_tensor, dtype=float)
        x = self.vertex_coordinates()
        u = x @ eps.T
        u[~np.all(self.vertex_slot_mask(), axis=1)] = 0.0
        return u.ravel()

    def rigid_modes(self) -> np.ndarray:
        """(total_dofs, 6) translations then infinitesimal rotations about the box centre."""
        x = self.vertex_coordinates() - 0.5 * self.extent
        vertex = np.all(self.vertex_slot_mask(), axis=1)
        R = np.zeros((self.n_scalar, 3, 6))
        for d in range(3):
            R[:, d, d] = 1.0
        for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            # rotation about axis k: u_a = -x_b, u_b = x_a
            R[:, a, 3 + k] = -x[:, b]
            R[:, b, 3 + k] = x[:, a]
        R[~vertex] = 0.0
        return R.reshape(self.total_dofs, 6)
