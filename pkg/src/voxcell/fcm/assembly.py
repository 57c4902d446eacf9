"""Global operators and load vectors of the finite cell discretization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import GeometryError, SingularSystemWarning
from .kernels import VoxelKernelTable, cell_stiffness, face_table, precompute_voxel_kernels
from .mesh import CellMesh, parse_face

DEFAULT_PENALTY_FACTOR = 1e8


def default_beta(mesh: CellMesh, mat) -> float:
    """Penalty magnitude 1e8 * E / h_cell (smallest cell edge)."""
    return DEFAULT_PENALTY_FACTOR * mat.youngs_modulus / float(np.min(mesh.cell_size))


def _value_at(value, x: np.ndarray) -> np.ndarray:
    """Evaluate a constant 3-vector or a callable field at points ``x`` (..., 3)."""
    if callable(value):
        out = np.asarray(value(x), dtype=float)
    else:
        out = np.broadcast_to(np.asarray(value, dtype=float), x.shape)
    if out.shape != x.shape:
        raise ValueError(f"boundary value has shape {out.shape}, expected {x.shape}")
    return out


@dataclass(frozen=True)
class DirichletFace:
    face: str
    value: object = (0.0, 0.0, 0.0)
    components: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        parse_face(self.face)
        if not set(self.components) <= {0, 1, 2} or not self.components:
            raise ValueError(f"components must be a non-empty subset of (0, 1, 2), got {self.components}")


@dataclass(frozen=True)
class PenaltyConfig:
    faces: tuple[DirichletFace, ...] = ()
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))
        if self.beta is not None and not self.beta > 0:
            raise ValueError(f"penalty beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class TractionFace:
    face: str
    traction: object  # constant 3-vector (MPa) or callable of points


@dataclass(frozen=True)
class LoadSpec:
    body_force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tractions: tuple[TractionFace, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tractions", tuple(self.tractions))


@dataclass(eq=False)
class CellBlock:
    """Cell-wise operator: y[dofs[c]] += matrices[index[c]] @ x[dofs[c]]."""

    dofs: np.ndarray
    matrices: np.ndarray
    index: np.ndarray

    def matvec(self, x: np.ndarray, n: int, chunk: int = 4096) -> np.ndarray:
        y = np.zeros(n)
        for start in range(0, len(self.dofs), chunk):
            d = self.dofs[start:start + chunk]
            m = self.matrices[self.index[start:start + chunk]]
            ye = np.einsum("cij,cj->ci", m, x[d])
            # fixed-order accumulation keeps the result bitwise reproducible
            y += np.bincount(d.ravel(), weights=ye.ravel(), minlength=n)
        return y

    def diagonal(self, n: int) -> np.ndarray:
        diag = np.einsum("cii->ci", self.matrices)[self.index]
        return np.bincount(self.dofs.ravel(), weights=diag.ravel(), minlength=n)

    def to_sparse(self, n: int, max_entries: int = 2**23) -> sp.csr_matrix:
        nd = self.dofs.shape[1]
        chunk = max(1, max_entries // (nd * nd))
        out = sp.csr_matrix((n, n))
        idx_t = np.int32 if n < 2**31 else np.int64
        for start in range(0, len(self.dofs), chunk):
            d = self.dofs[start:start + chunk].astype(idx_t)
            m = self.matrices[self.index[start:start + chunk]]
            rows = np.repeat(d, nd, axis=1).ravel()
            cols = np.tile(d, (1, nd)).ravel()
            out = out + sp.coo_matrix((m.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        return out


class FcmOperator:
    """Symmetric system operator; explicit sparse and matrix-free cell-wise views."""

    def __init__(self, n: int, blocks: Sequence[CellBlock]):
        self.n = int(n)
        self.blocks = list(blocks)
        self._sparse = None

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.n)
        for b in self.blocks:
            y += b.matvec(x, self.n)
        return y

    __matmul__ = matvec

    def diagonal(self) -> np.ndarray:
        return sum(b.diagonal(self.n) for b in self.blocks)

    def to_sparse(self) -> sp.csr_matrix:
        if self._sparse is None:
            out = sp.csr_matrix((self.n, self.n))
            for b in self.blocks:
                out = out + b.to_sparse(self.n)
            out.sum_duplicates()
            self._sparse = out.tocsr()
        return self._sparse

    def energy(self, u: np.ndarray) -> float:
        return float(u @ self.matvec(u))


def volume_block(mesh: CellMesh, table: VoxelKernelTable, cell_alpha: np.ndarray) -> CellBlock:
    """Indicator-weighted volume stiffness; identical voxel patterns share one matrix."""
    patterns, index = np.unique(cell_alpha, axis=0, return_inverse=True)
    mats = cell_stiffness(table, patterns)
    return CellBlock(mesh.cell_dofs, mats, index.ravel())


def _face_geometry(mesh: CellMesh, face: str, grid):
    """Boundary cells, face table and per-(cell, voxel face) indicator values."""
    axis, side = parse_face(face)
    ft = face_table(mesh, axis, side)
    cells = mesh.boundary_cells(face)
    alpha = mesh.cell_alphas(grid)[cells][:, ft.voxel]
    return axis, side, ft, cells, alpha


def _cell_origins(mesh: CellMesh, cells: np.ndarray) -> np.ndarray:
    mx, my, _ = mesh.cell_dims
    idx = np.stack([cells % mx, (cells // mx) % my, cells // (mx * my)], axis=1)
    return idx * mesh.cell_size


def penalty_terms(mesh: CellMesh, grid, penalty: PenaltyConfig, beta: float):
    """Cell block and load vector of beta * int alpha v.(u - u_hat) over the Dirichlet faces."""
    blocks, rhs = [], np.zeros(mesh.total_dofs)
    nm = mesh.n_modes_local
    for df in penalty.faces:
        _, _, ft, cells, alpha = _face_geometry(mesh, df.face, grid)
        mass = ft.mass                                    # (pos, nm, nm)
        scalar = beta * np.einsum("cp,pab->cab", alpha, mass)
        mats = np.zeros((len(cells), nm, 3, nm, 3))
        for c in df.components:
            mats[:, :, c, :, c] = scalar
        blocks.append(CellBlock(mesh.cell_dofs[cells], mats.reshape(len(cells), 3 * nm, 3 * nm),
                                np.arange(len(cells))))
        x = _cell_origins(mesh, cells)[:, None, None, :] + ft.local_x[None]
        uhat = _value_at(df.value, x)                     # (cells, pos, pts, 3)
        f = beta * np.einsum("cp,pg,pga,cpgk->cak", alpha, ft.weights, ft.N, uhat)
        comp_mask = np.zeros(3)
        comp_mask[list(df.components)] = 1.0
        f = (f * comp_mask).reshape(len(cells), -1)
        rhs += np.bincount(mesh.cell_dofs[cells].ravel(), weights=f.ravel(), minlength=mesh.total_dofs)
    return blocks, rhs


def traction_load(mesh: CellMesh, face: str, traction) -> np.ndarray:
    """int_face N . t dGamma over the whole box face (independent of alpha)."""
    axis, side = parse_face(face)
    ft = face_table(mesh, axis, side)
    cells = mesh.boundary_cells(face)
    x = _cell_origins(mesh, cells)[:, None, None, :] + ft.local_x[None]
    t = _value_at(traction, x)
    f = np.einsum("pg,pga,cpgk->cak", ft.weights, ft.N, t).reshape(len(cells), -1)
    return np.bincount(mesh.cell_dofs[cells].ravel(), weights=f.ravel(), minlength=mesh.total_dofs)


def body_force_load(mesh: CellMesh, table: VoxelKernelTable, cell_alpha: np.ndarray, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros(mesh.total_dofs)
    scalar = cell_alpha @ table.mode_integral             # (cells, nm)
    f = (scalar[:, :, None] * b).reshape(mesh.n_cells, -1)
    return np.bincount(mesh.cell_dofs.ravel(), weights=f.ravel(), minlength=mesh.total_dofs)


@dataclass
class AssembledSystem:
    operator: FcmOperator
    rhs: np.ndarray
    mesh: CellMesh
    table: VoxelKernelTable
    beta: float | None = None
    info: dict = field(default_factory=dict)


def assemble_system(mesh: CellMesh, grid, mat, penalty: PenaltyConfig | None = None,
                    loads: LoadSpec | None = None, table: VoxelKernelTable | None = None,
                    ) -> AssembledSystem:
    if tuple(grid.dims) != mesh.grid_dims:
        raise GeometryError(f"grid dims {grid.dims} do not match mesh embedding {mesh.grid_dims}")
    penalty = penalty or PenaltyConfig()
    loads = loads or LoadSpec()
    table = table or precompute_voxel_kernels(mesh, mat)
    cell_alpha = mesh.cell_alphas(grid)
    blocks = [volume_block(mesh, table, cell_alpha)]
    rhs = np.zeros(mesh.total_dofs)
    beta = None
    if penalty.faces:
        beta = penalty.beta if penalty.beta is not None else default_beta(mesh, mat)
        pblocks, prhs = penalty_terms(mesh, grid, penalty, beta)
        blocks += pblocks
        rhs += prhs
    else:
        warnings.warn("no Dirichlet data: the system is singular up to rigid-body modes",
                      SingularSystemWarning, stacklevel=2)
    for tf in loads.tractions:
        rhs += traction_load(mesh, tf.face, tf.traction)
    rhs += body_force_load(mesh, table, cell_alpha, loads.body_force)
    op = FcmOperator(mesh.total_dofs, blocks)
    return AssembledSystem(op, rhs, mesh, table, beta)
