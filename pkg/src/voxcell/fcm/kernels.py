"""Voxel-level pre-integration of cell operators.

For a fixed degree, voxel block and voxel spacing every cell has the same
layout, so the integrals over each voxel position of the reference cell are
computed once and any cell matrix is an indicator-weighted sum of them.
Each voxel is integrated with a (p+1)^3 Gauss rule, which is exact for the
polynomial integrand on a voxel with constant coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import ShapeBasis, gauss_rule


def axis_tables(basis: ShapeBasis, n_vox: int, h: float, n_gauss: int):
    """Per-voxel 1D values, physical derivatives, physical weights and local coordinates.

    Shapes: (n_vox, n_gauss, p+1) for values/derivatives, (n_vox, n_gauss) otherwise.
    """
    g, w = gauss_rule(n_gauss)
    i = np.arange(n_vox)[:, None]
    xi = -1.0 + (2.0 * i + 1.0 + g[None, :]) / n_vox
    vals, ders = basis.eval(np.clip(xi, -1.0, 1.0))
    ders = ders * (2.0 / h)
    weights = np.broadcast_to(w * (h / n_vox) / 2.0, xi.shape).copy()
    x = (xi + 1.0) * h / 2.0
    return vals, ders, weights, x


def _gradients(tabs, i, j, k):
    """Mode gradients (npts, nm, 3) and weights (npts,) in voxel (i, j, k)."""
    (vx, dx, wx, _), (vy, dy, wy, _), (vz, dz, wz, _) = tabs
    X, dX, Y, dY, Z, dZ = vx[i], dx[i], vy[j], dy[j], vz[k], dz[k]
    # points ordered (gz, gy, gx), modes (c, b, a) -> l = a + q (b + q c)
    gx = np.einsum("xa,yb,zc->zyxcba", dX, Y, Z)
    gy = np.einsum("xa,yb,zc->zyxcba", X, dY, Z)
    gz = np.einsum("xa,yb,zc->zyxcba", X, Y, dZ)
    npts = X.shape[0] * Y.shape[0] * Z.shape[0]
    grad = np.stack([gx, gy, gz], axis=-1).reshape(npts, -1, 3)
    w = np.einsum("x,y,z->zyx", wx[i], wy[j], wz[k]).ravel()
    return grad, w


def _values(tabs, i, j, k):
    (vx, _, wx, _), (vy, _, wy, _), (vz, _, wz, _) = tabs
    N = np.einsum("xa,yb,zc->zyxcba", vx[i], vy[j], vz[k])
    npts = vx.shape[1] * vy.shape[1] * vz.shape[1]
    w = np.einsum("x,y,z->zyx", wx[i], wy[j], wz[k]).ravel()
    return N.reshape(npts, -1), w


def strain_operator(grad: np.ndarray) -> np.ndarray:
    """B matrices (npts, 6, 3 nm) mapping interleaved DOFs to Voigt strain."""
    npts, nm, _ = grad.shape
    B = np.zeros((npts, 6, nm, 3))
    B[:, 0, :, 0] = grad[:, :, 0]
    B[:, 1, :, 1] = grad[:, :, 1]
    B[:, 2, :, 2] = grad[:, :, 2]
    B[:, 3, :, 1] = grad[:, :, 2]
    B[:, 3, :, 2] = grad[:, :, 1]
    B[:, 4, :, 0] = grad[:, :, 2]
    B[:, 4, :, 2] = grad[:, :, 0]
    B[:, 5, :, 0] = grad[:, :, 1]
    B[:, 5, :, 1] = grad[:, :, 0]
    return B.reshape(npts, 6, 3 * nm)


def stiffness_from_gradients(grad: np.ndarray, w: np.ndarray, C: np.ndarray) -> np.ndarray:
    """sum_g w_g B_g^T C B_g."""
    B = strain_operator(grad)
    CB = np.einsum("ij,gjk->gik", C, B)
    ndof = B.shape[2]
    return (B * w[:, None, None]).reshape(-1, ndof).T @ CB.reshape(-1, ndof)


@dataclass(frozen=True, eq=False)
class VoxelKernelTable:
    degree: int
    voxels_per_cell: tuple[int, int, int]
    cell_size: tuple[float, float, float]
    C: np.ndarray
    K: np.ndarray            # (n_vox, ndof, ndof) stiffness per voxel position, alpha = 1
    strain_avg: np.ndarray   # (n_vox, 6, ndof) integral of B over the voxel
    stress_avg: np.ndarray   # (n_vox, 6, ndof) integral of C B over the voxel
    mode_integral: np.ndarray  # (n_vox, nm) integral of each scalar mode
    voxel_volume: float

    @property
    def n_vox(self) -> int:
        return self.K.shape[0]

    @property
    def ndof(self) -> int:
        return self.K.shape[1]

    @property
    def full_cell(self) -> np.ndarray:
        return self.K.sum(axis=0)


def precompute_voxel_kernels(mesh, mat, n_gauss: int | None = None) -> VoxelKernelTable:
    C = np.asarray(getattr(mat, "C", mat), dtype=float)
    basis = mesh.basis
    n_gauss = basis.degree + 1 if n_gauss is None else int(n_gauss)
    h = mesh.cell_size
    vpc = mesh.voxels_per_cell
    tabs = [axis_tables(basis, vpc[d], h[d], n_gauss) for d in range(3)]
    nm = mesh.n_modes_local
    n_vox = mesh.n_voxels_per_cell
    K = np.empty((n_vox, 3 * nm, 3 * nm))
    H = np.empty((n_vox, 6, 3 * nm))
    Nint = np.empty((n_vox, nm))
    v = 0
    for k in range(vpc[2]):
        for j in range(vpc[1]):
            for i in range(vpc[0]):
                grad, w = _gradients(tabs, i, j, k)
                K[v] = stiffness_from_gradients(grad, w, C)
                H[v] = np.einsum("g,gij->ij", w, strain_operator(grad))
                N, wn = _values(tabs, i, j, k)
                Nint[v] = wn @ N
                v += 1
    K = 0.5 * (K + K.transpose(0, 2, 1))
    G = np.einsum("ij,vjk->vik", C, H)
    for arr in (K, H, G, Nint):
        arr.flags.writeable = False
    return VoxelKernelTable(
        degree=basis.degree,
        voxels_per_cell=vpc,
        cell_size=tuple(h),
        C=C,
        K=K,
        strain_avg=H,
        stress_avg=G,
        mode_integral=Nint,
        voxel_volume=float(np.prod(mesh.spacing)),
    )


def cell_stiffness(table: VoxelKernelTable, alphas) -> np.ndarray:
    """K_cell = sum_v alpha_v K_v for one cell (1D alphas) or a batch (2D)."""
    a = np.asarray(alphas, dtype=float)
    if a.shape[-1] != table.n_vox:
        raise ValueError(f"expected {table.n_vox} voxel alphas, got {a.shape[-1]}")
    flat = a @ table.K.reshape(table.n_vox, -1)
    return flat.reshape(a.shape[:-1] + (table.ndof, table.ndof))


@dataclass(frozen=True, eq=False)
class FaceTable:
    """Face quadrature on one side of the reference cell, per voxel face position."""

    axis: int
    side: int
    N: np.ndarray         # (n_pos, npts, nm) mode values
    weights: np.ndarray   # (n_pos, npts) physical area weights
    local_x: np.ndarray   # (n_pos, npts, 3) coordinates relative to the cell origin
    voxel: np.ndarray     # (n_pos,) voxel index within the cell touching the face

    @property
    def mass(self) -> np.ndarray:
        """(n_pos, nm, nm) scalar face mass per voxel face."""
        return np.einsum("pg,pga,pgb->pab", self.weights, self.N, self.N)


def face_table(mesh, axis: int, side: int, n_gauss: int | None = None) -> FaceTable:
    basis = mesh.basis
    n_gauss = basis.degree + 1 if n_gauss is None else int(n_gauss)
    h = mesh.cell_size
    vpc = mesh.voxels_per_cell
    tabs = []
    for d in range(3):
        if d == axis:
            vals, _ = basis.eval(np.array([float(2 * side - 1)]))
            tabs.append((vals[None], np.ones((1, 1)), np.full((1, 1), side * h[d]),
                         np.array([side * (vpc[d] - 1)])))
        else:
            vals, _, w, x = axis_tables(basis, vpc[d], h[d], n_gauss)
            tabs.append((vals, w, x, np.arange(vpc[d])))
    (vx, wx, xx, ix), (vy, wy, xy, iy), (vz, wz, xz, iz) = tabs
    n_pos = len(ix) * len(iy) * len(iz)
    nm = mesh.n_modes_local
    npts = vx.shape[1] * vy.shape[1] * vz.shape[1]
    N = np.empty((n_pos, npts, nm))
    W = np.empty((n_pos, npts))
    X = np.empty((n_pos, npts, 3))
    vox = np.empty(n_pos, dtype=np.int64)
    pos = 0
    for k in range(len(iz)):
        for j in range(len(iy)):
            for i in range(len(ix)):
                N[pos] = np.einsum("xa,yb,zc->zyxcba", vx[i], vy[j], vz[k]).reshape(npts, nm)
                W[pos] = np.einsum("x,y,z->zyx", wx[i], wy[j], wz[k]).ravel()
                gx, gy, gz = np.meshgrid(xx[i], xy[j], xz[k], indexing="ij")
                X[pos] = np.stack([gx.transpose(2, 1, 0).ravel(), gy.transpose(2, 1, 0).ravel(),
                                   gz.transpose(2, 1, 0).ravel()], axis=1)
                vox[pos] = ix[i] + vpc[0] * (iy[j] + vpc[1] * iz[k])
                pos += 1
    return FaceTable(axis, side, N, W, X, vox)
