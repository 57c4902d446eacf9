"""Point evaluation of displacement, strain and stress."""

from __future__ import annotations

import numpy as np

from ..errors import GeometryError
from .kernels import strain_operator
from .mesh import CellMesh


def locate(mesh: CellMesh, points: np.ndarray, tol: float = 1e-12):
    """Containing cell, reference coordinates and containing voxel of each point."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    ext = mesh.extent
    slack = tol * np.max(ext)
    if np.any(x < -slack) or np.any(x > ext + slack):
        raise GeometryError("point outside the mesh domain")
    x = np.clip(x, 0.0, ext)
    h = mesh.cell_size
    m = np.array(mesh.cell_dims)
    cidx = np.minimum((x / h).astype(np.int64), m - 1)
    xi = np.clip(2.0 * (x - cidx * h) / h - 1.0, -1.0, 1.0)
    vidx = np.minimum((x / np.array(mesh.spacing)).astype(np.int64), np.array(mesh.grid_dims) - 1)
    cell = mesh.cell_index(cidx[:, 0], cidx[:, 1], cidx[:, 2])
    return cell, xi, vidx


def shape_data(mesh: CellMesh, xi: np.ndarray):
    """Values (n, nm) and physical gradients (n, nm, 3) of the cell modes at ``xi``."""
    basis = mesh.basis
    h = mesh.cell_size
    vals, ders = [], []
    for d in range(3):
        v, dv = basis.eval(xi[:, d])
        vals.append(v)
        ders.append(dv * 2.0 / h[d])
    X, Y, Z = vals
    dX, dY, dZ = ders
    n = xi.shape[0]
    N = np.einsum("na,nb,nc->ncba", X, Y, Z).reshape(n, -1)
    grad = np.stack([
        np.einsum("na,nb,nc->ncba", dX, Y, Z).reshape(n, -1),
        np.einsum("na,nb,nc->ncba", X, dY, Z).reshape(n, -1),
        np.einsum("na,nb,nc->ncba", X, Y, dZ).reshape(n, -1),
    ], axis=-1)
    return N, grad


def evaluate_fields(mesh: CellMesh, grid, mat, solution: np.ndarray, points, chunk: int = 20000):
    """Displacement (n, 3), Voigt strain (n, 6) and stress alpha*C*eps (n, 6) at points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = np.asarray(getattr(mat, "C", mat))
    u_out = np.empty((len(pts), 3))
    e_out = np.empty((len(pts), 6))
    s_out = np.empty((len(pts), 6))
    alpha = grid.alpha if grid is not None else None
    for start in range(0, len(pts), chunk):
        sl = slice(start, start + chunk)
        cell, xi, vidx = locate(mesh, pts[sl])
        N, grad = shape_data(mesh, xi)
        ue = solution[mesh.cell_dofs[cell]]                 # (n, 3 nm)
        u_out[sl] = np.einsum("na,nak->nk", N, ue.reshape(len(cell), -1, 3))
        B = strain_operator(grad)
        eps = np.einsum("nij,nj->ni", B, ue)
        a = alpha[vidx[:, 0], vidx[:, 1], vidx[:, 2]] if alpha is not None else 1.0
        e_out[sl] = eps
        s_out[sl] = (eps @ C.T) * np.reshape(a, (-1, 1))
    return u_out, e_out, s_out


def voxel_centers(grid) -> np.ndarray:
    """Voxel centres in x-fastest order, shape (n_voxels, 3)."""
    nx, ny, nz = grid.dims
    s = np.asarray(grid.spacing)
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return (np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1) + 0.5) * s
