"""First-order homogenization of voxel RVEs.

Apparent stiffness tensors under periodic (PBC), kinematic uniform (KUBC)
and static uniform (SUBC) boundary conditions, the Hill-Mandel energy check,
the KUBC >= PBC >= SUBC ordering check and ensemble statistics of
directional Young's moduli.

All averages are taken over the full embedding box (voids included).  Void
voxels behave as a very soft phase, so strains are defined everywhere and
averaged without weighting, while stresses carry the indicator through
sigma = alpha C eps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, GeometryError, RankError
from .fcm.assembly import FcmOperator, traction_load, volume_block
from .fcm.kernels import VoxelKernelTable, precompute_voxel_kernels
from .fcm.material import voigt_to_tensor
from .fcm.mesh import CellMesh
from .solver import Solver, SolverConfig

log = logging.getLogger(__name__)

BC_KINDS = ("pbc", "kubc", "subc")


@dataclass
class ConstrainedSystem:
    """u = offset + P @ u_reduced, loaded by the external vector ``load``."""

    kind: str
    P: sp.csr_matrix
    offset: np.ndarray
    load: np.ndarray
    rigid_free: bool = False

    @property
    def n_reduced(self) -> int:
        return self.P.shape[1]

    def reduce(self, K, K_reduced=None):
        """Reduced matrix P^T K P (reused if given) and right-hand side."""
        Ks = K.to_sparse() if hasattr(K, "to_sparse") else K
        A = K_reduced if K_reduced is not None else (self.P.T @ Ks @ self.P).tocsr()
        b = self.P.T @ (self.load - Ks @ self.offset)
        return A, b

    def expand(self, u_reduced: np.ndarray) -> np.ndarray:
        return self.offset + self.P @ u_reduced

    def restricted(self, active: np.ndarray) -> "ConstrainedSystem":
        """Drop reduced unknowns that touch no active full DOF (kept at zero)."""
        touched = np.asarray(self.P[active].sum(axis=0)).ravel() > 0
        if touched.all():
            return self
        return ConstrainedSystem(self.kind, self.P[:, np.flatnonzero(touched)].tocsr(), self.offset,
                                 self.load, self.rigid_free)


VOID_DROP_LIMIT = 1e-6


def material_dofs(mesh: CellMesh, grid) -> np.ndarray:
    """Mask of DOFs supported by at least one cell containing material.

    DOFs living only in all-void cells carry stiffness of order alpha_void and
    are inert; dropping them changes C* at that order and removes the worst
    conditioned part of the system.  The eight corner cells always stay so the
    pinned corner remains attached.  Nothing is dropped for a grid without
    material or when the void phase is not negligible (alpha_void > 1e-6).
    """
    active = np.ones(mesh.total_dofs, dtype=bool)
    filled = mesh.cell_alphas(grid).max(axis=1) >= 1.0
    if grid.alpha_void > VOID_DROP_LIMIT or not filled.any():
        return active
    mx, my, mz = mesh.cell_dims
    for cx in {0, mx - 1}:
        for cy in {0, my - 1}:
            for cz in {0, mz - 1}:
                filled[mesh.cell_index(cx, cy, cz)] = True
    active[:] = False
    active[mesh.cell_dofs[filled].ravel()] = True
    return active


def _selection(n_full: int, keep: np.ndarray) -> sp.csr_matrix:
    keep = np.flatnonzero(keep)
    return sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))), shape=(n_full, len(keep)))


def pbc_projection(mesh: CellMesh) -> sp.csr_matrix:
    """Periodic DOF map with the corner vertex (all 8 corners) eliminated."""
    slots = mesh.lattice_indices()
    period = [m * mesh.degree for m in mesh.cell_dims]
    r = [s % P for s, P in zip(slots, period)]
    red_scalar = r[0] + period[0] * (r[1] + period[1] * r[2])
    n_red_scalar = int(np.prod(period))
    full = np.arange(mesh.total_dofs)
    red = 3 * red_scalar[full // 3] + full % 3
    # reduced scalar 0 is the corner: its three displacement DOFs are pinned
    keep = red >= 3
    rows = full[keep]
    cols = red[keep] - 3
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.total_dofs, 3 * n_red_scalar - 3))


def paired_face_modes(mesh: CellMesh) -> int:
    """Scalar modes that are slaves of a periodic partner."""
    slots = mesh.lattice_indices()
    slave = np.zeros(mesh.n_scalar, dtype=bool)
    for s, m in zip(slots, mesh.cell_dims):
        slave |= s == m * mesh.degree
    return int(np.count_nonzero(slave))


def strain_tensor(eps_voigt) -> np.ndarray:
    eps = np.asarray(eps_voigt, dtype=float)
    if eps.shape != (6,) or not np.all(np.isfinite(eps)):
        raise ValueError("macroscopic strain must be a finite Voigt 6-vector")
    return voigt_to_tensor(eps, engineering_shear=True)


def constrain_pbc(mesh: CellMesh, eps_M) -> ConstrainedSystem:
    """u(x+) - u(x-) = eps_M dx through a periodic fluctuation on the affine field.

    Paired boundary modes are identified by construction (lattice slots modulo
    the period), which equates the fluctuation on opposite faces for linear
    and higher-order modes alike; the affine part lives in the vertex modes.
    """
    P = pbc_projection(mesh)
    if P.shape[1] != mesh.total_dofs - 3 * paired_face_modes(mesh) - 3:
        raise GeometryError("periodic face layouts do not match")
    offset = mesh.affine_field(strain_tensor(eps_M))
    return ConstrainedSystem("pbc", P, offset, np.zeros(mesh.total_dofs))


def constrain_kubc(mesh: CellMesh, eps_M) -> ConstrainedSystem:
    """u = eps_M x on the whole boundary, eliminated exactly.

    Boundary vertex modes take the affine values and higher boundary modes are
    zero, which reproduces the affine trace exactly.
    """
    slots = mesh.lattice_indices()
    on_boundary = np.zeros(mesh.n_scalar, dtype=bool)
    for s, n in zip(slots, mesh.lattice_shape):
        on_boundary |= (s == 0) | (s == n - 1)
    keep = np.repeat(~on_boundary, 3)
    offset = mesh.affine_field(strain_tensor(eps_M))
    return ConstrainedSystem("kubc", _selection(mesh.total_dofs, keep), offset, np.zeros(mesh.total_dofs))


def subc_pins(mesh: CellMesh) -> np.ndarray:
    """3-2-1 support on three corners; removes rigid motions without reactions."""
    nx, ny, _ = mesh.lattice_shape
    c0 = mesh.mode_index(0, 0, 0)
    cx = mesh.mode_index(nx - 1, 0, 0)
    cy = mesh.mode_index(0, ny - 1, 0)
    return np.array([3 * c0, 3 * c0 + 1, 3 * c0 + 2, 3 * cx + 1, 3 * cx + 2, 3 * cy + 2])


def constrain_subc(mesh: CellMesh, sigma_M) -> ConstrainedSystem:
    """Uniform traction t = sigma_M n on every face of the box.

    A uniform stress is self-equilibrated on a closed boundary, so the 3-2-1
    support carries no reaction.  The rigid part of the solution is removed
    afterwards (:func:`remove_rigid_motion`) so that the mean translation and
    rotation vanish.
    """
    sig = np.asarray(sigma_M, dtype=float)
    if sig.shape != (6,):
        raise ValueError("macroscopic stress must be a Voigt 6-vector")
    S = voigt_to_tensor(sig, engineering_shear=False)
    load = np.zeros(mesh.total_dofs)
    for axis in range(3):
        for sign, face in ((-1.0, "-"), (1.0, "+")):
            t = sign * S[:, axis]
            if np.any(t):
                load += traction_load(mesh, "xyz"[axis] + face, t)
    keep = np.ones(mesh.total_dofs, dtype=bool)
    keep[subc_pins(mesh)] = False
    return ConstrainedSystem("subc", _selection(mesh.total_dofs, keep), np.zeros(mesh.total_dofs), load,
                             rigid_free=True)


def remove_rigid_motion(mesh: CellMesh, u: np.ndarray) -> np.ndarray:
    R = mesh.rigid_modes()
    coef = np.linalg.solve(R.T @ R, R.T @ u)
    return u - R @ coef


def _cell_values(mesh: CellMesh, solution: np.ndarray) -> np.ndarray:
    return np.asarray(solution)[mesh.cell_dofs]


def _table(mesh, mat, table):
    return table if table is not None else precompute_voxel_kernels(mesh, mat)


def average_stress(mesh: CellMesh, grid, mat, solution, table: VoxelKernelTable | None = None,
                   chunk: int = 4096) -> np.ndarray:
    """<sigma> = 1/|Omega| sum_cells sum_voxels alpha int C B u (Voigt)."""
    table = _table(mesh, mat, table)
    alpha = mesh.cell_alphas(grid)
    total = np.zeros(6)
    for s in range(0, mesh.n_cells, chunk):
        ue = _cell_values(mesh, solution)[s:s + chunk]
        per_voxel = np.einsum("vid,cd->cvi", table.stress_avg, ue)
        total += np.einsum("cv,cvi->i", alpha[s:s + chunk], per_voxel)
    return total / mesh.volume


def average_strain(mesh: CellMesh, solution, table: VoxelKernelTable | None = None, mat=None) -> np.ndarray:
    """<eps> = 1/|Omega| int_Omega eps dOmega over the whole box (Voigt, engineering shear)."""
    if table is None:
        table = precompute_voxel_kernels(mesh, mat if mat is not None else np.eye(6))
    H = table.strain_avg.sum(axis=0)
    return (_cell_values(mesh, solution) @ H.T).sum(axis=0) / mesh.volume


def average_energy_density(mesh: CellMesh, grid, mat, solution, table: VoxelKernelTable | None = None,
                           chunk: int = 512) -> float:
    """1/|Omega| int 1/2 sigma:eps, summed voxel by voxel from the pre-integrated kernels."""
    table = _table(mesh, mat, table)
    alpha = mesh.cell_alphas(grid)
    ue_all = _cell_values(mesh, solution)
    nv, nd = table.n_vox, table.ndof
    Kflat = table.K.reshape(nv * nd, nd)
    total = 0.0
    for s in range(0, mesh.n_cells, chunk):
        ue = ue_all[s:s + chunk]
        Ku = (Kflat @ ue.T).reshape(nv, nd, -1)          # K_v u_c
        e = np.einsum("vdc,cd->cv", Ku, ue)               # u_c^T K_v u_c
        total += float(np.sum(alpha[s:s + chunk] * e))
    return 0.5 * total / mesh.volume


def hill_mandel_residual(mesh: CellMesh, grid, mat, solution, eps_M=None,
                         table: VoxelKernelTable | None = None) -> float:
    """|1/2 <sigma>:<eps> - <1/2 sigma:eps>| / <1/2 sigma:eps>; NaN for a zero-energy state."""
    table = _table(mesh, mat, table)
    w = average_energy_density(mesh, grid, mat, solution, table)
    if not w > 0.0:
        return math.nan
    sig = average_stress(mesh, grid, mat, solution, table)
    eps = average_strain(mesh, solution, table)
    return abs(0.5 * float(sig @ eps) - w) / w


@dataclass
class EffectiveTensor:
    C_star: np.ndarray
    bc_kind: str
    rve_id: str | int | None = None
    reports: list = field(default_factory=list)
    asymmetry: float = 0.0
    hill_mandel: list = field(default_factory=list)
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def E_dir(self) -> tuple[float, float, float]:
        return directional_modulus(self.C_star)

    def to_dict(self) -> dict:
        hm = [h for h in self.hill_mandel if h is not None and not math.isnan(h)]
        try:
            e_dir = [float(v) for v in self.E_dir]
        except RankError:
            e_dir = None
        return {
            "bc": self.bc_kind,
            "C_star": [[float(v) for v in row] for row in self.C_star],
            "E_dir": e_dir,
            "hill_mandel_residual": max(hm) if hm else None,
            "solver": [r.to_dict() for r in self.reports],
        }


class RVE:
    """Discretized RVE: mesh, pre-integrated kernels and the volume operator.

    With ``drop_void_dofs`` the kinematic cases (PBC, KUBC) solve only for
    DOFs touching material cells, see :func:`material_dofs`.
    """

    def __init__(self, grid, mat, voxels_per_cell=(1, 1, 1), degree: int = 1,
                 table: VoxelKernelTable | None = None, drop_void_dofs: bool = True):
        self.grid = grid
        self.mat = mat
        self.mesh = CellMesh.for_grid(grid, voxels_per_cell, degree)
        self.table = _table(self.mesh, mat, table)
        self.operator = FcmOperator(self.mesh.total_dofs,
                                    [volume_block(self.mesh, self.table, self.mesh.cell_alphas(grid))])
        self.active = material_dofs(self.mesh, grid) if drop_void_dofs else None

    @property
    def K(self) -> sp.csr_matrix:
        return self.operator.to_sparse()


def _constrain(mesh, bc, load_vec, active=None):
    if bc == "pbc":
        cs = constrain_pbc(mesh, load_vec)
        return cs if active is None else cs.restricted(active)
    if bc == "kubc":
        cs = constrain_kubc(mesh, load_vec)
        return cs if active is None else cs.restricted(active)
    if bc == "subc":
        # tractions act on void boundary too, so every DOF stays
        return constrain_subc(mesh, load_vec)
    raise ValueError(f"unknown boundary condition {bc!r}; expected one of {BC_KINDS}")


def solve_load_case(rve: RVE, bc: str, load_vec, solver: Solver | None = None,
                    solver_cfg: SolverConfig | None = None, K_reduced=None):
    """Solve one macroscopic load case; returns (full solution, report, reduced matrix)."""
    cs = _constrain(rve.mesh, bc, load_vec, rve.active)
    A, b = cs.reduce(rve.K, K_reduced)
    solver = solver or Solver(A, solver_cfg or SolverConfig(method="direct"))
    ur, report = solver(b)
    u = cs.expand(ur)
    if cs.rigid_free:
        u = remove_rigid_motion(rve.mesh, u)
    return u, report, A


def effective_tensor(rve: RVE, bc: str = "pbc", solver_cfg: SolverConfig | None = None,
                     rve_id=None, check_energy: bool = True) -> EffectiveTensor:
    """Apparent stiffness from six unit load cases (Voigt basis)."""
    bc = bc.lower()
    if bc not in BC_KINDS:
        raise ValueError(f"unknown boundary condition {bc!r}; expected one of {BC_KINDS}")
    cfg = solver_cfg or SolverConfig(method="direct")
    mesh, grid, mat, table = rve.mesh, rve.grid, rve.mat, rve.table
    cs0 = _constrain(mesh, bc, np.zeros(6), rve.active)
    A, _ = cs0.reduce(rve.K)
    solver = Solver(A, cfg)
    sig_cols, eps_cols, reports, hm = [], [], [], []
    for j in range(6):
        e = np.zeros(6)
        e[j] = 1.0
        u, report, _ = solve_load_case(rve, bc, e, solver=solver, K_reduced=A)
        reports.append(report)
        if not report.converged:
            raise ConvergenceError(f"solver stopped at residual {report.final_residual:.3e}", case=j,
                                   report=report)
        sig_cols.append(average_stress(mesh, grid, mat, u, table))
        eps_cols.append(average_strain(mesh, u, table))
        if check_energy and bc in ("pbc", "kubc"):
            hm.append(hill_mandel_residual(mesh, grid, mat, u, e, table))
        log.debug("%s case %d: %s", bc, j, report)
    S_cols = np.column_stack(sig_cols)
    E_cols = np.column_stack(eps_cols)
    if bc == "subc":
        raw = S_cols @ np.linalg.inv(E_cols)
    else:
        raw = S_cols
    C = 0.5 * (raw + raw.T)
    norm = np.linalg.norm(C)
    asym = float(np.linalg.norm(raw - raw.T) / norm) if norm > 0 else 0.0
    return EffectiveTensor(C, bc, rve_id, reports, asym, hm, raw)


def homogenize(grid, mat, bc: str = "pbc", voxels_per_cell=(1, 1, 1), degree: int = 1,
               solver_cfg: SolverConfig | None = None, rve_id=None,
               drop_void_dofs: bool = True) -> EffectiveTensor:
    rve = RVE(grid, mat, voxels_per_cell, degree, drop_void_dofs=drop_void_dofs)
    return effective_tensor(rve, bc, solver_cfg, rve_id)


def directional_modulus(C_star) -> tuple[float, float, float]:
    """E_i = 1 / S_ii with S the compliance (C*)^-1."""
    C = np.asarray(C_star, dtype=float)
    s = np.linalg.svd(C, compute_uv=False)
    if s[-1] <= 6 * np.finfo(float).eps * s[0]:
        raise RankError("effective tensor is singular")
    S = np.linalg.inv(C)
    return tuple(float(1.0 / S[i, i]) for i in range(3))


@dataclass
class EnsembleStats:
    moduli: np.ndarray              # (n, 3) E_x, E_y, E_z per successful cell
    mean: np.ndarray
    std: np.ndarray
    n: int
    tensors: list = field(default_factory=list, repr=False)
    failures: list = field(default_factory=list)
    single_sample: bool = False

    @property
    def cv(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.std / self.mean

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "E_cells": [[float(v) for v in row] for row in self.moduli],
            "E_mean": [float(v) for v in self.mean],
            "E_std": [float(v) for v in self.std],
            "single_sample": self.single_sample,
            "failures": [{"index": i, "error": msg} for i, msg in self.failures],
            "tensors": [t.to_dict() for t in self.tensors],
        }


def ensemble_stats(moduli) -> tuple[np.ndarray, np.ndarray]:
    E = np.asarray(moduli, dtype=float).reshape(-1, 3)
    if len(E) == 0:
        return np.full(3, np.nan), np.full(3, np.nan)
    mean = E.mean(axis=0)
    std = E.std(axis=0, ddof=1) if len(E) > 1 else np.zeros(3)
    return mean, std


def ensemble_homogenize(cells, mat, bc: str = "pbc", voxels_per_cell=(1, 1, 1), degree: int = 1,
                        solver_cfg: SolverConfig | None = None) -> EnsembleStats:
    """Homogenize every cell, then average the directional moduli (sample std, ddof=1)."""
    tensors, moduli, failures = [], [], []
    for i, cell in enumerate(cells):
        try:
            et = homogenize(cell, mat, bc, voxels_per_cell, degree, solver_cfg, rve_id=i)
            E = et.E_dir
        except Exception as exc:  # keep going: partial results are part of the contract
            log.warning("cell %d failed: %s", i, exc)
            failures.append((i, str(exc)))
            continue
        tensors.append(et)
        moduli.append(E)
    mean, std = ensemble_stats(moduli)
    return EnsembleStats(np.asarray(moduli, dtype=float).reshape(-1, 3), mean, std, len(moduli),
                         tensors, failures, single_sample=len(moduli) == 1)


@dataclass
class OrderingReport:
    passed: bool
    min_eig_kubc_pbc: float
    min_eig_pbc_subc: float
    threshold: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_eig_kubc_minus_pbc": self.min_eig_kubc_pbc,
                "min_eig_pbc_minus_subc": self.min_eig_pbc_subc, "threshold": self.threshold}


def bound_ordering_check(C_kubc, C_pbc, C_subc, tol: float = 1e-3) -> OrderingReport:
    """KUBC >= PBC >= SUBC in the PSD sense, up to -tol * ||C_pbc||."""
    def sym(C):
        C = np.asarray(C, dtype=float)
        return 0.5 * (C + C.T)

    Ck, Cp, Cs = sym(C_kubc), sym(C_pbc), sym(C_subc)
    e1 = float(np.linalg.eigvalsh(Ck - Cp).min())
    e2 = float(np.linalg.eigvalsh(Cp - Cs).min())
    thr = -tol * float(np.linalg.norm(Cp, 2))
    return OrderingReport(e1 >= thr and e2 >= thr, e1, e2, thr)
